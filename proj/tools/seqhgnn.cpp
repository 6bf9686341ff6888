#include <iostream>

#include "seqhgnn/cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return seqhgnn::cli::run(args, std::cout, std::cerr);
}
