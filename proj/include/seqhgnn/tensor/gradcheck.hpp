#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "seqhgnn/tensor/tape.hpp"

namespace seqhgnn {

struct FiniteDiffResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::vector<double> per_param;  // worst coordinate per parameter tensor
};

/// |a - b| / max(1e-8, |a| + |b|)
double relative_error(double analytic, double numeric);

template <typename Real>
using ScalarFn = std::function<Var<Real>(Tape<Real>&, std::span<const Var<Real>>)>;

/// Compares reverse-mode gradients of `f` against central differences with
/// step `h`, one coordinate at a time. `f` is evaluated twice at the base
/// point first; any difference raises Error (non-deterministic f).
template <typename Real>
FiniteDiffResult finite_diff_check(const ScalarFn<Real>& f, const std::vector<Tensor<Real>>& params,
                                   Real h = Real(1e-5));

}  // namespace seqhgnn
