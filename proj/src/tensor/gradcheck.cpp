#include "seqhgnn/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "seqhgnn/errors.hpp"

namespace seqhgnn {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

template <typename Real>
Real evaluate(const ScalarFn<Real>& f, const std::vector<Tensor<Real>>& params) {
  Tape<Real> tape;
  std::vector<Var<Real>> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).value().item();
}

}  // namespace

template <typename Real>
FiniteDiffResult finite_diff_check(const ScalarFn<Real>& f, const std::vector<Tensor<Real>>& params, Real h) {
  const Real base = evaluate(f, params);
  if (evaluate(f, params) != base) throw Error("finite_diff_check: function is not deterministic");

  Tape<Real> tape;
  std::vector<Var<Real>> vars;
  for (const auto& p : params) vars.push_back(tape.variable(p));
  auto loss = f(tape, vars);
  tape.backward(loss);

  FiniteDiffResult result;
  result.per_param.assign(params.size(), 0.0);
  auto work = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& analytic = vars[p].grad();
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const Real x = params[p][i];
      work[p][i] = x + h;
      const Real up = evaluate(f, work);
      work[p][i] = x - h;
      const Real down = evaluate(f, work);
      work[p][i] = x;
      const double numeric = static_cast<double>((up - down) / (Real(2) * h));
      const double err = relative_error(static_cast<double>(analytic[i]), numeric);
      result.per_param[p] = std::max(result.per_param[p], err);
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p;
        result.worst_index = i;
      }
    }
  }
  return result;
}

template FiniteDiffResult finite_diff_check(const ScalarFn<float>&, const std::vector<Tensor<float>>&, float);
template FiniteDiffResult finite_diff_check(const ScalarFn<double>&, const std::vector<Tensor<double>>&, double);
template FiniteDiffResult finite_diff_check(const ScalarFn<long double>&, const std::vector<Tensor<long double>>&,
                                            long double);

}  // namespace seqhgnn
