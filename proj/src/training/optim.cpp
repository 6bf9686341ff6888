#include <cmath>
#include <numbers>

#include "seqhgnn/errors.hpp"
#include "seqhgnn/training/training.hpp"

namespace seqhgnn {

template <typename Real>
void AdamW<Real>::step(ParamStore<Real>& store, double lr) {
  auto& params = store.all();
  for (const auto& p : params) {
    if (p.trainable && !p.grad.all_finite()) throw NonFiniteError("non-finite gradient in parameter " + p.name);
  }
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.push_back(Tensor<Real>::zeros(p.value.shape()));
      v_.push_back(Tensor<Real>::zeros(p.value.shape()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const Real decay = static_cast<Real>(1.0 - lr * weight_decay_);
  const Real step_size = static_cast<Real>(lr / bc1);
  const Real sqrt_bc2 = static_cast<Real>(std::sqrt(bc2));
  const Real b1 = static_cast<Real>(beta1_), b2 = static_cast<Real>(beta2_), eps = static_cast<Real>(eps_);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (!p.trainable) continue;
    auto theta = p.value.data();
    auto g = p.grad.data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta[i] *= decay;
      m[i] = b1 * m[i] + (Real(1) - b1) * g[i];
      v[i] = b2 * v[i] + (Real(1) - b2) * g[i] * g[i];
      theta[i] -= step_size * m[i] / (std::sqrt(v[i]) / sqrt_bc2 + eps);
    }
  }
}

double onecycle_lr(std::size_t step, std::size_t total_steps, double max_lr, double start_fraction, double div,
                   double final_div) {
  if (total_steps == 0) throw Error("onecycle_lr: total_steps must be positive");
  if (step > total_steps) throw Error("onecycle_lr: step beyond total_steps");
  const double initial = max_lr / div;
  const double final_lr = max_lr / final_div;
  auto cosine = [](double from, double to, double t) { return to + (from - to) * (1.0 + std::cos(std::numbers::pi * t)) / 2.0; };
  const double s = static_cast<double>(step);
  const double warm = start_fraction * static_cast<double>(total_steps);
  if (warm > 0.0 && s <= warm) return cosine(initial, max_lr, s / warm);
  const double rest = static_cast<double>(total_steps) - warm;
  return rest > 0.0 ? cosine(max_lr, final_lr, (s - warm) / rest) : final_lr;
}

template class AdamW<float>;
template class AdamW<double>;
template class AdamW<long double>;

}  // namespace seqhgnn
