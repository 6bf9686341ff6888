#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "seqhgnn/tensor/tape.hpp"

// Differentiable operations over Var. Every reduction accumulates in a
// fixed left-to-right order so identical inputs give bit-identical outputs.
namespace seqhgnn {

/// a[m×k] · b[k×n]
template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b);

/// a[m×k] · b[n×k]ᵀ. Weights stored out×in apply as matmul_nt(x, W).
template <typename Real>
Var<Real> matmul_nt(const Var<Real>& a, const Var<Real>& b);

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b);

/// Adds a length-d vector to every trailing row of x[..., d].
template <typename Real>
Var<Real> add_bias(const Var<Real>& x, const Var<Real>& bias);

template <typename Real>
Var<Real> scale(const Var<Real>& x, Real factor);

/// Elementwise product with a constant tensor of the same shape.
template <typename Real>
Var<Real> mul_const(const Var<Real>& x, const Tensor<Real>& mask);

/// Max-subtracted softmax along `axis` (rank 1..3).
template <typename Real>
Var<Real> softmax(const Var<Real>& x, std::size_t axis);

template <typename Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, std::size_t axis);

/// Half-open range [begin, end) along `axis`.
template <typename Real>
Var<Real> slice(const Var<Real>& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Mean along `axis`; the axis is removed from the output shape.
template <typename Real>
Var<Real> reduce_mean(const Var<Real>& x, std::size_t axis);

template <typename Real>
Var<Real> sum_all(const Var<Real>& x);

template <typename Real>
Var<Real> reshape(const Var<Real>& x, Shape shape);

/// Rows `index[i]` of x along axis 0.
template <typename Real>
Var<Real> gather_rows(const Var<Real>& x, std::span<const std::size_t> index);

/// v[d] repeated into [n × d].
template <typename Real>
Var<Real> broadcast_rows(const Var<Real>& v, std::size_t n);

/// x[n×d] with column block h (width d/heads) multiplied by w[h] (d_h×d_h).
template <typename Real>
Var<Real> head_matmul(const Var<Real>& x, const Var<Real>& w);

/// scores[t,h,i] = <q[t, head h], k[t, i, head h]>; q[N×d], k[N×F×d].
template <typename Real>
Var<Real> head_dot(const Var<Real>& q, const Var<Real>& k, std::size_t heads);

/// out[t,c] = Σ_i a[t, head(c), i] · v[t, i, c]; a[N×h×F], v[N×F×d].
template <typename Real>
Var<Real> head_mix(const Var<Real>& a, const Var<Real>& v);

/// Mean softmax cross-entropy of logits[N×C] against class ids.
template <typename Real>
Var<Real> cross_entropy(const Var<Real>& logits, std::span<const std::int32_t> labels);

/// Mean elementwise logistic loss of logits[N×C] against 0/1 targets.
template <typename Real>
Var<Real> bce_with_logits(const Var<Real>& logits, const Tensor<Real>& targets);

}  // namespace seqhgnn
