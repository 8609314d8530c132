#pragma once

#include "eom/grid.hpp"
#include "eom/tensor.hpp"

namespace eom {

struct LossWeights {
  double beta = 100.0;
  double gamma_h = 1000.0;
  double gamma_u = 1000.0;

  void validate() const {
    if (beta <= 0.0) throw std::invalid_argument("beta must be positive");
  }
};

struct AblationFlags {
  bool no_hard = false;
  bool no_soft = false;
  bool no_unseen = false;
};

namespace loss_detail {
template <class S>
S batch_scale(const Tensor<S>& p) {
  return p.ndim() == 4 ? S(1) / static_cast<S>(p.dim(0)) : S(1);
}
}  // namespace loss_detail

// Pixel-wise squared error, summed per scene and averaged across the batch.
template <class S>
Tensor<S> rec_loss(const Tensor<S>& p, const Tensor<S>& e) {
  ad::check_same_shape(p, e, "rec_loss");
  Tensor<S> d = sub(p, e);
  return scalar_mul(sum(mul(d, d)), loss_detail::batch_scale(p));
}

// Number of strictly late pixels; the non-differentiable metric form.
inline double hard_exact(const Grid<float>& p, const Grid<float>& e) {
  if (p.h != e.h || p.w != e.w) throw std::invalid_argument("hard_exact: shape mismatch");
  long count = 0;
  for (size_t i = 0; i < p.v.size(); ++i)
    if (p.v[i] > e.v[i]) ++count;
  return static_cast<double>(count);
}

template <class S>
double hard_exact(const Tensor<S>& p, const Tensor<S>& e) {
  ad::check_same_shape(p, e, "hard_exact");
  long count = 0;
  for (size_t i = 0; i < p.numel(); ++i)
    if (p.val()[i] > e.val()[i]) ++count;
  return static_cast<double>(count);
}

// Sigmoid relaxation of the late-pixel count; steep for large beta.
template <class S>
Tensor<S> hard_smooth(const Tensor<S>& p, const Tensor<S>& e, double beta) {
  ad::check_same_shape(p, e, "hard_smooth");
  Tensor<S> z = scalar_mul(sub(p, e), static_cast<S>(beta));
  return scalar_mul(sum(sigmoid(z)), loss_detail::batch_scale(p));
}

// Negative sum of predictions; pulls values upward everywhere.
template <class S>
Tensor<S> soft_loss(const Tensor<S>& p) {
  return scalar_mul(sum(p), -loss_detail::batch_scale(p));
}

// Late-pixel relaxation restricted to the unseen mask.
template <class S>
Tensor<S> unseen_loss(const Tensor<S>& p, const Tensor<S>& e, const Tensor<S>& m, double beta) {
  ad::check_same_shape(p, e, "unseen_loss");
  ad::check_same_shape(p, m, "unseen_loss");
  Tensor<S> z = scalar_mul(sub(p, e), static_cast<S>(beta));
  return scalar_mul(sum(mul(m, sigmoid(z))), loss_detail::batch_scale(p));
}

template <class S>
struct LossBreakdown {
  Tensor<S> total;
  double rec = 0.0, hard = 0.0, soft = 0.0, unseen = 0.0;
};

// L = L_rec + gamma_h * L_h + L_s + gamma_u * L_u, with ablation switches
// removing terms from the graph entirely.
template <class S>
LossBreakdown<S> total_loss(const Tensor<S>& p, const Tensor<S>& e, const Tensor<S>& m,
                            const LossWeights& weights, const AblationFlags& flags = {}) {
  weights.validate();
  LossBreakdown<S> out;
  Tensor<S> total = rec_loss(p, e);
  out.rec = static_cast<double>(total.item());
  if (!flags.no_hard) {
    Tensor<S> h = hard_smooth(p, e, weights.beta);
    out.hard = static_cast<double>(h.item());
    total = add(total, scalar_mul(h, static_cast<S>(weights.gamma_h)));
  }
  if (!flags.no_soft) {
    Tensor<S> s = soft_loss(p);
    out.soft = static_cast<double>(s.item());
    total = add(total, s);
  }
  if (!flags.no_unseen) {
    Tensor<S> u = unseen_loss(p, e, m, weights.beta);
    out.unseen = static_cast<double>(u.item());
    total = add(total, scalar_mul(u, static_cast<S>(weights.gamma_u)));
  }
  out.total = total;
  return out;
}

}  // namespace eom
