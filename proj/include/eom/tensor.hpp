#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "eom/io.hpp"

namespace eom {

namespace ad {

inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
  ~NoGradGuard() { g_grad_enabled = prev; }
};

template <class S>
struct TensorNode {
  std::vector<int> shape;
  std::vector<S> val;
  std::vector<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), S(0));
  }
};

inline size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

}  // namespace ad

// Reverse-mode autodiff tensor. A handle to a graph node; ops build the
// graph eagerly and `backward` accumulates gradients into leaves.
template <class S>
class Tensor {
 public:
  using Node = ad::TensorNode<S>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val.assign(ad::shape_numel(n->shape), S(0));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(std::vector<int> shape, S value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.val().begin(), t.val().end(), value);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<S> data, bool requires_grad = false) {
    if (ad::shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor data size does not match shape");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(n_); }
  const std::vector<int>& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[i]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  size_t numel() const { return n_->val.size(); }
  std::vector<S>& val() { return n_->val; }
  const std::vector<S>& val() const { return n_->val; }
  std::vector<S>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<S>& grad() const { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) { n_->requires_grad = rg; }
  void zero_grad() { n_->grad.assign(n_->val.size(), S(0)); }

  S item() const {
    if (numel() != 1) throw std::invalid_argument("item() requires a single-element tensor");
    return n_->val[0];
  }

  std::shared_ptr<Node> node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

namespace ad {

template <class S>
Tensor<S> make_op(std::vector<int> shape, std::vector<std::shared_ptr<TensorNode<S>>> parents,
                  std::function<void(TensorNode<S>&)> backward_fn) {
  auto n = std::make_shared<TensorNode<S>>();
  n->shape = std::move(shape);
  n->val.assign(shape_numel(n->shape), S(0));
  bool track = false;
  if (g_grad_enabled)
    for (const auto& p : parents) track = track || p->requires_grad;
  if (track) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<S>(std::move(n));
}

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// --- dense kernels ---

// Dot product with a fixed bank of accumulators so the compiler can
// vectorize the reduction without reassociation flags.
template <class S>
S dot_arrays(const S* __restrict a, const S* __restrict b, int n) {
  constexpr int kLanes = 16;
  S acc[kLanes] = {};
  int i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int u = 0; u < kLanes; ++u) acc[u] += a[i + u] * b[i + u];
  S tail = S(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  S total = tail;
  for (int u = 0; u < kLanes; ++u) total += acc[u];
  return total;
}

// Plain sum with the same accumulator-bank trick.
template <class S>
S sum_array(const S* __restrict a, int n) {
  constexpr int kLanes = 16;
  S acc[kLanes] = {};
  int i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int u = 0; u < kLanes; ++u) acc[u] += a[i + u];
  S tail = S(0);
  for (; i < n; ++i) tail += a[i];
  S total = tail;
  for (int u = 0; u < kLanes; ++u) total += acc[u];
  return total;
}

// C[MxN] = A[MxK] * B[KxN], row-major, C overwritten.
template <class S>
void gemm(int M, int K, int N, const S* A, const S* B, S* C) {
  for (int i = 0; i < M; ++i) {
    S* __restrict crow = C + static_cast<size_t>(i) * N;
    std::fill(crow, crow + N, S(0));
    const S* arow = A + static_cast<size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      S a = arow[k];
      if (a == S(0)) continue;
      const S* __restrict brow = B + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

// C[MxK] += A[MxN] * B[KxN]^T  (dot products over N)
template <class S>
void gemm_abt_acc(int M, int N, int K, const S* A, const S* B, S* C) {
  for (int i = 0; i < M; ++i) {
    const S* arow = A + static_cast<size_t>(i) * N;
    for (int k = 0; k < K; ++k)
      C[static_cast<size_t>(i) * K + k] += dot_arrays(arow, B + static_cast<size_t>(k) * N, N);
  }
}

// C[KxN] = A[MxK]^T * B[MxN]
template <class S>
void gemm_atb(int M, int K, int N, const S* A, const S* B, S* C) {
  std::fill(C, C + static_cast<size_t>(K) * N, S(0));
  for (int i = 0; i < M; ++i) {
    const S* __restrict brow = B + static_cast<size_t>(i) * N;
    const S* arow = A + static_cast<size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      S a = arow[k];
      if (a == S(0)) continue;
      S* __restrict crow = C + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

struct ConvDims {
  int n, cin, h, w;
  int cout, kh, kw;
  int stride, dilation, padding;
  int ho, wo;
};

template <class S>
void im2col(const S* in, const ConvDims& d, S* col) {
  int area = d.ho * d.wo;
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        S* dst = col + (static_cast<size_t>(ci) * d.kh * d.kw + ky * d.kw + kx) * area;
        for (int oy = 0; oy < d.ho; ++oy) {
          int iy = oy * d.stride - d.padding + ky * d.dilation;
          S* drow = dst + static_cast<size_t>(oy) * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::fill(drow, drow + d.wo, S(0));
            continue;
          }
          const S* srow = in + (static_cast<size_t>(ci) * d.h + iy) * d.w;
          for (int ox = 0; ox < d.wo; ++ox) {
            int ix = ox * d.stride - d.padding + kx * d.dilation;
            drow[ox] = (ix >= 0 && ix < d.w) ? srow[ix] : S(0);
          }
        }
      }
    }
  }
}

template <class S>
void col2im_acc(const S* col, const ConvDims& d, S* in_grad) {
  int area = d.ho * d.wo;
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const S* src = col + (static_cast<size_t>(ci) * d.kh * d.kw + ky * d.kw + kx) * area;
        for (int oy = 0; oy < d.ho; ++oy) {
          int iy = oy * d.stride - d.padding + ky * d.dilation;
          if (iy < 0 || iy >= d.h) continue;
          S* drow = in_grad + (static_cast<size_t>(ci) * d.h + iy) * d.w;
          const S* srow = src + static_cast<size_t>(oy) * d.wo;
          for (int ox = 0; ox < d.wo; ++ox) {
            int ix = ox * d.stride - d.padding + kx * d.dilation;
            if (ix >= 0 && ix < d.w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace ad

// --- elementwise ---

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  ad::check_same_shape(a, b, "add");
  auto pa = a.node(), pb = b.node();
  auto out = ad::make_op<S>(a.shape(), {pa, pb}, [pa = pa.get(), pb = pb.get()](auto& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i];
    }
  });
  for (size_t i = 0; i < out.numel(); ++i) out.val()[i] = a.val()[i] + b.val()[i];
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  ad::check_same_shape(a, b, "sub");
  auto pa = a.node(), pb = b.node();
  auto out = ad::make_op<S>(a.shape(), {pa, pb}, [pa = pa.get(), pb = pb.get()](auto& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    }
  });
  for (size_t i = 0; i < out.numel(); ++i) out.val()[i] = a.val()[i] - b.val()[i];
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  ad::check_same_shape(a, b, "mul");
  auto pa = a.node(), pb = b.node();
  auto out = ad::make_op<S>(a.shape(), {pa, pb}, [pa = pa.get(), pb = pb.get()](auto& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->val[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->val[i];
    }
  });
  for (size_t i = 0; i < out.numel(); ++i) out.val()[i] = a.val()[i] * b.val()[i];
  return out;
}

template <class S>
Tensor<S> scalar_mul(const Tensor<S>& a, S s) {
  auto pa = a.node();
  auto out = ad::make_op<S>(a.shape(), {pa}, [pa = pa.get(), s](auto& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * s;
  });
  for (size_t i = 0; i < out.numel(); ++i) out.val()[i] = a.val()[i] * s;
  return out;
}

template <class S>
Tensor<S> scalar_add(const Tensor<S>& a, S s) {
  auto pa = a.node();
  auto out = ad::make_op<S>(a.shape(), {pa}, [pa = pa.get()](auto& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
  });
  for (size_t i = 0; i < out.numel(); ++i) out.val()[i] = a.val()[i] + s;
  return out;
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
  return scalar_mul(a, S(-1));
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  auto pa = a.node();
  auto out = ad::make_op<S>(a.shape(), {pa}, [pa = pa.get()](auto& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (pa->val[i] > S(0)) pa->grad[i] += n.grad[i];
  });
  for (size_t i = 0; i < out.numel(); ++i) out.val()[i] = a.val()[i] > S(0) ? a.val()[i] : S(0);
  return out;
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  auto pa = a.node();
  auto out = ad::make_op<S>(a.shape(), {pa}, [pa = pa.get()](auto& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      S y = n.val[i];
      pa->grad[i] += n.grad[i] * y * (S(1) - y);
    }
  });
  for (size_t i = 0; i < out.numel(); ++i) out.val()[i] = S(1) / (S(1) + std::exp(-a.val()[i]));
  return out;
}

// 1 / sqrt(x + eps)
template <class S>
Tensor<S> rsqrt_eps(const Tensor<S>& a, S eps) {
  auto pa = a.node();
  auto out = ad::make_op<S>(a.shape(), {pa}, [pa = pa.get()](auto& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      S y = n.val[i];
      pa->grad[i] += n.grad[i] * S(-0.5) * y * y * y;
    }
  });
  for (size_t i = 0; i < out.numel(); ++i) out.val()[i] = S(1) / std::sqrt(a.val()[i] + eps);
  return out;
}

// --- reductions ---

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  auto pa = a.node();
  auto out = ad::make_op<S>({1}, {pa}, [pa = pa.get()](auto& n) {
    pa->ensure_grad();
    S g = n.grad[0];
    for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
  });
  out.val()[0] = ad::sum_array(a.val().data(), static_cast<int>(a.numel()));
  return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  return scalar_mul(sum(a), S(1) / static_cast<S>(a.numel()));
}

// --- channel-wise ops on NCHW ---

namespace ad {
template <class S>
void expect_4d(const Tensor<S>& a, const char* op) {
  if (a.ndim() != 4) throw std::invalid_argument(std::string(op) + ": expected a 4-d tensor");
}
}  // namespace ad

// Mean over batch and spatial dims, one value per channel.
template <class S>
Tensor<S> channel_mean(const Tensor<S>& a) {
  ad::expect_4d(a, "channel_mean");
  int N = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
  S scale = S(1) / static_cast<S>(static_cast<size_t>(N) * HW);
  auto pa = a.node();
  auto out = ad::make_op<S>({C}, {pa}, [pa = pa.get(), N, C, HW, scale](auto& n) {
    pa->ensure_grad();
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < C; ++c) {
        S g = n.grad[c] * scale;
        S* dst = pa->grad.data() + (static_cast<size_t>(b) * C + c) * HW;
        for (int i = 0; i < HW; ++i) dst[i] += g;
      }
  });
  for (int b = 0; b < N; ++b)
    for (int c = 0; c < C; ++c)
      out.val()[c] += ad::sum_array(a.val().data() + (static_cast<size_t>(b) * C + c) * HW, HW) * scale;
  return out;
}

template <class S>
Tensor<S> mul_channel(const Tensor<S>& a, const Tensor<S>& per_channel) {
  ad::expect_4d(a, "mul_channel");
  int N = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
  if (per_channel.ndim() != 1 || per_channel.dim(0) != C)
    throw std::invalid_argument("mul_channel: parameter must have shape {channels}");
  auto pa = a.node(), pp = per_channel.node();
  auto out = ad::make_op<S>(a.shape(), {pa, pp}, [pa = pa.get(), pp = pp.get(), N, C, HW](auto& n) {
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < C; ++c) {
        size_t off = (static_cast<size_t>(b) * C + c) * HW;
        if (pa->requires_grad) {
          pa->ensure_grad();
          S s = pp->val[c];
          for (int i = 0; i < HW; ++i) pa->grad[off + i] += n.grad[off + i] * s;
        }
        if (pp->requires_grad) {
          pp->ensure_grad();
          pp->grad[c] += ad::dot_arrays(n.grad.data() + off, pa->val.data() + off, HW);
        }
      }
  });
  for (int b = 0; b < N; ++b)
    for (int c = 0; c < C; ++c) {
      size_t off = (static_cast<size_t>(b) * C + c) * HW;
      S s = per_channel.val()[c];
      for (int i = 0; i < HW; ++i) out.val()[off + i] = a.val()[off + i] * s;
    }
  return out;
}

template <class S>
Tensor<S> add_channel(const Tensor<S>& a, const Tensor<S>& per_channel) {
  ad::expect_4d(a, "add_channel");
  int N = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
  if (per_channel.ndim() != 1 || per_channel.dim(0) != C)
    throw std::invalid_argument("add_channel: parameter must have shape {channels}");
  auto pa = a.node(), pp = per_channel.node();
  auto out = ad::make_op<S>(a.shape(), {pa, pp}, [pa = pa.get(), pp = pp.get(), N, C, HW](auto& n) {
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < C; ++c) {
        size_t off = (static_cast<size_t>(b) * C + c) * HW;
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (int i = 0; i < HW; ++i) pa->grad[off + i] += n.grad[off + i];
        }
        if (pp->requires_grad) {
          pp->ensure_grad();
          pp->grad[c] += ad::sum_array(n.grad.data() + off, HW);
        }
      }
  });
  for (int b = 0; b < N; ++b)
    for (int c = 0; c < C; ++c) {
      size_t off = (static_cast<size_t>(b) * C + c) * HW;
      S s = per_channel.val()[c];
      for (int i = 0; i < HW; ++i) out.val()[off + i] = a.val()[off + i] + s;
    }
  return out;
}

// Channel dot product: out[n,0,y,x] = sum_c a[n,c,y,x] * b[n,c,y,x].
template <class S>
Tensor<S> channel_dot(const Tensor<S>& a, const Tensor<S>& b) {
  ad::check_same_shape(a, b, "channel_dot");
  ad::expect_4d(a, "channel_dot");
  int N = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
  auto pa = a.node(), pb = b.node();
  auto out = ad::make_op<S>({N, 1, a.dim(2), a.dim(3)}, {pa, pb},
                            [pa = pa.get(), pb = pb.get(), N, C, HW](auto& n) {
    for (int bi = 0; bi < N; ++bi) {
      const S* gout = n.grad.data() + static_cast<size_t>(bi) * HW;
      for (int c = 0; c < C; ++c) {
        size_t off = (static_cast<size_t>(bi) * C + c) * HW;
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (int i = 0; i < HW; ++i) pa->grad[off + i] += gout[i] * pb->val[off + i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (int i = 0; i < HW; ++i) pb->grad[off + i] += gout[i] * pa->val[off + i];
        }
      }
    }
  });
  for (int bi = 0; bi < N; ++bi) {
    S* dst = out.val().data() + static_cast<size_t>(bi) * HW;
    for (int c = 0; c < C; ++c) {
      size_t off = (static_cast<size_t>(bi) * C + c) * HW;
      for (int i = 0; i < HW; ++i) dst[i] += a.val()[off + i] * b.val()[off + i];
    }
  }
  return out;
}

// Broadcast a single-channel spatial map over the channels of `a`.
template <class S>
Tensor<S> mul_spatial(const Tensor<S>& map, const Tensor<S>& a) {
  ad::expect_4d(a, "mul_spatial");
  ad::expect_4d(map, "mul_spatial");
  int N = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
  if (map.dim(0) != N || map.dim(1) != 1 || map.dim(2) != a.dim(2) || map.dim(3) != a.dim(3))
    throw std::invalid_argument("mul_spatial: map must have shape {n,1,h,w}");
  auto pm = map.node(), pa = a.node();
  auto out = ad::make_op<S>(a.shape(), {pm, pa}, [pm = pm.get(), pa = pa.get(), N, C, HW](auto& n) {
    for (int bi = 0; bi < N; ++bi) {
      const S* wmap = pm->val.data() + static_cast<size_t>(bi) * HW;
      for (int c = 0; c < C; ++c) {
        size_t off = (static_cast<size_t>(bi) * C + c) * HW;
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (int i = 0; i < HW; ++i) pa->grad[off + i] += n.grad[off + i] * wmap[i];
        }
        if (pm->requires_grad) {
          pm->ensure_grad();
          S* gm = pm->grad.data() + static_cast<size_t>(bi) * HW;
          for (int i = 0; i < HW; ++i) gm[i] += n.grad[off + i] * pa->val[off + i];
        }
      }
    }
  });
  for (int bi = 0; bi < N; ++bi) {
    const S* wmap = map.val().data() + static_cast<size_t>(bi) * HW;
    for (int c = 0; c < C; ++c) {
      size_t off = (static_cast<size_t>(bi) * C + c) * HW;
      for (int i = 0; i < HW; ++i) out.val()[off + i] = a.val()[off + i] * wmap[i];
    }
  }
  return out;
}

template <class S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  ad::expect_4d(a, "concat_channels");
  ad::expect_4d(b, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat_channels: batch/spatial dims must match");
  int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  auto pa = a.node(), pb = b.node();
  auto out = ad::make_op<S>({N, Ca + Cb, a.dim(2), a.dim(3)}, {pa, pb},
                            [pa = pa.get(), pb = pb.get(), N, Ca, Cb, HW](auto& n) {
    size_t ca_sz = static_cast<size_t>(Ca) * HW, cb_sz = static_cast<size_t>(Cb) * HW;
    for (int bi = 0; bi < N; ++bi) {
      const S* g = n.grad.data() + static_cast<size_t>(bi) * (ca_sz + cb_sz);
      if (pa->requires_grad) {
        pa->ensure_grad();
        S* ga = pa->grad.data() + static_cast<size_t>(bi) * ca_sz;
        for (size_t i = 0; i < ca_sz; ++i) ga[i] += g[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        S* gb = pb->grad.data() + static_cast<size_t>(bi) * cb_sz;
        for (size_t i = 0; i < cb_sz; ++i) gb[i] += g[ca_sz + i];
      }
    }
  });
  size_t ca_sz = static_cast<size_t>(Ca) * HW, cb_sz = static_cast<size_t>(Cb) * HW;
  for (int bi = 0; bi < N; ++bi) {
    S* dst = out.val().data() + static_cast<size_t>(bi) * (ca_sz + cb_sz);
    std::memcpy(dst, a.val().data() + static_cast<size_t>(bi) * ca_sz, ca_sz * sizeof(S));
    std::memcpy(dst + ca_sz, b.val().data() + static_cast<size_t>(bi) * cb_sz, cb_sz * sizeof(S));
  }
  return out;
}

// --- spatial softmax ---

// Softmax over all spatial positions. Accepts {h,w} or {n,1,h,w}.
template <class S>
Tensor<S> spatial_softmax(const Tensor<S>& a) {
  int N, HW;
  if (a.ndim() == 2) {
    N = 1;
    HW = a.dim(0) * a.dim(1);
  } else if (a.ndim() == 4 && a.dim(1) == 1) {
    N = a.dim(0);
    HW = a.dim(2) * a.dim(3);
  } else {
    throw std::invalid_argument("spatial_softmax: expected {h,w} or {n,1,h,w}");
  }
  auto pa = a.node();
  auto out = ad::make_op<S>(a.shape(), {pa}, [pa = pa.get(), N, HW](auto& n) {
    pa->ensure_grad();
    for (int bi = 0; bi < N; ++bi) {
      size_t off = static_cast<size_t>(bi) * HW;
      S dot = ad::dot_arrays(n.grad.data() + off, n.val.data() + off, HW);
      for (int i = 0; i < HW; ++i)
        pa->grad[off + i] += n.val[off + i] * (n.grad[off + i] - dot);
    }
  });
  for (int bi = 0; bi < N; ++bi) {
    size_t off = static_cast<size_t>(bi) * HW;
    S mx = a.val()[off];
    for (int i = 1; i < HW; ++i) mx = std::max(mx, a.val()[off + i]);
    S total = S(0);
    for (int i = 0; i < HW; ++i) {
      S e = std::exp(a.val()[off + i] - mx);
      out.val()[off + i] = e;
      total += e;
    }
    for (int i = 0; i < HW; ++i) out.val()[off + i] /= total;
  }
  return out;
}

// --- convolution and resampling ---

// Cross-correlation with stride/dilation/padding; weight is {out,in,kh,kw},
// optional bias {out}.
template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 int stride = 1, int dilation = 1, int padding = 0) {
  ad::expect_4d(input, "conv2d");
  if (weight.ndim() != 4) throw std::invalid_argument("conv2d: weight must be 4-d");
  if (input.dim(1) != weight.dim(1)) throw std::invalid_argument("conv2d: channel mismatch");
  if (stride < 1 || dilation < 1 || padding < 0) throw std::invalid_argument("conv2d: bad geometry");
  ad::ConvDims d;
  d.n = input.dim(0);
  d.cin = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.cout = weight.dim(0);
  d.kh = weight.dim(2);
  d.kw = weight.dim(3);
  d.stride = stride;
  d.dilation = dilation;
  d.padding = padding;
  d.ho = (d.h + 2 * padding - dilation * (d.kh - 1) - 1) / stride + 1;
  d.wo = (d.w + 2 * padding - dilation * (d.kw - 1) - 1) / stride + 1;
  if (d.ho <= 0 || d.wo <= 0) throw std::invalid_argument("conv2d: output would be empty");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != d.cout))
    throw std::invalid_argument("conv2d: bias must have shape {out_channels}");

  int K = d.cin * d.kh * d.kw;
  int area = d.ho * d.wo;
  auto pi = input.node(), pw = weight.node();
  std::vector<std::shared_ptr<ad::TensorNode<S>>> parents = {pi, pw};
  auto pb = bias.defined() ? bias.node() : nullptr;
  if (pb) parents.push_back(pb);

  auto out = ad::make_op<S>({d.n, d.cout, d.ho, d.wo}, std::move(parents),
                            [pi = pi.get(), pw = pw.get(), pb = pb.get(), d, K, area](auto& n) {
    std::vector<S> col(static_cast<size_t>(K) * area);
    std::vector<S> dcol(static_cast<size_t>(K) * area);
    size_t in_sz = static_cast<size_t>(d.cin) * d.h * d.w;
    size_t out_sz = static_cast<size_t>(d.cout) * area;
    for (int bi = 0; bi < d.n; ++bi) {
      const S* gout = n.grad.data() + bi * out_sz;
      if (pw->requires_grad) {
        pw->ensure_grad();
        ad::im2col(pi->val.data() + bi * in_sz, d, col.data());
        ad::gemm_abt_acc(d.cout, area, K, gout, col.data(), pw->grad.data());
      }
      if (pi->requires_grad) {
        pi->ensure_grad();
        ad::gemm_atb(d.cout, K, area, pw->val.data(), gout, dcol.data());
        ad::col2im_acc(dcol.data(), d, pi->grad.data() + bi * in_sz);
      }
      if (pb && pb->requires_grad) {
        pb->ensure_grad();
        for (int oc = 0; oc < d.cout; ++oc)
          pb->grad[oc] += ad::sum_array(gout + static_cast<size_t>(oc) * area, area);
      }
    }
  });

  std::vector<S> col(static_cast<size_t>(K) * area);
  size_t in_sz = static_cast<size_t>(d.cin) * d.h * d.w;
  size_t out_sz = static_cast<size_t>(d.cout) * area;
  for (int bi = 0; bi < d.n; ++bi) {
    ad::im2col(input.val().data() + bi * in_sz, d, col.data());
    ad::gemm(d.cout, K, area, weight.val().data(), col.data(), out.val().data() + bi * out_sz);
    if (bias.defined())
      for (int oc = 0; oc < d.cout; ++oc) {
        S b = bias.val()[oc];
        S* row = out.val().data() + bi * out_sz + static_cast<size_t>(oc) * area;
        for (int i = 0; i < area; ++i) row[i] += b;
      }
  }
  return out;
}

template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, int stride = 1,
                 int dilation = 1, int padding = 0) {
  return conv2d(input, weight, Tensor<S>(), stride, dilation, padding);
}

// Transposed convolution, weight {in,out,k,k}; upsamples by `stride`.
template <class S>
Tensor<S> conv_transpose2d(const Tensor<S>& input, const Tensor<S>& weight, int stride = 2) {
  ad::expect_4d(input, "conv_transpose2d");
  if (weight.ndim() != 4) throw std::invalid_argument("conv_transpose2d: weight must be 4-d");
  if (input.dim(1) != weight.dim(0))
    throw std::invalid_argument("conv_transpose2d: channel mismatch");
  int N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  int Cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  int Ho = (H - 1) * stride + kh, Wo = (W - 1) * stride + kw;
  auto pi = input.node(), pw = weight.node();
  auto out = ad::make_op<S>({N, Cout, Ho, Wo}, {pi, pw},
                            [pi = pi.get(), pw = pw.get(), N, Cin, Cout, H, W, Ho, Wo, kh, kw,
                             stride](auto& n) {
    for (int bi = 0; bi < N; ++bi)
      for (int ci = 0; ci < Cin; ++ci)
        for (int co = 0; co < Cout; ++co) {
          const S* wk = pw->val.data() + (static_cast<size_t>(ci) * Cout + co) * kh * kw;
          S* wg = pw->requires_grad
                      ? (pw->ensure_grad(), pw->grad.data() + (static_cast<size_t>(ci) * Cout + co) * kh * kw)
                      : nullptr;
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
              size_t iidx = ((static_cast<size_t>(bi) * Cin + ci) * H + y) * W + x;
              S iv = pi->val[iidx];
              S gacc = S(0);
              for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                  size_t oidx = ((static_cast<size_t>(bi) * Cout + co) * Ho + y * stride + ky) * Wo +
                                x * stride + kx;
                  S go = n.grad[oidx];
                  gacc += go * wk[ky * kw + kx];
                  if (wg) wg[ky * kw + kx] += go * iv;
                }
              if (pi->requires_grad) {
                pi->ensure_grad();
                pi->grad[iidx] += gacc;
              }
            }
        }
  });
  for (int bi = 0; bi < N; ++bi)
    for (int ci = 0; ci < Cin; ++ci)
      for (int co = 0; co < Cout; ++co) {
        const S* wk = weight.val().data() + (static_cast<size_t>(ci) * Cout + co) * kh * kw;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            S iv = input.val()[((static_cast<size_t>(bi) * Cin + ci) * H + y) * W + x];
            if (iv == S(0)) continue;
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx)
                out.val()[((static_cast<size_t>(bi) * Cout + co) * Ho + y * stride + ky) * Wo +
                          x * stride + kx] += iv * wk[ky * kw + kx];
          }
      }
  return out;
}

template <class S>
Tensor<S> maxpool2(const Tensor<S>& a) {
  ad::expect_4d(a, "maxpool2");
  int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  if (H % 2 != 0 || W % 2 != 0) throw std::invalid_argument("maxpool2: spatial dims must be even");
  int Ho = H / 2, Wo = W / 2;
  auto arg = std::make_shared<std::vector<uint32_t>>(static_cast<size_t>(N) * C * Ho * Wo);
  auto pa = a.node();
  auto out = ad::make_op<S>({N, C, Ho, Wo}, {pa}, [pa = pa.get(), arg](auto& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[(*arg)[i]] += n.grad[i];
  });
  size_t o = 0;
  for (int bi = 0; bi < N; ++bi)
    for (int c = 0; c < C; ++c) {
      const S* plane = a.val().data() + (static_cast<size_t>(bi) * C + c) * H * W;
      size_t base = (static_cast<size_t>(bi) * C + c) * H * W;
      for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x, ++o) {
          int iy = 2 * y, ix = 2 * x;
          size_t best = static_cast<size_t>(iy) * W + ix;
          S bv = plane[best];
          const size_t cand[3] = {static_cast<size_t>(iy) * W + ix + 1,
                                  static_cast<size_t>(iy + 1) * W + ix,
                                  static_cast<size_t>(iy + 1) * W + ix + 1};
          for (size_t idx : cand)
            if (plane[idx] > bv) {
              bv = plane[idx];
              best = idx;
            }
          out.val()[o] = bv;
          (*arg)[o] = static_cast<uint32_t>(base + best);
        }
    }
  return out;
}

template <class S>
Tensor<S> upsample_nearest2(const Tensor<S>& a) {
  ad::expect_4d(a, "upsample_nearest2");
  int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  int Ho = H * 2, Wo = W * 2;
  auto pa = a.node();
  auto out = ad::make_op<S>({N, C, Ho, Wo}, {pa}, [pa = pa.get(), N, C, H, W, Ho, Wo](auto& n) {
    pa->ensure_grad();
    for (int bi = 0; bi < N; ++bi)
      for (int c = 0; c < C; ++c) {
        size_t ibase = (static_cast<size_t>(bi) * C + c) * H * W;
        size_t obase = (static_cast<size_t>(bi) * C + c) * Ho * Wo;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            S g = n.grad[obase + static_cast<size_t>(2 * y) * Wo + 2 * x] +
                  n.grad[obase + static_cast<size_t>(2 * y) * Wo + 2 * x + 1] +
                  n.grad[obase + static_cast<size_t>(2 * y + 1) * Wo + 2 * x] +
                  n.grad[obase + static_cast<size_t>(2 * y + 1) * Wo + 2 * x + 1];
            pa->grad[ibase + static_cast<size_t>(y) * W + x] += g;
          }
      }
  });
  for (int bi = 0; bi < N; ++bi)
    for (int c = 0; c < C; ++c) {
      size_t ibase = (static_cast<size_t>(bi) * C + c) * H * W;
      size_t obase = (static_cast<size_t>(bi) * C + c) * Ho * Wo;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          S v = a.val()[ibase + static_cast<size_t>(y) * W + x];
          out.val()[obase + static_cast<size_t>(2 * y) * Wo + 2 * x] = v;
          out.val()[obase + static_cast<size_t>(2 * y) * Wo + 2 * x + 1] = v;
          out.val()[obase + static_cast<size_t>(2 * y + 1) * Wo + 2 * x] = v;
          out.val()[obase + static_cast<size_t>(2 * y + 1) * Wo + 2 * x + 1] = v;
        }
    }
  return out;
}

// --- backpropagation ---

template <class S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1) throw std::invalid_argument("backward requires a scalar loss");
  using Node = ad::TensorNode<S>;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    size_t next;
  };
  std::vector<Frame> stack;
  Node* root = loss.node().get();
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      Node* p = f.node->parents[f.next++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->val.size()) n->backward_fn(*n);
  }
}

// --- optimizer ---

// Bias-corrected Adam over a fixed parameter list.
template <class S>
class Adam {
 public:
  Adam(S lr = S(1e-4), S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Tensor<S>>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.numel(), S(0));
        v_.emplace_back(p.numel(), S(0));
      }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("adam: parameter list changed");
    ++t_;
    S c1 = S(1) - std::pow(beta1_, static_cast<S>(t_));
    S c2 = S(1) - std::pow(beta2_, static_cast<S>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (p.numel() != m_[i].size()) throw std::invalid_argument("adam: shape mismatch");
      const auto& g = p.grad();
      auto& val = p.val();
      for (size_t j = 0; j < val.size(); ++j) {
        m_[i][j] = beta1_ * m_[i][j] + (S(1) - beta1_) * g[j];
        v_[i][j] = beta2_ * v_[i][j] + (S(1) - beta2_) * g[j] * g[j];
        S mhat = m_[i][j] / c1;
        S vhat = v_[i][j] / c2;
        val[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  long step_count() const { return t_; }

 private:
  S lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

template <class S>
void zero_grads(std::vector<Tensor<S>>& params) {
  for (auto& p : params) p.zero_grad();
}

// --- checkpoints ---

constexpr uint16_t kCheckpointVersion = 1;

template <class S>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor<S>>>& params) {
  std::string buf;
  buf += "EOMC";
  detail::put_u16(buf, kCheckpointVersion);
  detail::put_u32(buf, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::put_u16(buf, static_cast<uint16_t>(name.size()));
    buf += name;
    buf.push_back(sizeof(S) == 4 ? 1 : 2);
    buf.push_back(static_cast<char>(t.ndim()));
    for (int d : t.shape()) detail::put_u32(buf, static_cast<uint32_t>(d));
    for (S v : t.val()) {
      if constexpr (sizeof(S) == 4) {
        uint32_t bits;
        float f = static_cast<float>(v);
        std::memcpy(&bits, &f, 4);
        detail::put_u32(buf, bits);
      } else {
        uint64_t bits;
        double f = static_cast<double>(v);
        std::memcpy(&bits, &f, 8);
        detail::put_u32(buf, static_cast<uint32_t>(bits & 0xffffffffULL));
        detail::put_u32(buf, static_cast<uint32_t>(bits >> 32));
      }
    }
  }
  atomic_write_file(path, buf);
}

template <class S>
void load_checkpoint(const std::string& path,
                     std::vector<std::pair<std::string, Tensor<S>>>& params) {
  std::string bytes = read_file(path);
  if (bytes.size() < 10 || bytes.compare(0, 4, "EOMC") != 0)
    throw std::runtime_error("bad magic in checkpoint: " + path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  uint16_t version = detail::get_u16(p + 4);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version: " + std::to_string(version));
  uint32_t count = detail::get_u32(p + 6);
  size_t off = 10;
  std::unordered_map<std::string, std::pair<std::vector<int>, std::vector<S>>> table;
  auto need = [&](size_t n) {
    if (off + n > bytes.size()) throw std::runtime_error("truncated checkpoint: " + path);
  };
  for (uint32_t i = 0; i < count; ++i) {
    need(2);
    uint16_t len = detail::get_u16(p + off);
    off += 2;
    need(len);
    std::string name = bytes.substr(off, len);
    off += len;
    need(2);
    uint8_t dtype = p[off++];
    if (dtype != (sizeof(S) == 4 ? 1 : 2))
      throw std::runtime_error("checkpoint dtype mismatch for " + name);
    uint8_t ndim = p[off++];
    need(static_cast<size_t>(ndim) * 4);
    std::vector<int> shape(ndim);
    size_t numel = 1;
    for (int dI = 0; dI < ndim; ++dI) {
      shape[dI] = static_cast<int>(detail::get_u32(p + off));
      off += 4;
      numel *= static_cast<size_t>(shape[dI]);
    }
    need(numel * sizeof(S));
    std::vector<S> data(numel);
    for (size_t j = 0; j < numel; ++j) {
      if constexpr (sizeof(S) == 4) {
        uint32_t bits = detail::get_u32(p + off);
        float f;
        std::memcpy(&f, &bits, 4);
        data[j] = f;
        off += 4;
      } else {
        uint64_t lo = detail::get_u32(p + off);
        uint64_t hi = detail::get_u32(p + off + 4);
        uint64_t bits = lo | (hi << 32);
        double f;
        std::memcpy(&f, &bits, 8);
        data[j] = f;
        off += 8;
      }
    }
    table[name] = {std::move(shape), std::move(data)};
  }
  for (auto& [name, t] : params) {
    auto it = table.find(name);
    if (it == table.end()) throw std::runtime_error("checkpoint missing parameter: " + name);
    if (it->second.first != t.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    t.val() = it->second.second;
  }
}

}  // namespace eom
