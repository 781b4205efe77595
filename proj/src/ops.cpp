#include "clifford/ops.hpp"

#include "clifford/error.hpp"

#include <cmath>
#include <string>

namespace clifford {
namespace {

template <typename S>
using Rows = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowsMap = Eigen::Map<Rows<S>>;
template <typename S>
using ConstRowsMap = Eigen::Map<const Rows<S>>;
template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatrixMap = Eigen::Map<Matrix<S>>;
template <typename S>
using ConstMatrixMap = Eigen::Map<const Matrix<S>>;
template <typename S>
using RowVec = Eigen::Array<S, 1, Eigen::Dynamic>;

template <typename S>
ConstRowsMap<S> as_rows(const Array<S>& a, Index cols) {
  return ConstRowsMap<S>(a.data(), a.size() / cols, cols);
}
template <typename S>
RowsMap<S> as_rows(Array<S>& a, Index cols) {
  return RowsMap<S>(a.data(), a.size() / cols, cols);
}

template <typename S>
detail::TensorImpl<S>& impl_of(const Tensor<S>& t) {
  return *t.impl();
}

[[noreturn]] void shape_mismatch(const std::string& op, const Shape& a, const Shape& b) {
  throw DimensionError(op + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

template <typename S>
void require_rank(const Tensor<S>& t, Index rank, const std::string& op) {
  if (t.rank() != rank) {
    throw DimensionError(op + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(t.shape()));
  }
}

template <typename S>
void require_channels(const Tensor<S>& t, const std::string& op) {
  if (t.rank() == 0 || t.dim(-1) == 0) {
    throw DimensionError(op + ": channel axis must be non-empty, got shape " + shape_string(t.shape()));
  }
}

enum class Broadcast { same, rhs_channel, lhs_channel };

template <typename S>
Broadcast resolve_broadcast(const Tensor<S>& a, const Tensor<S>& b, const std::string& op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.rank() == 1 && a.rank() >= 1 && b.dim(0) == a.dim(-1)) return Broadcast::rhs_channel;
  if (a.rank() == 1 && b.rank() >= 1 && a.dim(0) == b.dim(-1)) return Broadcast::lhs_channel;
  shape_mismatch(op, a.shape(), b.shape());
}

// Accumulates a full-shape gradient into `target`, reducing over rows when
// `target` is the broadcast channel vector.
template <typename S, typename Expr>
void accumulate(detail::TensorImpl<S>& target, bool is_vector, Index channels, const Expr& full_grad) {
  Array<S>* g = grad_sink(target);
  if (!g) return;
  if (is_vector) {
    *g += full_grad.colwise().sum().transpose();
  } else {
    as_rows(*g, channels) += full_grad;
  }
}

}  // namespace

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  const Broadcast bc = resolve_broadcast(a, b, "add");
  if (bc == Broadcast::same) {
    auto* ia = &impl_of(a);
    auto* ib = &impl_of(b);
    return make_op_result<S>(a.shape(), a.values() + b.values(), "add", {&a, &b}, [ia, ib](const Array<S>& g) {
      if (auto* ga = grad_sink(*ia)) *ga += g;
      if (auto* gb = grad_sink(*ib)) *gb += g;
    });
  }
  const bool rhs_vec = bc == Broadcast::rhs_channel;
  const Tensor<S>& full = rhs_vec ? a : b;
  const Tensor<S>& vec = rhs_vec ? b : a;
  const Index d = vec.size();
  Array<S> out(full.size());
  as_rows(out, d) = as_rows(full.values(), d).rowwise() + vec.values().transpose();
  auto* ifull = &impl_of(full);
  auto* ivec = &impl_of(vec);
  return make_op_result<S>(full.shape(), std::move(out), "add", {&a, &b}, [ifull, ivec, d](const Array<S>& g) {
    const auto G = as_rows(g, d);
    accumulate(*ifull, false, d, G);
    accumulate(*ivec, true, d, G);
  });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  const Broadcast bc = resolve_broadcast(a, b, "sub");
  auto* ia = &impl_of(a);
  auto* ib = &impl_of(b);
  if (bc == Broadcast::same) {
    return make_op_result<S>(a.shape(), a.values() - b.values(), "sub", {&a, &b}, [ia, ib](const Array<S>& g) {
      if (auto* ga = grad_sink(*ia)) *ga += g;
      if (auto* gb = grad_sink(*ib)) *gb -= g;
    });
  }
  const bool rhs_vec = bc == Broadcast::rhs_channel;
  const Index d = rhs_vec ? b.size() : a.size();
  Array<S> out(rhs_vec ? a.size() : b.size());
  if (rhs_vec) {
    as_rows(out, d) = as_rows(a.values(), d).rowwise() - b.values().transpose();
  } else {
    as_rows(out, d) = (-as_rows(b.values(), d)).rowwise() + a.values().transpose();
  }
  const Shape& shape = rhs_vec ? a.shape() : b.shape();
  return make_op_result<S>(shape, std::move(out), "sub", {&a, &b}, [ia, ib, d, rhs_vec](const Array<S>& g) {
    const auto G = as_rows(g, d);
    accumulate(*ia, !rhs_vec, d, G);
    accumulate(*ib, rhs_vec, d, -G);
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  const Broadcast bc = resolve_broadcast(a, b, "mul");
  auto* ia = &impl_of(a);
  auto* ib = &impl_of(b);
  if (bc == Broadcast::same) {
    return make_op_result<S>(a.shape(), a.values() * b.values(), "mul", {&a, &b}, [ia, ib](const Array<S>& g) {
      if (auto* ga = grad_sink(*ia)) *ga += g * ib->values;
      if (auto* gb = grad_sink(*ib)) *gb += g * ia->values;
    });
  }
  const bool rhs_vec = bc == Broadcast::rhs_channel;
  auto* ifull = rhs_vec ? ia : ib;
  auto* ivec = rhs_vec ? ib : ia;
  const Index d = ivec->values.size();
  Array<S> out(ifull->values.size());
  as_rows(out, d) = as_rows(ifull->values, d).rowwise() * ivec->values.transpose();
  return make_op_result<S>(ifull->shape, std::move(out), "mul", {&a, &b}, [ifull, ivec, d](const Array<S>& g) {
    const auto G = as_rows(g, d);
    accumulate(*ifull, false, d, (G.rowwise() * ivec->values.transpose()).eval());
    accumulate(*ivec, true, d, (G * as_rows(ifull->values, d)).eval());
  });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S k) {
  auto* ia = &impl_of(a);
  return make_op_result<S>(a.shape(), a.values() * k, "scale", {&a}, [ia, k](const Array<S>& g) {
    if (auto* ga = grad_sink(*ia)) *ga += g * k;
  });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  auto* ia = &impl_of(a);
  Array<S> out(1);
  out[0] = a.values().sum();
  return make_op_result<S>({}, std::move(out), "sum", {&a}, [ia](const Array<S>& g) {
    if (auto* ga = grad_sink(*ia)) *ga += g[0];
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  if (a.size() == 0) throw DimensionError("mean of empty tensor");
  auto* ia = &impl_of(a);
  const S n = static_cast<S>(a.size());
  Array<S> out(1);
  out[0] = a.values().sum() / n;
  return make_op_result<S>({}, std::move(out), "mean", {&a}, [ia, n](const Array<S>& g) {
    if (auto* ga = grad_sink(*ia)) *ga += g[0] / n;
  });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_size(shape) != a.size()) shape_mismatch("reshape", a.shape(), shape);
  auto* ia = &impl_of(a);
  return make_op_result<S>(std::move(shape), a.values(), "reshape", {&a}, [ia](const Array<S>& g) {
    if (auto* ga = grad_sink(*ia)) *ga += g;
  });
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_mismatch("matmul", a.shape(), b.shape());
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Array<S> out(m * n);
  MatrixMap<S>(out.data(), m, n).noalias() =
      ConstMatrixMap<S>(a.values().data(), m, k) * ConstMatrixMap<S>(b.values().data(), k, n);
  auto* ia = &impl_of(a);
  auto* ib = &impl_of(b);
  return make_op_result<S>({m, n}, std::move(out), "matmul", {&a, &b}, [ia, ib, m, k, n](const Array<S>& g) {
    const ConstMatrixMap<S> G(g.data(), m, n);
    if (auto* ga = grad_sink(*ia)) {
      MatrixMap<S>(ga->data(), m, k).noalias() += G * ConstMatrixMap<S>(ib->values.data(), k, n).transpose();
    }
    if (auto* gb = grad_sink(*ib)) {
      MatrixMap<S>(gb->data(), k, n).noalias() += ConstMatrixMap<S>(ia->values.data(), m, k).transpose() * G;
    }
  });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (weight.rank() != 2 || x.rank() == 0 || x.dim(-1) != weight.dim(0)) {
    shape_mismatch("linear", x.shape(), weight.shape());
  }
  const Index k = weight.dim(0), n = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != n)) shape_mismatch("linear", weight.shape(), bias.shape());
  const Index rows = x.size() / k;
  Shape shape = x.shape();
  shape.back() = n;
  Array<S> out(rows * n);
  MatrixMap<S> Y(out.data(), rows, n);
  Y.noalias() = ConstMatrixMap<S>(x.values().data(), rows, k) * ConstMatrixMap<S>(weight.values().data(), k, n);
  if (bias.defined()) Y.rowwise() += bias.values().matrix().transpose();

  auto* ix = &impl_of(x);
  auto* iw = &impl_of(weight);
  auto* ib = bias.defined() ? &impl_of(bias) : nullptr;
  std::vector<const Tensor<S>*> inputs{&x, &weight};
  if (bias.defined()) inputs.push_back(&bias);
  return make_op_result<S>(std::move(shape), std::move(out), "linear", inputs,
                           [ix, iw, ib, rows, k, n](const Array<S>& g) {
                             const ConstMatrixMap<S> G(g.data(), rows, n);
                             if (auto* gx = grad_sink(*ix)) {
                               MatrixMap<S>(gx->data(), rows, k).noalias() +=
                                   G * ConstMatrixMap<S>(iw->values.data(), k, n).transpose();
                             }
                             if (auto* gw = grad_sink(*iw)) {
                               MatrixMap<S>(gw->data(), k, n).noalias() +=
                                   ConstMatrixMap<S>(ix->values.data(), rows, k).transpose() * G;
                             }
                             if (ib) {
                               if (auto* gb = grad_sink(*ib)) *gb += G.colwise().sum().transpose().array();
                             }
                           });
}

namespace {

// out[r, c] = in[r, (c + s) mod d]
template <typename S>
void roll_rows(const S* in, S* out, Index rows, Index d, Index s) {
  for (Index r = 0; r < rows; ++r) {
    const S* src = in + r * d;
    S* dst = out + r * d;
    std::copy(src + s, src + d, dst);
    std::copy(src, src + s, dst + (d - s));
  }
}

}  // namespace

template <typename S>
Tensor<S> roll_channels(const Tensor<S>& x, Index s) {
  require_channels(x, "roll_channels");
  const Index d = x.dim(-1);
  const Index shift = ((s % d) + d) % d;
  const Index rows = x.size() / d;
  Array<S> out(x.size());
  roll_rows(x.values().data(), out.data(), rows, d, shift);
  auto* ix = &impl_of(x);
  return make_op_result<S>(x.shape(), std::move(out), "roll_channels", {&x}, [ix, rows, d, shift](const Array<S>& g) {
    if (auto* gx = grad_sink(*ix)) {
      Array<S> back(g.size());
      roll_rows(g.data(), back.data(), rows, d, (d - shift) % d);
      *gx += back;
    }
  });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Array<S> y = S(1) / (S(1) + (-x.values()).exp());
  auto* ix = &impl_of(x);
  Array<S> saved = y;
  return make_op_result<S>(x.shape(), std::move(y), "sigmoid", {&x}, [ix, y = std::move(saved)](const Array<S>& g) {
    if (auto* gx = grad_sink(*ix)) *gx += g * y * (S(1) - y);
  });
}

template <typename S>
Tensor<S> silu(const Tensor<S>& x) {
  Array<S> sig = S(1) / (S(1) + (-x.values()).exp());
  auto* ix = &impl_of(x);
  Array<S> y = x.values() * sig;
  return make_op_result<S>(x.shape(), std::move(y), "silu", {&x}, [ix, sig = std::move(sig)](const Array<S>& g) {
    if (auto* gx = grad_sink(*ix)) *gx += g * sig * (S(1) + ix->values * (S(1) - sig));
  });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias) {
  require_channels(x, "layer_norm");
  const Index d = x.dim(-1);
  if (gain.size() != d || bias.size() != d) shape_mismatch("layer_norm", x.shape(), gain.shape());
  const auto X = as_rows(x.values(), d);
  const Index rows = X.rows();
  const S eps = static_cast<S>(kNormEpsilon);

  Array<S> mu = X.rowwise().mean();
  Rows<S> xhat = X.colwise() - mu;
  Array<S> rstd = (xhat.square().rowwise().mean() + eps).rsqrt();
  xhat.colwise() *= rstd;

  Array<S> out(x.size());
  as_rows(out, d) = (xhat.rowwise() * gain.values().transpose()).rowwise() + bias.values().transpose();

  auto* ix = &impl_of(x);
  auto* ig = &impl_of(gain);
  auto* ib = &impl_of(bias);
  return make_op_result<S>(
      x.shape(), std::move(out), "layer_norm", {&x, &gain, &bias},
      [ix, ig, ib, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](const Array<S>& g) {
        const auto G = as_rows(g, d);
        if (auto* gx = grad_sink(*ix)) {
          Rows<S> gxhat = G.rowwise() * ig->values.transpose();
          Array<S> m1 = gxhat.rowwise().mean();
          Array<S> m2 = (gxhat * xhat).rowwise().mean();
          gxhat.colwise() -= m1;
          gxhat -= xhat.colwise() * m2;
          gxhat.colwise() *= rstd;
          as_rows(*gx, d) += gxhat;
        }
        if (auto* gg = grad_sink(*ig)) *gg += (G * xhat).colwise().sum().transpose();
        if (auto* gb = grad_sink(*ib)) *gb += G.colwise().sum().transpose();
        (void)rows;
      });
}

template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     BatchNormState<S>& state, bool training) {
  require_channels(x, "batch_norm");
  const Index d = x.dim(-1);
  if (gain.size() != d || bias.size() != d || state.running_mean.size() != d) {
    shape_mismatch("batch_norm", x.shape(), gain.shape());
  }
  const auto X = as_rows(x.values(), d);
  const Index n = X.rows();
  const S eps = static_cast<S>(kNormEpsilon);

  RowVec<S> mu;
  RowVec<S> rstd;
  if (training) {
    mu = X.colwise().mean();
    RowVec<S> var = (X.rowwise() - mu).square().colwise().mean();
    rstd = (var + eps).rsqrt();
    const S m = state.momentum;
    const S unbiased = n > 1 ? static_cast<S>(n) / static_cast<S>(n - 1) : S(1);
    state.running_mean = (S(1) - m) * state.running_mean + m * mu.transpose();
    state.running_var = (S(1) - m) * state.running_var + m * unbiased * var.transpose();
  } else {
    mu = state.running_mean.transpose();
    rstd = (state.running_var.transpose() + eps).rsqrt();
  }
  Rows<S> xhat = (X.rowwise() - mu).rowwise() * rstd;
  Array<S> out(x.size());
  as_rows(out, d) = (xhat.rowwise() * gain.values().transpose()).rowwise() + bias.values().transpose();

  auto* ix = &impl_of(x);
  auto* ig = &impl_of(gain);
  auto* ib = &impl_of(bias);
  return make_op_result<S>(
      x.shape(), std::move(out), "batch_norm", {&x, &gain, &bias},
      [ix, ig, ib, d, training, xhat = std::move(xhat), rstd = std::move(rstd)](const Array<S>& g) {
        const auto G = as_rows(g, d);
        if (auto* gx = grad_sink(*ix)) {
          Rows<S> gxhat = G.rowwise() * ig->values.transpose();
          if (training) {
            RowVec<S> m1 = gxhat.colwise().mean();
            RowVec<S> m2 = (gxhat * xhat).colwise().mean();
            gxhat.rowwise() -= m1;
            gxhat -= xhat.rowwise() * m2;
          }
          gxhat.rowwise() *= rstd;
          as_rows(*gx, d) += gxhat;
        }
        if (auto* gg = grad_sink(*ig)) *gg += (G * xhat).colwise().sum().transpose();
        if (auto* gb = grad_sink(*ib)) *gb += G.colwise().sum().transpose();
      });
}

template <typename S>
Tensor<S> dw_conv3x3(const Tensor<S>& x, const Tensor<S>& kernels, const Tensor<S>& bias) {
  require_rank(x, 4, "dw_conv3x3");
  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2), d = x.dim(3);
  if (kernels.shape() != Shape{d, 3, 3}) shape_mismatch("dw_conv3x3", x.shape(), kernels.shape());
  if (bias.defined() && bias.size() != d) shape_mismatch("dw_conv3x3", x.shape(), bias.shape());

  // taps(t, c) = kernels[c, t / 3, t % 3]
  Rows<S> taps = as_rows(kernels.values(), 9).transpose();
  Array<S> out(x.size());
  if (bias.defined()) {
    as_rows(out, d).rowwise() = bias.values().transpose();
  } else {
    out.setZero();
  }
  const S* in = x.values().data();
  auto row_at = [=](const S* base, Index b, Index y, Index xx) { return base + ((b * H + y) * W + xx) * d; };
  for (Index b = 0; b < B; ++b) {
    for (Index y = 0; y < H; ++y) {
      for (Index xx = 0; xx < W; ++xx) {
        Eigen::Map<RowVec<S>> o(out.data() + ((b * H + y) * W + xx) * d, d);
        for (Index ky = 0; ky < 3; ++ky) {
          const Index iy = y + ky - 1;
          if (iy < 0 || iy >= H) continue;
          for (Index kx = 0; kx < 3; ++kx) {
            const Index ix = xx + kx - 1;
            if (ix < 0 || ix >= W) continue;
            o += taps.row(ky * 3 + kx) * Eigen::Map<const RowVec<S>>(row_at(in, b, iy, ix), d);
          }
        }
      }
    }
  }

  auto* pix = &impl_of(x);
  auto* ik = &impl_of(kernels);
  auto* ib = bias.defined() ? &impl_of(bias) : nullptr;
  std::vector<const Tensor<S>*> inputs{&x, &kernels};
  if (bias.defined()) inputs.push_back(&bias);
  return make_op_result<S>(
      x.shape(), std::move(out), "dw_conv3x3", inputs,
      [pix, ik, ib, B, H, W, d, taps = std::move(taps)](const Array<S>& g) {
        Array<S>* gx = grad_sink(*pix);
        Array<S>* gk = grad_sink(*ik);
        Rows<S> gtaps = Rows<S>::Zero(9, d);
        const S* in = pix->values.data();
        for (Index b = 0; b < B; ++b) {
          for (Index y = 0; y < H; ++y) {
            for (Index xx = 0; xx < W; ++xx) {
              Eigen::Map<const RowVec<S>> go(g.data() + ((b * H + y) * W + xx) * d, d);
              for (Index ky = 0; ky < 3; ++ky) {
                const Index iy = y + ky - 1;
                if (iy < 0 || iy >= H) continue;
                for (Index kx = 0; kx < 3; ++kx) {
                  const Index ix = xx + kx - 1;
                  if (ix < 0 || ix >= W) continue;
                  const Index t = ky * 3 + kx;
                  const Index off = ((b * H + iy) * W + ix) * d;
                  if (gx) Eigen::Map<RowVec<S>>(gx->data() + off, d) += taps.row(t) * go;
                  if (gk) gtaps.row(t) += Eigen::Map<const RowVec<S>>(in + off, d) * go;
                }
              }
            }
          }
        }
        if (gk) as_rows(*gk, 9) += gtaps.transpose();
        if (ib) {
          if (auto* gb = grad_sink(*ib)) *gb += as_rows(g, d).colwise().sum().transpose();
        }
      });
}

template <typename S>
Tensor<S> conv_patch_embed(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, Index patch) {
  require_rank(x, 4, "conv_patch_embed");
  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (patch <= 0 || H % patch != 0 || W % patch != 0) {
    throw ConfigError("conv_patch_embed: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
  if (weight.rank() != 4 || weight.dim(0) != patch || weight.dim(1) != patch || weight.dim(2) != C) {
    shape_mismatch("conv_patch_embed", x.shape(), weight.shape());
  }
  const Index d = weight.dim(3);
  if (bias.defined() && bias.size() != d) shape_mismatch("conv_patch_embed", weight.shape(), bias.shape());
  const Index h = H / patch, w = W / patch;
  const Index rows = B * h * w, k = patch * patch * C;
  const Index span = patch * C;

  auto gather = [=](const S* src, S* cols) {
    for (Index b = 0; b < B; ++b)
      for (Index ty = 0; ty < h; ++ty)
        for (Index tx = 0; tx < w; ++tx) {
          S* dst = cols + ((b * h + ty) * w + tx) * k;
          for (Index py = 0; py < patch; ++py) {
            const S* s = src + ((b * H + ty * patch + py) * W + tx * patch) * C;
            std::copy(s, s + span, dst + py * span);
          }
        }
  };

  Array<S> patches(rows * k);
  gather(x.values().data(), patches.data());
  Array<S> out(rows * d);
  MatrixMap<S> Y(out.data(), rows, d);
  Y.noalias() = ConstMatrixMap<S>(patches.data(), rows, k) * ConstMatrixMap<S>(weight.values().data(), k, d);
  if (bias.defined()) Y.rowwise() += bias.values().matrix().transpose();

  auto* ix = &impl_of(x);
  auto* iw = &impl_of(weight);
  auto* ib = bias.defined() ? &impl_of(bias) : nullptr;
  std::vector<const Tensor<S>*> inputs{&x, &weight};
  if (bias.defined()) inputs.push_back(&bias);
  return make_op_result<S>(
      {B, h, w, d}, std::move(out), "conv_patch_embed", inputs,
      [=, patches = std::move(patches)](const Array<S>& g) {
        const ConstMatrixMap<S> G(g.data(), rows, d);
        if (auto* gw = grad_sink(*iw)) {
          MatrixMap<S>(gw->data(), k, d).noalias() += ConstMatrixMap<S>(patches.data(), rows, k).transpose() * G;
        }
        if (ib) {
          if (auto* gb = grad_sink(*ib)) *gb += G.colwise().sum().transpose().array();
        }
        if (auto* gx = grad_sink(*ix)) {
          Matrix<S> gcols = G * ConstMatrixMap<S>(iw->values.data(), k, d).transpose();
          for (Index b = 0; b < B; ++b)
            for (Index ty = 0; ty < h; ++ty)
              for (Index tx = 0; tx < w; ++tx) {
                const S* src = gcols.data() + ((b * h + ty) * w + tx) * k;
                for (Index py = 0; py < patch; ++py) {
                  S* dst = gx->data() + ((b * H + ty * patch + py) * W + tx * patch) * C;
                  for (Index i = 0; i < span; ++i) dst[i] += src[py * span + i];
                }
              }
        }
      });
}

template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  require_rank(x, 4, "global_avg_pool");
  const Index B = x.dim(0), n = x.dim(1) * x.dim(2), d = x.dim(3);
  if (n == 0) throw DimensionError("global_avg_pool: empty spatial grid");
  Array<S> out(B * d);
  for (Index b = 0; b < B; ++b) {
    out.segment(b * d, d) =
        ConstRowsMap<S>(x.values().data() + b * n * d, n, d).colwise().mean().transpose();
  }
  auto* ix = &impl_of(x);
  return make_op_result<S>({B, d}, std::move(out), "global_avg_pool", {&x}, [ix, B, n, d](const Array<S>& g) {
    if (auto* gx = grad_sink(*ix)) {
      for (Index b = 0; b < B; ++b) {
        RowsMap<S>(gx->data() + b * n * d, n, d).rowwise() +=
            g.segment(b * d, d).transpose() / static_cast<S>(n);
      }
    }
  });
}

template <typename S>
Tensor<S> broadcast_tokens(const Tensor<S>& v, Index h, Index w) {
  require_rank(v, 2, "broadcast_tokens");
  const Index B = v.dim(0), d = v.dim(1), n = h * w;
  Array<S> out(B * n * d);
  for (Index b = 0; b < B; ++b) {
    RowsMap<S>(out.data() + b * n * d, n, d).rowwise() = v.values().segment(b * d, d).transpose();
  }
  auto* iv = &impl_of(v);
  return make_op_result<S>({B, h, w, d}, std::move(out), "broadcast_tokens", {&v}, [iv, B, n, d](const Array<S>& g) {
    if (auto* gv = grad_sink(*iv)) {
      for (Index b = 0; b < B; ++b) {
        gv->segment(b * d, d) += ConstRowsMap<S>(g.data() + b * n * d, n, d).colwise().sum().transpose();
      }
    }
  });
}

template <typename S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& xs) {
  if (xs.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape& first = xs.front().shape();
  Index total = 0;
  for (const auto& t : xs) {
    require_channels(t, "concat_channels");
    if (t.rank() != static_cast<Index>(first.size()) ||
        !std::equal(first.begin(), first.end() - 1, t.shape().begin())) {
      shape_mismatch("concat_channels", first, t.shape());
    }
    total += t.dim(-1);
  }
  const Index rows = xs.front().size() / xs.front().dim(-1);
  Array<S> out(rows * total);
  RowsMap<S> O(out.data(), rows, total);
  std::vector<detail::TensorImpl<S>*> impls;
  std::vector<Index> widths;
  std::vector<const Tensor<S>*> inputs;
  Index offset = 0;
  for (const auto& t : xs) {
    const Index d = t.dim(-1);
    O.middleCols(offset, d) = as_rows(t.values(), d);
    offset += d;
    impls.push_back(&impl_of(t));
    widths.push_back(d);
    inputs.push_back(&t);
  }
  Shape shape = first;
  shape.back() = total;
  return make_op_result<S>(std::move(shape), std::move(out), "concat_channels", inputs,
                           [impls, widths, rows, total](const Array<S>& g) {
                             const ConstRowsMap<S> G(g.data(), rows, total);
                             Index off = 0;
                             for (std::size_t i = 0; i < impls.size(); ++i) {
                               if (auto* gi = grad_sink(*impls[i])) as_rows(*gi, widths[i]) += G.middleCols(off, widths[i]);
                               off += widths[i];
                             }
                           });
}

template <typename S>
Tensor<S> scale_samples(const Tensor<S>& x, std::span<const S> factors) {
  if (x.rank() == 0 || static_cast<Index>(factors.size()) != x.dim(0)) {
    throw DimensionError("scale_samples: " + std::to_string(factors.size()) + " factors for shape " +
                         shape_string(x.shape()));
  }
  const Index B = x.dim(0), per = x.size() / std::max<Index>(B, 1);
  Array<S> f(B);
  for (Index b = 0; b < B; ++b) f[b] = factors[static_cast<std::size_t>(b)];
  Array<S> out(x.size());
  as_rows(out, per) = as_rows(x.values(), per).colwise() * f;
  auto* ix = &impl_of(x);
  return make_op_result<S>(x.shape(), std::move(out), "scale_samples", {&x}, [ix, per, f](const Array<S>& g) {
    if (auto* gx = grad_sink(*ix)) as_rows(*gx, per) += as_rows(g, per).colwise() * f;
  });
}

template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const Index B = logits.dim(0), C = logits.dim(1);
  if (static_cast<Index>(labels.size()) != B) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(logits.shape()));
  }
  for (int label : labels) {
    if (label < 0 || label >= C) {
      throw DataError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(C) + ")");
    }
  }
  const auto L = as_rows(logits.values(), C);
  Array<S> row_max = L.rowwise().maxCoeff();
  Rows<S> probs = (L.colwise() - row_max).exp();
  Array<S> denom = probs.rowwise().sum();
  probs.colwise() /= denom;
  S total = 0;
  for (Index b = 0; b < B; ++b) {
    total += std::log(denom[b]) + row_max[b] - L(b, labels[static_cast<std::size_t>(b)]);
  }
  Array<S> out(1);
  out[0] = total / static_cast<S>(B);
  std::vector<int> saved_labels(labels.begin(), labels.end());
  auto* il = &impl_of(logits);
  return make_op_result<S>({}, std::move(out), "cross_entropy", {&logits},
                           [il, B, C, probs = std::move(probs), saved_labels](const Array<S>& g) {
                             if (auto* gl = grad_sink(*il)) {
                               Rows<S> d = probs;
                               for (Index b = 0; b < B; ++b) d(b, saved_labels[static_cast<std::size_t>(b)]) -= S(1);
                               as_rows(*gl, C) += d * (g[0] / static_cast<S>(B));
                             }
                           });
}

#define CLIFFORD_INSTANTIATE(S)                                                                       \
  template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> sub<S>(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> scale<S>(const Tensor<S>&, S);                                                   \
  template Tensor<S> sum<S>(const Tensor<S>&);                                                        \
  template Tensor<S> mean<S>(const Tensor<S>&);                                                       \
  template Tensor<S> reshape<S>(const Tensor<S>&, Shape);                                             \
  template Tensor<S> matmul<S>(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> linear<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                 \
  template Tensor<S> roll_channels<S>(const Tensor<S>&, Index);                                       \
  template Tensor<S> sigmoid<S>(const Tensor<S>&);                                                    \
  template Tensor<S> silu<S>(const Tensor<S>&);                                                       \
  template Tensor<S> layer_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);             \
  template Tensor<S> batch_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,              \
                                   BatchNormState<S>&, bool);                                         \
  template Tensor<S> dw_conv3x3<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);             \
  template Tensor<S> conv_patch_embed<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index); \
  template Tensor<S> global_avg_pool<S>(const Tensor<S>&);                                            \
  template Tensor<S> broadcast_tokens<S>(const Tensor<S>&, Index, Index);                             \
  template Tensor<S> concat_channels<S>(const std::vector<Tensor<S>>&);                               \
  template Tensor<S> scale_samples<S>(const Tensor<S>&, std::span<const S>);                          \
  template Tensor<S> cross_entropy<S>(const Tensor<S>&, std::span<const int>);

CLIFFORD_INSTANTIATE(float)
CLIFFORD_INSTANTIATE(double)

#undef CLIFFORD_INSTANTIATE

}  // namespace clifford
