#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "rotdet/tensor.hpp"

namespace rotdet {

namespace detail {

inline void require_cfg(bool cond, const char* msg) {
    if (!cond) throw ConfigError(msg);
}

template <class S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ConfigError(std::string(op) + ": operand shapes differ");
    }
}

template <class S>
void require_rank(const Tensor<S>& t, int rank, const char* op) {
    if (t.rank() != rank) {
        throw ConfigError(std::string(op) + ": unexpected tensor rank");
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (identical shapes).
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "add");
    auto an = a.node(), bn = b.node();
    return detail::make_op<S>(a.shape(), ArrayX<S>(a.value() + b.value()), {a, b},
                              [an, bn](const ArrayX<S>& g) {
                                  if (an->needs_grad) an->accumulate(g);
                                  if (bn->needs_grad) bn->accumulate(g);
                              });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "sub");
    auto an = a.node(), bn = b.node();
    return detail::make_op<S>(a.shape(), ArrayX<S>(a.value() - b.value()), {a, b},
                              [an, bn](const ArrayX<S>& g) {
                                  if (an->needs_grad) an->accumulate(g);
                                  if (bn->needs_grad) bn->accumulate(ArrayX<S>(-g));
                              });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "mul");
    auto an = a.node(), bn = b.node();
    return detail::make_op<S>(a.shape(), ArrayX<S>(a.value() * b.value()), {a, b},
                              [an, bn](const ArrayX<S>& g) {
                                  if (an->needs_grad) an->accumulate(ArrayX<S>(g * bn->value));
                                  if (bn->needs_grad) bn->accumulate(ArrayX<S>(g * an->value));
                              });
}

template <class S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "div");
    auto an = a.node(), bn = b.node();
    return detail::make_op<S>(a.shape(), ArrayX<S>(a.value() / b.value()), {a, b},
                              [an, bn](const ArrayX<S>& g) {
                                  if (an->needs_grad) an->accumulate(ArrayX<S>(g / bn->value));
                                  if (bn->needs_grad) {
                                      bn->accumulate(ArrayX<S>(-g * an->value / (bn->value * bn->value)));
                                  }
                              });
}

// Elementwise minimum; ties route the gradient to the first argument.
template <class S>
Tensor<S> cwise_min(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "cwise_min");
    auto an = a.node(), bn = b.node();
    return detail::make_op<S>(a.shape(), ArrayX<S>(a.value().min(b.value())), {a, b},
                              [an, bn](const ArrayX<S>& g) {
                                  ArrayX<S> take_a = (an->value <= bn->value).template cast<S>();
                                  if (an->needs_grad) an->accumulate(ArrayX<S>(g * take_a));
                                  if (bn->needs_grad) bn->accumulate(ArrayX<S>(g * (S(1) - take_a)));
                              });
}

template <class S>
Tensor<S> scalar_affine(const Tensor<S>& x, S scale, S offset) {
    auto xn = x.node();
    return detail::make_op<S>(x.shape(), ArrayX<S>(x.value() * scale + offset), {x},
                              [xn, scale](const ArrayX<S>& g) {
                                  if (xn->needs_grad) xn->accumulate(ArrayX<S>(g * scale));
                              });
}

// ---------------------------------------------------------------------------
// Activations.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
    auto xn = x.node();
    return detail::make_op<S>(x.shape(), ArrayX<S>(x.value().max(S(0))), {x},
                              [xn](const ArrayX<S>& g) {
                                  if (!xn->needs_grad) return;
                                  ArrayX<S> m = (xn->value > S(0)).template cast<S>();
                                  xn->accumulate(ArrayX<S>(g * m));
                              });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    auto xn = x.node();
    ArrayX<S> y = x.value().logistic();
    auto out = detail::make_op<S>(x.shape(), std::move(y), {x}, [xn](const ArrayX<S>&) {});
    if (out.needs_grad()) {
        auto on = out.node();
        on->backward_fn = [xn, on](const ArrayX<S>& g) {
            if (xn->needs_grad) xn->accumulate(ArrayX<S>(g * on->value * (S(1) - on->value)));
        };
    }
    return out;
}

template <class S>
Tensor<S> tanh(const Tensor<S>& x) {
    auto xn = x.node();
    ArrayX<S> y = x.value().tanh();
    auto out = detail::make_op<S>(x.shape(), std::move(y), {x}, [xn](const ArrayX<S>&) {});
    if (out.needs_grad()) {
        auto on = out.node();
        on->backward_fn = [xn, on](const ArrayX<S>& g) {
            if (xn->needs_grad) xn->accumulate(ArrayX<S>(g * (S(1) - on->value * on->value)));
        };
    }
    return out;
}

template <class S>
Tensor<S> cwise_cos(const Tensor<S>& x) {
    auto xn = x.node();
    return detail::make_op<S>(x.shape(), ArrayX<S>(x.value().cos()), {x},
                              [xn](const ArrayX<S>& g) {
                                  if (xn->needs_grad) xn->accumulate(ArrayX<S>(-g * xn->value.sin()));
                              });
}

template <class S>
Tensor<S> cwise_log(const Tensor<S>& x) {
    auto xn = x.node();
    return detail::make_op<S>(x.shape(), ArrayX<S>(x.value().log()), {x},
                              [xn](const ArrayX<S>& g) {
                                  if (xn->needs_grad) xn->accumulate(ArrayX<S>(g / xn->value));
                              });
}

// ---------------------------------------------------------------------------
// Shape ops.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_rank(a, 4, "concat_channels");
    detail::require_rank(b, 4, "concat_channels");
    detail::require_cfg(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
                        "concat_channels: batch or spatial extents differ");
    const int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    const long plane = static_cast<long>(H) * W;
    ArrayX<S> v(static_cast<long>(B) * (Ca + Cb) * plane);
    for (int n = 0; n < B; ++n) {
        v.segment(static_cast<long>(n) * (Ca + Cb) * plane, Ca * plane) =
            a.value().segment(static_cast<long>(n) * Ca * plane, Ca * plane);
        v.segment(static_cast<long>(n) * (Ca + Cb) * plane + Ca * plane, Cb * plane) =
            b.value().segment(static_cast<long>(n) * Cb * plane, Cb * plane);
    }
    auto an = a.node(), bn = b.node();
    return detail::make_op<S>({B, Ca + Cb, H, W}, std::move(v), {a, b},
                              [an, bn, B, Ca, Cb, plane](const ArrayX<S>& g) {
                                  if (an->needs_grad) {
                                      ArrayX<S> ga(an->value.size());
                                      for (int n = 0; n < B; ++n) {
                                          ga.segment(static_cast<long>(n) * Ca * plane, Ca * plane) =
                                              g.segment(static_cast<long>(n) * (Ca + Cb) * plane, Ca * plane);
                                      }
                                      an->accumulate(ga);
                                  }
                                  if (bn->needs_grad) {
                                      ArrayX<S> gb(bn->value.size());
                                      for (int n = 0; n < B; ++n) {
                                          gb.segment(static_cast<long>(n) * Cb * plane, Cb * plane) =
                                              g.segment(static_cast<long>(n) * (Ca + Cb) * plane + Ca * plane,
                                                        Cb * plane);
                                      }
                                      bn->accumulate(gb);
                                  }
                              });
}

template <class S>
Tensor<S> slice_channels(const Tensor<S>& x, int first, int count) {
    detail::require_rank(x, 4, "slice_channels");
    detail::require_cfg(first >= 0 && count > 0 && first + count <= x.dim(1),
                        "slice_channels: channel range out of bounds");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const long plane = static_cast<long>(H) * W;
    ArrayX<S> v(static_cast<long>(B) * count * plane);
    for (int n = 0; n < B; ++n) {
        v.segment(static_cast<long>(n) * count * plane, count * plane) =
            x.value().segment((static_cast<long>(n) * C + first) * plane, count * plane);
    }
    auto xn = x.node();
    return detail::make_op<S>({B, count, H, W}, std::move(v), {x},
                              [xn, B, C, first, count, plane](const ArrayX<S>& g) {
                                  if (!xn->needs_grad) return;
                                  ArrayX<S> gx = ArrayX<S>::Zero(xn->value.size());
                                  for (int n = 0; n < B; ++n) {
                                      gx.segment((static_cast<long>(n) * C + first) * plane, count * plane) =
                                          g.segment(static_cast<long>(n) * count * plane, count * plane);
                                  }
                                  xn->accumulate(gx);
                              });
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reduce_sum(const Tensor<S>& x) {
    auto xn = x.node();
    ArrayX<S> v(1);
    v[0] = x.value().sum();
    return detail::make_op<S>({1}, std::move(v), {x},
                              [xn](const ArrayX<S>& g) {
                                  if (!xn->needs_grad) return;
                                  xn->accumulate(ArrayX<S>::Constant(xn->value.size(), g[0]));
                              });
}

// ---------------------------------------------------------------------------
// 2x2 pooling / unpooling.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> maxpool2(const Tensor<S>& x) {
    detail::require_rank(x, 4, "maxpool2");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    detail::require_cfg(H % 2 == 0 && W % 2 == 0, "maxpool2: spatial extents must be even");
    const int Ho = H / 2, Wo = W / 2;
    ArrayX<S> v(static_cast<long>(B) * C * Ho * Wo);
    auto argmax = std::make_shared<std::vector<long>>(static_cast<std::size_t>(v.size()));
    const auto& in = x.value();
    long o = 0;
    for (int n = 0; n < B; ++n) {
        for (int c = 0; c < C; ++c) {
            const long base = (static_cast<long>(n) * C + c) * H * W;
            for (int i = 0; i < Ho; ++i) {
                for (int j = 0; j < Wo; ++j) {
                    // first-found tie-break in row-major window order
                    long best_idx = base + (2L * i) * W + 2 * j;
                    S best = in[best_idx];
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const long idx = base + (2L * i + dy) * W + 2 * j + dx;
                            if (in[idx] > best) {
                                best = in[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    v[o] = best;
                    (*argmax)[static_cast<std::size_t>(o)] = best_idx;
                    ++o;
                }
            }
        }
    }
    auto xn = x.node();
    return detail::make_op<S>({B, C, Ho, Wo}, std::move(v), {x},
                              [xn, argmax](const ArrayX<S>& g) {
                                  if (!xn->needs_grad) return;
                                  ArrayX<S> gx = ArrayX<S>::Zero(xn->value.size());
                                  for (long k = 0; k < g.size(); ++k) {
                                      gx[(*argmax)[static_cast<std::size_t>(k)]] += g[k];
                                  }
                                  xn->accumulate(gx);
                              });
}

// Nearest-neighbour x2 upsampling: every value is replicated into a 2x2 block.
template <class S>
Tensor<S> unpool2(const Tensor<S>& x) {
    detail::require_rank(x, 4, "unpool2");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = H * 2, Wo = W * 2;
    ArrayX<S> v(static_cast<long>(B) * C * Ho * Wo);
    const auto& in = x.value();
    for (int n = 0; n < B; ++n) {
        for (int c = 0; c < C; ++c) {
            const long ibase = (static_cast<long>(n) * C + c) * H * W;
            const long obase = (static_cast<long>(n) * C + c) * Ho * Wo;
            for (int i = 0; i < H; ++i) {
                for (int j = 0; j < W; ++j) {
                    const S val = in[ibase + static_cast<long>(i) * W + j];
                    const long o = obase + (2L * i) * Wo + 2 * j;
                    v[o] = val;
                    v[o + 1] = val;
                    v[o + Wo] = val;
                    v[o + Wo + 1] = val;
                }
            }
        }
    }
    auto xn = x.node();
    return detail::make_op<S>({B, C, Ho, Wo}, std::move(v), {x},
                              [xn, B, C, H, W, Ho, Wo](const ArrayX<S>& g) {
                                  if (!xn->needs_grad) return;
                                  ArrayX<S> gx = ArrayX<S>::Zero(xn->value.size());
                                  for (int n = 0; n < B; ++n) {
                                      for (int c = 0; c < C; ++c) {
                                          const long ibase = (static_cast<long>(n) * C + c) * H * W;
                                          const long obase = (static_cast<long>(n) * C + c) * Ho * Wo;
                                          for (int i = 0; i < H; ++i) {
                                              for (int j = 0; j < W; ++j) {
                                                  const long o = obase + (2L * i) * Wo + 2 * j;
                                                  gx[ibase + static_cast<long>(i) * W + j] =
                                                      g[o] + g[o + 1] + g[o + Wo] + g[o + Wo + 1];
                                              }
                                          }
                                      }
                                  }
                                  xn->accumulate(gx);
                              });
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation), kernels 1x1 and 3x3, via im2col + GEMM.
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void im2col(const ArrayX<S>& x, int B, int C, int H, int W, int k, int stride, int pad,
            int Ho, int Wo, MatX<S>& cols) {
    for (int n = 0; n < B; ++n) {
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
                const long col = (static_cast<long>(n) * Ho + oy) * Wo + ox;
                long row = 0;
                for (int c = 0; c < C; ++c) {
                    const long cbase = (static_cast<long>(n) * C + c) * H * W;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        for (int kx = 0; kx < k; ++kx, ++row) {
                            const int ix = ox * stride - pad + kx;
                            cols(row, col) = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                                 ? x[cbase + static_cast<long>(iy) * W + ix]
                                                 : S(0);
                        }
                    }
                }
            }
        }
    }
}

template <class S>
void col2im_add(const MatX<S>& cols, int B, int C, int H, int W, int k, int stride, int pad,
                int Ho, int Wo, ArrayX<S>& gx) {
    for (int n = 0; n < B; ++n) {
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
                const long col = (static_cast<long>(n) * Ho + oy) * Wo + ox;
                long row = 0;
                for (int c = 0; c < C; ++c) {
                    const long cbase = (static_cast<long>(n) * C + c) * H * W;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        for (int kx = 0; kx < k; ++kx, ++row) {
                            const int ix = ox * stride - pad + kx;
                            if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
                                gx[cbase + static_cast<long>(iy) * W + ix] += cols(row, col);
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weights, const Tensor<S>& bias,
                 int stride = 1, int padding = 0) {
    detail::require_rank(input, 4, "conv2d");
    detail::require_rank(weights, 4, "conv2d weights");
    detail::require_rank(bias, 1, "conv2d bias");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int K = weights.dim(0), Cw = weights.dim(1), kh = weights.dim(2), kw = weights.dim(3);
    detail::require_cfg(kh == kw && (kh == 1 || kh == 3), "conv2d: kernel must be 1x1 or 3x3");
    detail::require_cfg(Cw == C, "conv2d: input channels do not match weight channels");
    detail::require_cfg(bias.dim(0) == K, "conv2d: bias length does not match output channels");
    detail::require_cfg(stride >= 1 && padding >= 0, "conv2d: invalid stride or padding");
    const int k = kh;
    const int Ho = (H + 2 * padding - k) / stride + 1;
    const int Wo = (W + 2 * padding - k) / stride + 1;
    detail::require_cfg(Ho >= 1 && Wo >= 1, "conv2d: output would be empty");

    const long rows = static_cast<long>(C) * k * k;
    const long ncols = static_cast<long>(B) * Ho * Wo;
    auto cols = std::make_shared<MatX<S>>(rows, ncols);
    detail::im2col(input.value(), B, C, H, W, k, stride, padding, Ho, Wo, *cols);

    using RowMajorMap =
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    RowMajorMap wm(weights.value().data(), K, rows);
    MatX<S> out_m = wm * (*cols);
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> bv(bias.value().data(), K);
    out_m.colwise() += bv;

    const long hw = static_cast<long>(Ho) * Wo;
    ArrayX<S> v(static_cast<long>(B) * K * hw);
    for (int n = 0; n < B; ++n) {
        for (int kk = 0; kk < K; ++kk) {
            const long obase = (static_cast<long>(n) * K + kk) * hw;
            for (long j = 0; j < hw; ++j) {
                v[obase + j] = out_m(kk, static_cast<long>(n) * hw + j);
            }
        }
    }

    auto xn = input.node(), wn = weights.node(), bn = bias.node();
    return detail::make_op<S>(
        {B, K, Ho, Wo}, std::move(v), {input, weights, bias},
        [xn, wn, bn, cols, B, C, H, W, K, k, stride, padding, Ho, Wo, hw, rows,
         ncols](const ArrayX<S>& g) {
            MatX<S> gm(K, ncols);
            for (int n = 0; n < B; ++n) {
                for (int kk = 0; kk < K; ++kk) {
                    const long obase = (static_cast<long>(n) * K + kk) * hw;
                    for (long j = 0; j < hw; ++j) {
                        gm(kk, static_cast<long>(n) * hw + j) = g[obase + j];
                    }
                }
            }
            if (bn->needs_grad) {
                ArrayX<S> gb(K);
                for (int kk = 0; kk < K; ++kk) gb[kk] = gm.row(kk).sum();
                bn->accumulate(gb);
            }
            if (wn->needs_grad) {
                MatX<S> gw = gm * cols->transpose();  // K x rows
                ArrayX<S> gwa(static_cast<long>(K) * rows);
                for (int kk = 0; kk < K; ++kk) {
                    for (long r = 0; r < rows; ++r) gwa[kk * rows + r] = gw(kk, r);
                }
                wn->accumulate(gwa);
            }
            if (xn->needs_grad) {
                using RM = Eigen::Map<
                    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
                RM wmap(wn->value.data(), K, rows);
                MatX<S> gcols = wmap.transpose() * gm;
                ArrayX<S> gx = ArrayX<S>::Zero(xn->value.size());
                detail::col2im_add(gcols, B, C, H, W, k, stride, padding, Ho, Wo, gx);
                xn->accumulate(gx);
            }
        });
}

// Same-padding helper for the stride-1 convs used throughout the network.
template <class S>
Tensor<S> conv2d_same(const Tensor<S>& input, const Tensor<S>& weights, const Tensor<S>& bias) {
    const int k = weights.dim(2);
    return conv2d(input, weights, bias, 1, (k - 1) / 2);
}

}  // namespace rotdet
