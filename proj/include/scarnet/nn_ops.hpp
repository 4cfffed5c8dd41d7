#ifndef SCARNET_NN_OPS_HPP
#define SCARNET_NN_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "scarnet/tensor.hpp"

namespace scarnet {

namespace detail {

// cols[(ci*kh*kw + ki*kw + kj), (i*W + j)] = x[ci, i+ki-pad, j+kj-pad], zero outside.
inline void im2col(const double* x, int ci, int h, int w, int kh, int kw, int pad,
                   std::vector<double>& cols) {
    const int hw = h * w;
    cols.assign(static_cast<std::size_t>(ci) * kh * kw * hw, 0.0);
    for (int c = 0; c < ci; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                double* row = cols.data() + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) * hw;
                const int di = ki - pad, dj = kj - pad;
                const int i0 = std::max(0, -di), i1 = std::min(h, h - di);
                const int j0 = std::max(0, -dj), j1 = std::min(w, w - dj);
                for (int i = i0; i < i1; ++i) {
                    const double* src = x + (static_cast<std::size_t>(c) * h + i + di) * w + dj;
                    double* dst = row + static_cast<std::size_t>(i) * w;
                    for (int j = j0; j < j1; ++j)
                        dst[j] = src[j];
                }
            }
        }
    }
}

// Scatter-add transpose of im2col.
inline void col2im(const std::vector<double>& cols, int ci, int h, int w, int kh, int kw, int pad,
                   double* x_grad) {
    const int hw = h * w;
    for (int c = 0; c < ci; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const double* row =
                    cols.data() + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) * hw;
                const int di = ki - pad, dj = kj - pad;
                const int i0 = std::max(0, -di), i1 = std::min(h, h - di);
                const int j0 = std::max(0, -dj), j1 = std::min(w, w - dj);
                for (int i = i0; i < i1; ++i) {
                    double* dst = x_grad + (static_cast<std::size_t>(c) * h + i + di) * w + dj;
                    const double* src = row + static_cast<std::size_t>(i) * w;
                    for (int j = j0; j < j1; ++j)
                        dst[j] += src[j];
                }
            }
        }
    }
}

} // namespace detail

// Stride-1 2D convolution, x[Ci,H,W] * w[Co,Ci,kh,kw] + b[Co] -> [Co,Ho,Wo].
// pad chosen by the caller (1 for 3x3 keeps H,W; 0 for 1x1).
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
    if (x.ndim() != 3 || w.ndim() != 4 || b.ndim() != 1)
        throw shape_error("conv2d: bad ranks " + shape_str(x.shape()) + ", " + shape_str(w.shape()));
    const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != ci)
        throw shape_error("conv2d: input channels " + std::to_string(ci) + " vs kernel " +
                          std::to_string(w.dim(1)));
    if (b.dim(0) != co)
        throw shape_error("conv2d: bias size mismatch");
    const int ho = h + 2 * pad - kh + 1, wo = wd + 2 * pad - kw + 1;
    if (ho != h || wo != wd)
        throw shape_error("conv2d: padding does not preserve spatial dims (pad=" +
                          std::to_string(pad) + ", k=" + std::to_string(kh) + ")");
    const int hw = h * wd;
    const int krows = ci * kh * kw;

    std::vector<double> cols;
    detail::im2col(x.data(), ci, h, wd, kh, kw, pad, cols);

    Tensor out = Tensor::uninit({co, h, wd});
    mat_map(out.values(), co, hw).noalias() =
        mat_map(w.values(), co, krows) * mat_map(cols, krows, hw);
    for (int c = 0; c < co; ++c) {
        double* row = out.data() + static_cast<std::size_t>(c) * hw;
        const double bias = b[c];
        for (int p = 0; p < hw; ++p)
            row[p] += bias;
    }

    detail::record(out, {x, w, b},
                   [xn = x.node(), wn = w.node(), bn = b.node(), ci, h, wd, kh, kw, pad, co, hw,
                    krows](detail::TensorNode& self) {
                       ECMap gy(self.grad.data(), co, hw);
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (int c = 0; c < co; ++c)
                               bn->grad[c] += gy.row(c).sum();
                       }
                       if (wn->requires_grad) {
                           // Recompute cols instead of caching them: the GEMMs dominate.
                           std::vector<double> cols;
                           detail::im2col(xn->value.data(), ci, h, wd, kh, kw, pad, cols);
                           wn->ensure_grad();
                           EMap(wn->grad.data(), co, krows).noalias() +=
                               gy * ECMap(cols.data(), krows, hw).transpose();
                       }
                       if (xn->requires_grad) {
                           std::vector<double> dcols(static_cast<std::size_t>(krows) * hw);
                           EMap(dcols.data(), krows, hw).noalias() =
                               ECMap(wn->value.data(), co, krows).transpose() * gy;
                           xn->ensure_grad();
                           detail::col2im(dcols, ci, h, wd, kh, kw, pad, xn->grad.data());
                       }
                   });
    return out;
}

// 2x2 stride-2 transposed convolution, x[Ci,H,W] * w[Ci,Co,2,2] + b[Co] -> [Co,2H,2W].
inline Tensor conv_transpose2d_2x(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 3 || w.ndim() != 4 || w.dim(2) != 2 || w.dim(3) != 2)
        throw shape_error("conv_transpose2d_2x: bad shapes");
    const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    if (w.dim(0) != ci)
        throw shape_error("conv_transpose2d_2x: channel mismatch");
    const int co = w.dim(1);
    if (b.dim(0) != co)
        throw shape_error("conv_transpose2d_2x: bias size mismatch");
    const int hw = h * wd;
    const int ho = 2 * h, wo = 2 * wd;

    // T = W^T X with W viewed as [Ci x (Co*4)]; stride == kernel so the
    // scatter has no overlaps.
    std::vector<double> t(static_cast<std::size_t>(co) * 4 * hw);
    mat_map(t, co * 4, hw).noalias() =
        mat_map(w.values(), ci, co * 4).transpose() * mat_map(x.values(), ci, hw);

    Tensor out = Tensor::uninit({co, ho, wo});
    for (int c = 0; c < co; ++c) {
        const double bias = b[c];
        for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) {
                const double* src = t.data() + (static_cast<std::size_t>(c) * 4 + di * 2 + dj) * hw;
                for (int i = 0; i < h; ++i) {
                    double* dst = out.data() +
                                  (static_cast<std::size_t>(c) * ho + 2 * i + di) * wo + dj;
                    const double* s = src + static_cast<std::size_t>(i) * wd;
                    for (int j = 0; j < wd; ++j)
                        dst[2 * j] = s[j] + bias;
                }
            }
    }

    detail::record(out, {x, w, b},
                   [xn = x.node(), wn = w.node(), bn = b.node(), ci, h, wd, co, hw, ho,
                    wo](detail::TensorNode& self) {
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (int c = 0; c < co; ++c) {
                               double s = 0.0;
                               const double* g = self.grad.data() +
                                                 static_cast<std::size_t>(c) * ho * wo;
                               for (int p = 0; p < ho * wo; ++p)
                                   s += g[p];
                               bn->grad[c] += s;
                           }
                       }
                       // Gather dT from the strided output grad.
                       std::vector<double> dt(static_cast<std::size_t>(co) * 4 * hw);
                       for (int c = 0; c < co; ++c)
                           for (int di = 0; di < 2; ++di)
                               for (int dj = 0; dj < 2; ++dj) {
                                   double* dst = dt.data() +
                                                 (static_cast<std::size_t>(c) * 4 + di * 2 + dj) * hw;
                                   for (int i = 0; i < h; ++i) {
                                       const double* src = self.grad.data() +
                                                           (static_cast<std::size_t>(c) * ho + 2 * i +
                                                            di) *
                                                               wo +
                                                           dj;
                                       double* d = dst + static_cast<std::size_t>(i) * wd;
                                       for (int j = 0; j < wd; ++j)
                                           d[j] = src[2 * j];
                                   }
                               }
                       if (xn->requires_grad) {
                           xn->ensure_grad();
                           EMap(xn->grad.data(), ci, hw).noalias() +=
                               ECMap(wn->value.data(), ci, co * 4) * ECMap(dt.data(), co * 4, hw);
                       }
                       if (wn->requires_grad) {
                           wn->ensure_grad();
                           EMap(wn->grad.data(), ci, co * 4).noalias() +=
                               ECMap(xn->value.data(), ci, hw) * ECMap(dt.data(), co * 4, hw).transpose();
                       }
                   });
    return out;
}

inline Tensor maxpool2x2(const Tensor& x) {
    if (x.ndim() != 3 || x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
        throw shape_error("maxpool2x2: dims must be even, got " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = h / 2, wo = w / 2;
    Tensor out = Tensor::uninit({c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(out.numel());
    for (int ch = 0; ch < c; ++ch) {
        const double* xp = x.data() + static_cast<std::size_t>(ch) * h * w;
        double* op = out.data() + static_cast<std::size_t>(ch) * ho * wo;
        std::int32_t* ap = argmax->data() + static_cast<std::size_t>(ch) * ho * wo;
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                int best = (2 * i) * w + 2 * j;
                double bv = xp[best];
                const int cand[3] = {(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                     (2 * i + 1) * w + 2 * j + 1};
                for (int k = 0; k < 3; ++k)
                    if (xp[cand[k]] > bv) {
                        bv = xp[cand[k]];
                        best = cand[k];
                    }
                op[static_cast<std::size_t>(i) * wo + j] = bv;
                ap[static_cast<std::size_t>(i) * wo + j] = best;
            }
    }
    detail::record(out, {x}, [xn = x.node(), argmax, c, h, w, ho, wo](detail::TensorNode& self) {
        if (!xn->requires_grad)
            return;
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            double* gx = xn->grad.data() + static_cast<std::size_t>(ch) * h * w;
            const double* gy = self.grad.data() + static_cast<std::size_t>(ch) * ho * wo;
            const std::int32_t* ap = argmax->data() + static_cast<std::size_t>(ch) * ho * wo;
            for (int p = 0; p < ho * wo; ++p)
                gx[ap[p]] += gy[p];
        }
    });
    return out;
}

// Non-overlapping block average pooling (block divides H and W).
inline Tensor avgpool_block(const Tensor& x, int block) {
    if (x.ndim() != 3 || block < 1 || x.dim(1) % block != 0 || x.dim(2) % block != 0)
        throw shape_error("avgpool_block: block " + std::to_string(block) + " on " +
                          shape_str(x.shape()));
    if (block == 1)
        return reshape(x, x.shape());
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = h / block, wo = w / block;
    const double inv = 1.0 / (static_cast<double>(block) * block);
    Tensor out = Tensor::uninit({c, ho, wo});
    for (int ch = 0; ch < c; ++ch) {
        const double* xp = x.data() + static_cast<std::size_t>(ch) * h * w;
        double* op = out.data() + static_cast<std::size_t>(ch) * ho * wo;
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                double s = 0.0;
                for (int bi = 0; bi < block; ++bi)
                    for (int bj = 0; bj < block; ++bj)
                        s += xp[(static_cast<std::size_t>(i) * block + bi) * w + j * block + bj];
                op[static_cast<std::size_t>(i) * wo + j] = s * inv;
            }
    }
    detail::record(out, {x}, [xn = x.node(), c, h, w, ho, wo, block, inv](detail::TensorNode& self) {
        if (!xn->requires_grad)
            return;
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            double* gx = xn->grad.data() + static_cast<std::size_t>(ch) * h * w;
            const double* gy = self.grad.data() + static_cast<std::size_t>(ch) * ho * wo;
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j) {
                    const double g = gy[static_cast<std::size_t>(i) * wo + j] * inv;
                    for (int bi = 0; bi < block; ++bi)
                        for (int bj = 0; bj < block; ++bj)
                            gx[(static_cast<std::size_t>(i) * block + bi) * w + j * block + bj] += g;
                }
        }
    });
    return out;
}

// [C,H,W] -> [C]
inline Tensor global_avg_pool(const Tensor& x) {
    if (x.ndim() != 3)
        throw shape_error("global_avg_pool: need [C,H,W], got " + shape_str(x.shape()));
    const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    const double inv = 1.0 / hw;
    Tensor out = Tensor::uninit({c});
    for (int ch = 0; ch < c; ++ch) {
        const double* xp = x.data() + static_cast<std::size_t>(ch) * hw;
        double s = 0.0;
        for (int p = 0; p < hw; ++p)
            s += xp[p];
        out[ch] = s * inv;
    }
    detail::record(out, {x}, [xn = x.node(), c, hw, inv](detail::TensorNode& self) {
        if (!xn->requires_grad)
            return;
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            const double g = self.grad[ch] * inv;
            double* gx = xn->grad.data() + static_cast<std::size_t>(ch) * hw;
            for (int p = 0; p < hw; ++p)
                gx[p] += g;
        }
    });
    return out;
}

inline Tensor upsample_nearest2x(const Tensor& x) {
    if (x.ndim() != 3)
        throw shape_error("upsample_nearest2x: need [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = 2 * h, wo = 2 * w;
    Tensor out = Tensor::uninit({c, ho, wo});
    for (int ch = 0; ch < c; ++ch) {
        const double* xp = x.data() + static_cast<std::size_t>(ch) * h * w;
        double* op = out.data() + static_cast<std::size_t>(ch) * ho * wo;
        for (int i = 0; i < ho; ++i) {
            const double* row = xp + static_cast<std::size_t>(i / 2) * w;
            double* orow = op + static_cast<std::size_t>(i) * wo;
            for (int j = 0; j < wo; ++j)
                orow[j] = row[j / 2];
        }
    }
    detail::record(out, {x}, [xn = x.node(), c, h, w, ho, wo](detail::TensorNode& self) {
        if (!xn->requires_grad)
            return;
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            double* gx = xn->grad.data() + static_cast<std::size_t>(ch) * h * w;
            const double* gy = self.grad.data() + static_cast<std::size_t>(ch) * ho * wo;
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j)
                    gx[static_cast<std::size_t>(i / 2) * w + j / 2] +=
                        gy[static_cast<std::size_t>(i) * wo + j];
        }
    });
    return out;
}

namespace detail {

struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<double> f; // weight of i1
};

inline LerpAxis lerp_axis(int src, int dst) {
    LerpAxis ax;
    ax.i0.resize(dst);
    ax.i1.resize(dst);
    ax.f.resize(dst);
    const double scale = static_cast<double>(src) / dst;
    for (int d = 0; d < dst; ++d) {
        double s = (d + 0.5) * scale - 0.5;
        if (s < 0.0)
            s = 0.0;
        const int lo = std::min(static_cast<int>(s), src - 1);
        ax.i0[d] = lo;
        ax.i1[d] = std::min(lo + 1, src - 1);
        ax.f[d] = s - lo;
    }
    return ax;
}

} // namespace detail

// Bilinear resize to (ho, wo), half-pixel-center convention.
inline Tensor upsample_bilinear(const Tensor& x, int ho, int wo) {
    if (x.ndim() != 3)
        throw shape_error("upsample_bilinear: need [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto rows = std::make_shared<detail::LerpAxis>(detail::lerp_axis(h, ho));
    auto cols = std::make_shared<detail::LerpAxis>(detail::lerp_axis(w, wo));
    Tensor out = Tensor::uninit({c, ho, wo});
    for (int ch = 0; ch < c; ++ch) {
        const double* xp = x.data() + static_cast<std::size_t>(ch) * h * w;
        double* op = out.data() + static_cast<std::size_t>(ch) * ho * wo;
        for (int i = 0; i < ho; ++i) {
            const double fr = rows->f[i];
            const double* r0 = xp + static_cast<std::size_t>(rows->i0[i]) * w;
            const double* r1 = xp + static_cast<std::size_t>(rows->i1[i]) * w;
            for (int j = 0; j < wo; ++j) {
                const double fc = cols->f[j];
                const int c0 = cols->i0[j], c1 = cols->i1[j];
                op[static_cast<std::size_t>(i) * wo + j] =
                    (1 - fr) * ((1 - fc) * r0[c0] + fc * r0[c1]) +
                    fr * ((1 - fc) * r1[c0] + fc * r1[c1]);
            }
        }
    }
    detail::record(out, {x}, [xn = x.node(), rows, cols, c, h, w, ho, wo](detail::TensorNode& self) {
        if (!xn->requires_grad)
            return;
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            double* gx = xn->grad.data() + static_cast<std::size_t>(ch) * h * w;
            const double* gy = self.grad.data() + static_cast<std::size_t>(ch) * ho * wo;
            for (int i = 0; i < ho; ++i) {
                const double fr = rows->f[i];
                double* r0 = gx + static_cast<std::size_t>(rows->i0[i]) * w;
                double* r1 = gx + static_cast<std::size_t>(rows->i1[i]) * w;
                for (int j = 0; j < wo; ++j) {
                    const double g = gy[static_cast<std::size_t>(i) * wo + j];
                    const double fc = cols->f[j];
                    const int c0 = cols->i0[j], c1 = cols->i1[j];
                    r0[c0] += (1 - fr) * (1 - fc) * g;
                    r0[c1] += (1 - fr) * fc * g;
                    r1[c0] += fr * (1 - fc) * g;
                    r1[c1] += fr * fc * g;
                }
            }
        }
    });
    return out;
}

// Per-channel spatial normalization with learnable affine (batch-independent).
inline Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                            double eps = 1e-5) {
    if (x.ndim() != 3 || gamma.ndim() != 1 || gamma.dim(0) != x.dim(0) ||
        beta.shape() != gamma.shape())
        throw shape_error("instance_norm: shapes " + shape_str(x.shape()) + ", " +
                          shape_str(gamma.shape()));
    const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    const double inv_n = 1.0 / hw;
    auto mu = std::make_shared<std::vector<double>>(c);
    auto inv_std = std::make_shared<std::vector<double>>(c);
    Tensor out = Tensor::uninit(x.shape());
    for (int ch = 0; ch < c; ++ch) {
        const double* xp = x.data() + static_cast<std::size_t>(ch) * hw;
        double m = 0.0;
        for (int p = 0; p < hw; ++p)
            m += xp[p];
        m *= inv_n;
        double var = 0.0;
        for (int p = 0; p < hw; ++p) {
            const double d = xp[p] - m;
            var += d * d;
        }
        var *= inv_n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*mu)[ch] = m;
        (*inv_std)[ch] = is;
        const double g = gamma[ch], b = beta[ch];
        double* op = out.data() + static_cast<std::size_t>(ch) * hw;
        for (int p = 0; p < hw; ++p)
            op[p] = g * (xp[p] - m) * is + b;
    }
    detail::record(
        out, {x, gamma, beta},
        [xn = x.node(), gn = gamma.node(), bn = beta.node(), mu, inv_std, c, hw,
         inv_n](detail::TensorNode& self) {
            for (int ch = 0; ch < c; ++ch) {
                const double* xp = xn->value.data() + static_cast<std::size_t>(ch) * hw;
                const double* gy = self.grad.data() + static_cast<std::size_t>(ch) * hw;
                const double m = (*mu)[ch], is = (*inv_std)[ch];
                double sum_g = 0.0, sum_gx = 0.0;
                for (int p = 0; p < hw; ++p) {
                    const double xh = (xp[p] - m) * is;
                    sum_g += gy[p];
                    sum_gx += gy[p] * xh;
                }
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    gn->grad[ch] += sum_gx;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    bn->grad[ch] += sum_g;
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double* gx = xn->grad.data() + static_cast<std::size_t>(ch) * hw;
                    const double gamma_is = gn->value[ch] * is;
                    const double mg = sum_g * inv_n, mgx = sum_gx * inv_n;
                    for (int p = 0; p < hw; ++p) {
                        const double xh = (xp[p] - m) * is;
                        gx[p] += gamma_is * (gy[p] - mg - xh * mgx);
                    }
                }
            }
        });
    return out;
}

// Per-row normalization over the embedding axis with learnable affine.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              double eps = 1e-5) {
    if (x.ndim() != 2 || gamma.ndim() != 1 || gamma.dim(0) != x.dim(1) ||
        beta.shape() != gamma.shape())
        throw shape_error("layer_norm_rows: shapes " + shape_str(x.shape()) + ", " +
                          shape_str(gamma.shape()));
    const int n = x.dim(0), d = x.dim(1);
    const double inv_d = 1.0 / d;
    auto mu = std::make_shared<std::vector<double>>(n);
    auto inv_std = std::make_shared<std::vector<double>>(n);
    Tensor out = Tensor::uninit(x.shape());
    for (int r = 0; r < n; ++r) {
        const double* xp = x.data() + static_cast<std::size_t>(r) * d;
        double m = 0.0;
        for (int c = 0; c < d; ++c)
            m += xp[c];
        m *= inv_d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
            const double dv = xp[c] - m;
            var += dv * dv;
        }
        var *= inv_d;
        const double is = 1.0 / std::sqrt(var + eps);
        (*mu)[r] = m;
        (*inv_std)[r] = is;
        double* op = out.data() + static_cast<std::size_t>(r) * d;
        for (int c = 0; c < d; ++c)
            op[c] = gamma[c] * (xp[c] - m) * is + beta[c];
    }
    detail::record(
        out, {x, gamma, beta},
        [xn = x.node(), gn = gamma.node(), bn = beta.node(), mu, inv_std, n, d,
         inv_d](detail::TensorNode& self) {
            for (int r = 0; r < n; ++r) {
                const double* xp = xn->value.data() + static_cast<std::size_t>(r) * d;
                const double* gy = self.grad.data() + static_cast<std::size_t>(r) * d;
                const double m = (*mu)[r], is = (*inv_std)[r];
                double sum_h = 0.0, sum_hx = 0.0; // sums of gamma-weighted grads
                for (int c = 0; c < d; ++c) {
                    const double xh = (xp[c] - m) * is;
                    const double hg = gy[c] * gn->value[c];
                    sum_h += hg;
                    sum_hx += hg * xh;
                }
                if (gn->requires_grad || bn->requires_grad) {
                    if (gn->requires_grad)
                        gn->ensure_grad();
                    if (bn->requires_grad)
                        bn->ensure_grad();
                    for (int c = 0; c < d; ++c) {
                        const double xh = (xp[c] - m) * is;
                        if (gn->requires_grad)
                            gn->grad[c] += gy[c] * xh;
                        if (bn->requires_grad)
                            bn->grad[c] += gy[c];
                    }
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double* gx = xn->grad.data() + static_cast<std::size_t>(r) * d;
                    const double mh = sum_h * inv_d, mhx = sum_hx * inv_d;
                    for (int c = 0; c < d; ++c) {
                        const double xh = (xp[c] - m) * is;
                        gx[c] += is * (gy[c] * gn->value[c] - mh - xh * mhx);
                    }
                }
            }
        });
    return out;
}

// Softmax over the class axis of [C,H,W] (independent per pixel).
inline Tensor softmax_channels(const Tensor& x) {
    if (x.ndim() != 3)
        throw shape_error("softmax_channels: need [C,H,W]");
    const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor out = Tensor::uninit(x.shape());
    for (int p = 0; p < hw; ++p) {
        double mx = x[p];
        for (int ch = 1; ch < c; ++ch)
            mx = std::max(mx, x[static_cast<std::size_t>(ch) * hw + p]);
        double s = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            const double e = std::exp(x[static_cast<std::size_t>(ch) * hw + p] - mx);
            out[static_cast<std::size_t>(ch) * hw + p] = e;
            s += e;
        }
        const double inv = 1.0 / s;
        for (int ch = 0; ch < c; ++ch)
            out[static_cast<std::size_t>(ch) * hw + p] *= inv;
    }
    detail::record(out, {x}, [xn = x.node(), on = out.node(), c, hw](detail::TensorNode& self) {
        if (!xn->requires_grad)
            return;
        xn->ensure_grad();
        for (int p = 0; p < hw; ++p) {
            double dot = 0.0;
            for (int ch = 0; ch < c; ++ch)
                dot += on->value[static_cast<std::size_t>(ch) * hw + p] *
                       self.grad[static_cast<std::size_t>(ch) * hw + p];
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t idx = static_cast<std::size_t>(ch) * hw + p;
                xn->grad[idx] += on->value[idx] * (self.grad[idx] - dot);
            }
        }
    });
    return out;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
        throw shape_error("concat_channels: " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    const int ca = a.dim(0), cb = b.dim(0), hw = a.dim(1) * a.dim(2);
    Tensor out = Tensor::uninit({ca + cb, a.dim(1), a.dim(2)});
    std::copy(a.values().begin(), a.values().end(), out.values().begin());
    std::copy(b.values().begin(), b.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(ca) * hw);
    detail::record(out, {a, b}, [an = a.node(), bn = b.node(), ca, cb, hw](detail::TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < static_cast<std::size_t>(ca) * hw; ++i)
                an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            const std::size_t off = static_cast<std::size_t>(ca) * hw;
            for (std::size_t i = 0; i < static_cast<std::size_t>(cb) * hw; ++i)
                bn->grad[i] += self.grad[off + i];
        }
    });
    return out;
}

inline Tensor slice_channels(const Tensor& x, int c0, int c1) {
    if (x.ndim() != 3 || c0 < 0 || c1 > x.dim(0) || c0 >= c1)
        throw shape_error("slice_channels: bad range on " + shape_str(x.shape()));
    const int hw = x.dim(1) * x.dim(2);
    Tensor out = Tensor::uninit({c1 - c0, x.dim(1), x.dim(2)});
    std::copy(x.values().begin() + static_cast<std::ptrdiff_t>(c0) * hw,
              x.values().begin() + static_cast<std::ptrdiff_t>(c1) * hw, out.values().begin());
    detail::record(out, {x}, [xn = x.node(), c0, hw, n = out.numel()](detail::TensorNode& self) {
        if (!xn->requires_grad)
            return;
        xn->ensure_grad();
        const std::size_t off = static_cast<std::size_t>(c0) * hw;
        for (std::size_t i = 0; i < n; ++i)
            xn->grad[off + i] += self.grad[i];
    });
    return out;
}

// Mean over channels: [C,H,W] -> [1,H,W]
inline Tensor channel_mean(const Tensor& x) {
    if (x.ndim() != 3)
        throw shape_error("channel_mean: need [C,H,W]");
    const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    const double inv = 1.0 / c;
    Tensor out = Tensor::uninit({1, x.dim(1), x.dim(2)});
    for (int p = 0; p < hw; ++p) {
        double s = 0.0;
        for (int ch = 0; ch < c; ++ch)
            s += x[static_cast<std::size_t>(ch) * hw + p];
        out[p] = s * inv;
    }
    detail::record(out, {x}, [xn = x.node(), c, hw, inv](detail::TensorNode& self) {
        if (!xn->requires_grad)
            return;
        xn->ensure_grad();
        for (int p = 0; p < hw; ++p) {
            const double g = self.grad[p] * inv;
            for (int ch = 0; ch < c; ++ch)
                xn->grad[static_cast<std::size_t>(ch) * hw + p] += g;
        }
    });
    return out;
}

// Max over channels: [C,H,W] -> [1,H,W]
inline Tensor channel_max(const Tensor& x) {
    if (x.ndim() != 3)
        throw shape_error("channel_max: need [C,H,W]");
    const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor out = Tensor::uninit({1, x.dim(1), x.dim(2)});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(hw);
    for (int p = 0; p < hw; ++p) {
        int best = 0;
        double bv = x[p];
        for (int ch = 1; ch < c; ++ch) {
            const double v = x[static_cast<std::size_t>(ch) * hw + p];
            if (v > bv) {
                bv = v;
                best = ch;
            }
        }
        out[p] = bv;
        (*argmax)[p] = best;
    }
    detail::record(out, {x}, [xn = x.node(), argmax, hw](detail::TensorNode& self) {
        if (!xn->requires_grad)
            return;
        xn->ensure_grad();
        for (int p = 0; p < hw; ++p)
            xn->grad[static_cast<std::size_t>((*argmax)[p]) * hw + p] += self.grad[p];
    });
    return out;
}

// x[C,H,W] scaled per channel by s[C].
inline Tensor mul_channel_gate(const Tensor& x, const Tensor& s) {
    if (x.ndim() != 3 || s.ndim() != 1 || s.dim(0) != x.dim(0))
        throw shape_error("mul_channel_gate: " + shape_str(x.shape()) + " vs " +
                          shape_str(s.shape()));
    const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor out = Tensor::uninit(x.shape());
    for (int ch = 0; ch < c; ++ch) {
        const double g = s[ch];
        const double* xp = x.data() + static_cast<std::size_t>(ch) * hw;
        double* op = out.data() + static_cast<std::size_t>(ch) * hw;
        for (int p = 0; p < hw; ++p)
            op[p] = xp[p] * g;
    }
    detail::record(out, {x, s}, [xn = x.node(), sn = s.node(), c, hw](detail::TensorNode& self) {
        for (int ch = 0; ch < c; ++ch) {
            const double* gy = self.grad.data() + static_cast<std::size_t>(ch) * hw;
            if (xn->requires_grad) {
                xn->ensure_grad();
                const double g = sn->value[ch];
                double* gx = xn->grad.data() + static_cast<std::size_t>(ch) * hw;
                for (int p = 0; p < hw; ++p)
                    gx[p] += gy[p] * g;
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                const double* xp = xn->value.data() + static_cast<std::size_t>(ch) * hw;
                double acc = 0.0;
                for (int p = 0; p < hw; ++p)
                    acc += gy[p] * xp[p];
                sn->grad[ch] += acc;
            }
        }
    });
    return out;
}

// x[C,H,W] scaled per pixel by a[1,H,W].
inline Tensor mul_spatial_gate(const Tensor& x, const Tensor& a) {
    if (x.ndim() != 3 || a.ndim() != 3 || a.dim(0) != 1 || a.dim(1) != x.dim(1) ||
        a.dim(2) != x.dim(2))
        throw shape_error("mul_spatial_gate: " + shape_str(x.shape()) + " vs " +
                          shape_str(a.shape()));
    const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor out = Tensor::uninit(x.shape());
    for (int ch = 0; ch < c; ++ch) {
        const double* xp = x.data() + static_cast<std::size_t>(ch) * hw;
        double* op = out.data() + static_cast<std::size_t>(ch) * hw;
        for (int p = 0; p < hw; ++p)
            op[p] = xp[p] * a[p];
    }
    detail::record(out, {x, a}, [xn = x.node(), an = a.node(), c, hw](detail::TensorNode& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                const double* gy = self.grad.data() + static_cast<std::size_t>(ch) * hw;
                double* gx = xn->grad.data() + static_cast<std::size_t>(ch) * hw;
                for (int p = 0; p < hw; ++p)
                    gx[p] += gy[p] * an->value[p];
            }
        }
        if (an->requires_grad) {
            an->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                const double* gy = self.grad.data() + static_cast<std::size_t>(ch) * hw;
                const double* xp = xn->value.data() + static_cast<std::size_t>(ch) * hw;
                for (int p = 0; p < hw; ++p)
                    an->grad[p] += gy[p] * xp[p];
            }
        }
    });
    return out;
}

// Token sequence [N,d] -> feature map [d,rows,cols] with N = rows*cols.
inline Tensor tokens_to_map(const Tensor& t, int rows, int cols) {
    if (t.ndim() != 2 || t.dim(0) != rows * cols)
        throw shape_error("tokens_to_map: " + shape_str(t.shape()) + " to grid " +
                          std::to_string(rows) + "x" + std::to_string(cols));
    const int n = t.dim(0), d = t.dim(1);
    Tensor out = Tensor::uninit({d, rows, cols});
    for (int p = 0; p < n; ++p)
        for (int c = 0; c < d; ++c)
            out[static_cast<std::size_t>(c) * n + p] = t[static_cast<std::size_t>(p) * d + c];
    detail::record(out, {t}, [tn = t.node(), n, d](detail::TensorNode& self) {
        if (!tn->requires_grad)
            return;
        tn->ensure_grad();
        for (int p = 0; p < n; ++p)
            for (int c = 0; c < d; ++c)
                tn->grad[static_cast<std::size_t>(p) * d + c] +=
                    self.grad[static_cast<std::size_t>(c) * n + p];
    });
    return out;
}

// Feature map [C,h,w] -> token sequence [h*w, C].
inline Tensor map_to_tokens(const Tensor& m) {
    if (m.ndim() != 3)
        throw shape_error("map_to_tokens: need [C,H,W]");
    const int c = m.dim(0), n = m.dim(1) * m.dim(2);
    Tensor out = Tensor::uninit({n, c});
    for (int p = 0; p < n; ++p)
        for (int ch = 0; ch < c; ++ch)
            out[static_cast<std::size_t>(p) * c + ch] = m[static_cast<std::size_t>(ch) * n + p];
    detail::record(out, {m}, [mn = m.node(), c, n](detail::TensorNode& self) {
        if (!mn->requires_grad)
            return;
        mn->ensure_grad();
        for (int p = 0; p < n; ++p)
            for (int ch = 0; ch < c; ++ch)
                mn->grad[static_cast<std::size_t>(ch) * n + p] +=
                    self.grad[static_cast<std::size_t>(p) * c + ch];
    });
    return out;
}

// Inverted-scale dropout; rate in [0,1). Caller supplies the RNG stream.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng) {
    if (rate <= 0.0)
        return x;
    if (rate >= 1.0)
        throw shape_error("dropout: rate must be < 1");
    const double keep = 1.0 - rate;
    const double scale = 1.0 / keep;
    auto mask = std::make_shared<std::vector<double>>(x.numel());
    Tensor out = Tensor::uninit(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        (*mask)[i] = rng.bernoulli(keep) ? scale : 0.0;
        out[i] = x[i] * (*mask)[i];
    }
    detail::record(out, {x}, [xn = x.node(), mask](detail::TensorNode& self) {
        if (!xn->requires_grad)
            return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            xn->grad[i] += self.grad[i] * (*mask)[i];
    });
    return out;
}

} // namespace scarnet

#endif
