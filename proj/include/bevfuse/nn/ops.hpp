#pragma once

#include <cmath>
#include <vector>

#include "bevfuse/common.hpp"
#include "bevfuse/nn/tensor.hpp"

namespace bevfuse::nn {

struct Conv2DGeometry {
    int stride = 1;
    int pad = 0;
    int dilation = 1;
};

inline int conv_out_extent(int in, int kernel, const Conv2DGeometry& g) {
    return (in + 2 * g.pad - g.dilation * (kernel - 1) - 1) / g.stride + 1;
}

// Cross-correlation with zero padding, NCHW input, (Cout,Cin,kh,kw) weights.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Conv2DGeometry g = {}) {
    const Dims4 dx = dims4(x, "conv2d");
    const Dims4 dw = dims4(w, "conv2d weights");
    require(dw.c == dx.c, "nn", "conv2d: input channels " + std::to_string(dx.c) +
                                    " do not match kernel " + std::to_string(dw.c));
    if (b.defined())
        require(b.shape() == Shape{dw.n}, "nn", "conv2d: bias must have one entry per out channel");
    require(g.stride >= 1 && g.pad >= 0 && g.dilation >= 1, "nn", "conv2d: bad geometry");
    const int oh = conv_out_extent(dx.h, dw.h, g);
    const int ow = conv_out_extent(dx.w, dw.w, g);
    require(oh >= 1 && ow >= 1, "nn", "conv2d: output would be empty");
    const Dims4 dy{dx.n, dw.n, oh, ow};

    std::vector<double> out(numel({dy.n, dy.c, dy.h, dy.w}), 0.0);
    if (b.defined()) {
        for (int n = 0; n < dy.n; ++n)
            for (int co = 0; co < dy.c; ++co) {
                const double bias = b.values()[co];
                const std::size_t base = idx4(dy, n, co, 0, 0);
                for (int i = 0; i < oh * ow; ++i) out[base + i] = bias;
            }
    }
    for (int n = 0; n < dy.n; ++n)
        for (int co = 0; co < dy.c; ++co)
            for (int ci = 0; ci < dx.c; ++ci)
                for (int ky = 0; ky < dw.h; ++ky)
                    for (int kx = 0; kx < dw.w; ++kx) {
                        const double wv = w.values()[idx4(dw, co, ci, ky, kx)];
                        if (wv == 0.0) continue;
                        for (int yo = 0; yo < oh; ++yo) {
                            const int yi = yo * g.stride - g.pad + ky * g.dilation;
                            if (yi < 0 || yi >= dx.h) continue;
                            const std::size_t xrow = idx4(dx, n, ci, yi, 0);
                            const std::size_t orow = idx4(dy, n, co, yo, 0);
                            for (int xo = 0; xo < ow; ++xo) {
                                const int xi = xo * g.stride - g.pad + kx * g.dilation;
                                if (xi < 0 || xi >= dx.w) continue;
                                out[orow + xo] += wv * x.values()[xrow + xi];
                            }
                        }
                    }

    std::vector<Tensor> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return make_op({dy.n, dy.c, dy.h, dy.w}, std::move(out), std::move(parents),
                   [x, w, b, g, dx, dw, dy](Node& node) mutable {
                       const int oh = dy.h, ow = dy.w;
                       if (b.defined() && b.requires_grad()) {
                           for (int n = 0; n < dy.n; ++n)
                               for (int co = 0; co < dy.c; ++co) {
                                   const std::size_t base = idx4(dy, n, co, 0, 0);
                                   double s = 0.0;
                                   for (int i = 0; i < oh * ow; ++i) s += node.grad[base + i];
                                   b.grad()[co] += s;
                               }
                       }
                       for (int n = 0; n < dy.n; ++n)
                           for (int co = 0; co < dy.c; ++co)
                               for (int ci = 0; ci < dx.c; ++ci)
                                   for (int ky = 0; ky < dw.h; ++ky)
                                       for (int kx = 0; kx < dw.w; ++kx) {
                                           const double wv = w.values()[idx4(dw, co, ci, ky, kx)];
                                           double wg = 0.0;
                                           for (int yo = 0; yo < oh; ++yo) {
                                               const int yi = yo * g.stride - g.pad + ky * g.dilation;
                                               if (yi < 0 || yi >= dx.h) continue;
                                               const std::size_t xrow = idx4(dx, n, ci, yi, 0);
                                               const std::size_t orow = idx4(dy, n, co, yo, 0);
                                               for (int xo = 0; xo < ow; ++xo) {
                                                   const int xi =
                                                       xo * g.stride - g.pad + kx * g.dilation;
                                                   if (xi < 0 || xi >= dx.w) continue;
                                                   const double gv = node.grad[orow + xo];
                                                   wg += gv * x.values()[xrow + xi];
                                                   if (x.requires_grad())
                                                       x.grad()[xrow + xi] += gv * wv;
                                               }
                                           }
                                           if (w.requires_grad())
                                               w.grad()[idx4(dw, co, ci, ky, kx)] += wg;
                                       }
                   });
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, Conv2DGeometry g = {}) {
    return conv2d(x, w, Tensor(), g);
}

// Transpose convolution, weights (Cin,Cout,kh,kw), output size
// (H-1)*stride - 2*pad + kh.
inline Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                               int pad = 0) {
    const Dims4 dx = dims4(x, "conv_transpose2d");
    const Dims4 dw = dims4(w, "conv_transpose2d weights");
    require(dw.n == dx.c, "nn", "conv_transpose2d: input channel mismatch");
    require(stride >= 1 && pad >= 0, "nn", "conv_transpose2d: bad geometry");
    const int oh = (dx.h - 1) * stride - 2 * pad + dw.h;
    const int ow = (dx.w - 1) * stride - 2 * pad + dw.w;
    require(oh >= 1 && ow >= 1, "nn", "conv_transpose2d: output would be empty");
    const Dims4 dy{dx.n, dw.c, oh, ow};
    if (b.defined())
        require(b.shape() == Shape{dw.c}, "nn",
                "conv_transpose2d: bias must have one entry per out channel");

    std::vector<double> out(numel({dy.n, dy.c, dy.h, dy.w}), 0.0);
    if (b.defined())
        for (int n = 0; n < dy.n; ++n)
            for (int co = 0; co < dy.c; ++co) {
                const std::size_t base = idx4(dy, n, co, 0, 0);
                for (int i = 0; i < oh * ow; ++i) out[base + i] = b.values()[co];
            }
    for (int n = 0; n < dx.n; ++n)
        for (int ci = 0; ci < dx.c; ++ci)
            for (int yi = 0; yi < dx.h; ++yi)
                for (int xi = 0; xi < dx.w; ++xi) {
                    const double xv = x.values()[idx4(dx, n, ci, yi, xi)];
                    for (int ky = 0; ky < dw.h; ++ky) {
                        const int yo = yi * stride - pad + ky;
                        if (yo < 0 || yo >= oh) continue;
                        for (int kx = 0; kx < dw.w; ++kx) {
                            const int xo = xi * stride - pad + kx;
                            if (xo < 0 || xo >= ow) continue;
                            for (int co = 0; co < dy.c; ++co)
                                out[idx4(dy, n, co, yo, xo)] +=
                                    xv * w.values()[idx4(dw, ci, co, ky, kx)];
                        }
                    }
                }

    std::vector<Tensor> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return make_op({dy.n, dy.c, dy.h, dy.w}, std::move(out), std::move(parents),
                   [x, w, b, stride, pad, dx, dw, dy](Node& node) mutable {
                       if (b.defined() && b.requires_grad()) {
                           for (int n = 0; n < dy.n; ++n)
                               for (int co = 0; co < dy.c; ++co) {
                                   const std::size_t base = idx4(dy, n, co, 0, 0);
                                   double s = 0.0;
                                   for (int i = 0; i < dy.h * dy.w; ++i) s += node.grad[base + i];
                                   b.grad()[co] += s;
                               }
                       }
                       for (int n = 0; n < dx.n; ++n)
                           for (int ci = 0; ci < dx.c; ++ci)
                               for (int yi = 0; yi < dx.h; ++yi)
                                   for (int xi = 0; xi < dx.w; ++xi) {
                                       const double xv = x.values()[idx4(dx, n, ci, yi, xi)];
                                       double xg = 0.0;
                                       for (int ky = 0; ky < dw.h; ++ky) {
                                           const int yo = yi * stride - pad + ky;
                                           if (yo < 0 || yo >= dy.h) continue;
                                           for (int kx = 0; kx < dw.w; ++kx) {
                                               const int xo = xi * stride - pad + kx;
                                               if (xo < 0 || xo >= dy.w) continue;
                                               for (int co = 0; co < dy.c; ++co) {
                                                   const double gv =
                                                       node.grad[idx4(dy, n, co, yo, xo)];
                                                   xg += gv * w.values()[idx4(dw, ci, co, ky, kx)];
                                                   if (w.requires_grad())
                                                       w.grad()[idx4(dw, ci, co, ky, kx)] += gv * xv;
                                               }
                                           }
                                       }
                                       if (x.requires_grad()) x.grad()[idx4(dx, n, ci, yi, xi)] += xg;
                                   }
                   });
}

// Running statistics for batch normalization; owned by the model, mutated by
// training-mode forwards.
struct BatchNormState {
    std::vector<double> mean;
    std::vector<double> var;

    explicit BatchNormState(int channels = 0)
        : mean(channels, 0.0), var(channels, 1.0) {}
};

inline Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          BatchNormState* state, bool training, double momentum = 0.1,
                          double eps = 1e-5) {
    const Dims4 d = dims4(x, "batchnorm2d");
    require(gamma.shape() == Shape{d.c} && beta.shape() == Shape{d.c}, "nn",
            "batchnorm2d: gamma/beta must be per-channel");
    require(state != nullptr && static_cast<int>(state->mean.size()) == d.c, "nn",
            "batchnorm2d: state channel mismatch");
    const double m = static_cast<double>(d.n) * d.h * d.w;

    std::vector<double> mean(d.c, 0.0), var(d.c, 0.0);
    if (training) {
        for (int c = 0; c < d.c; ++c) {
            double s = 0.0;
            for (int n = 0; n < d.n; ++n)
                for (int h = 0; h < d.h; ++h)
                    for (int w = 0; w < d.w; ++w) s += x.values()[idx4(d, n, c, h, w)];
            mean[c] = s / m;
            double v = 0.0;
            for (int n = 0; n < d.n; ++n)
                for (int h = 0; h < d.h; ++h)
                    for (int w = 0; w < d.w; ++w) {
                        const double dv = x.values()[idx4(d, n, c, h, w)] - mean[c];
                        v += dv * dv;
                    }
            var[c] = v / m;
            state->mean[c] = (1.0 - momentum) * state->mean[c] + momentum * mean[c];
            state->var[c] = (1.0 - momentum) * state->var[c] + momentum * var[c];
        }
    } else {
        mean = state->mean;
        var = state->var;
    }

    std::vector<double> out(x.size());
    std::vector<double> inv_std(d.c);
    for (int c = 0; c < d.c; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    for (int n = 0; n < d.n; ++n)
        for (int c = 0; c < d.c; ++c)
            for (int h = 0; h < d.h; ++h)
                for (int w = 0; w < d.w; ++w) {
                    const std::size_t i = idx4(d, n, c, h, w);
                    out[i] = gamma.values()[c] * (x.values()[i] - mean[c]) * inv_std[c] +
                             beta.values()[c];
                }

    return make_op(x.shape(), std::move(out), {x, gamma, beta},
                   [x, gamma, beta, d, m, mean, inv_std, training](Node& node) mutable {
                       for (int c = 0; c < d.c; ++c) {
                           double sum_g = 0.0, sum_gx = 0.0;
                           for (int n = 0; n < d.n; ++n)
                               for (int h = 0; h < d.h; ++h)
                                   for (int w = 0; w < d.w; ++w) {
                                       const std::size_t i = idx4(d, n, c, h, w);
                                       const double xhat =
                                           (x.values()[i] - mean[c]) * inv_std[c];
                                       sum_g += node.grad[i];
                                       sum_gx += node.grad[i] * xhat;
                                   }
                           if (gamma.requires_grad()) gamma.grad()[c] += sum_gx;
                           if (beta.requires_grad()) beta.grad()[c] += sum_g;
                           if (!x.requires_grad()) continue;
                           const double gscale = gamma.values()[c] * inv_std[c];
                           for (int n = 0; n < d.n; ++n)
                               for (int h = 0; h < d.h; ++h)
                                   for (int w = 0; w < d.w; ++w) {
                                       const std::size_t i = idx4(d, n, c, h, w);
                                       if (training) {
                                           const double xhat =
                                               (x.values()[i] - mean[c]) * inv_std[c];
                                           x.grad()[i] += gscale * (node.grad[i] - sum_g / m -
                                                                    xhat * sum_gx / m);
                                       } else {
                                           x.grad()[i] += gscale * node.grad[i];
                                       }
                                   }
                       }
                   });
}

// Dense per-column head mapping (C,R) image-space columns to (C,P) polar
// depth columns; weights (C*P, C*R) are shared across azimuth columns.
inline Tensor column_dense(const Tensor& x, const Tensor& w, const Tensor& b, int out_depth) {
    const Dims4 d = dims4(x, "column_dense");
    const int in_dim = d.c * d.h;
    const int out_dim = d.c * out_depth;
    require(w.shape() == Shape{out_dim, in_dim}, "nn",
            "column_dense: weights " + shape_str(w.shape()) + " do not match rows " +
                std::to_string(d.h) + " (trained for a different crop height?)");
    require(b.shape() == Shape{out_dim}, "nn", "column_dense: bias size mismatch");
    const Dims4 dy{d.n, d.c, out_depth, d.w};

    auto in_at = [&](int n, int a, int j) {  // j over (ci, r)
        return x.values()[idx4(d, n, j / d.h, j % d.h, a)];
    };
    std::vector<double> out(numel({dy.n, dy.c, dy.h, dy.w}));
    for (int n = 0; n < d.n; ++n)
        for (int a = 0; a < d.w; ++a)
            for (int o = 0; o < out_dim; ++o) {
                double s = b.values()[o];
                const std::size_t wrow = static_cast<std::size_t>(o) * in_dim;
                for (int j = 0; j < in_dim; ++j) s += w.values()[wrow + j] * in_at(n, a, j);
                out[idx4(dy, n, o / out_depth, o % out_depth, a)] = s;
            }

    return make_op({dy.n, dy.c, dy.h, dy.w}, std::move(out), {x, w, b},
                   [x, w, b, d, dy, in_dim, out_dim, out_depth](Node& node) mutable {
                       for (int n = 0; n < d.n; ++n)
                           for (int a = 0; a < d.w; ++a)
                               for (int o = 0; o < out_dim; ++o) {
                                   const double g =
                                       node.grad[idx4(dy, n, o / out_depth, o % out_depth, a)];
                                   if (g == 0.0) continue;
                                   if (b.requires_grad()) b.grad()[o] += g;
                                   const std::size_t wrow = static_cast<std::size_t>(o) * in_dim;
                                   for (int j = 0; j < in_dim; ++j) {
                                       const std::size_t xi = idx4(d, n, j / d.h, j % d.h, a);
                                       if (w.requires_grad())
                                           w.grad()[wrow + j] += g * x.values()[xi];
                                       if (x.requires_grad())
                                           x.grad()[xi] += g * w.values()[wrow + j];
                                   }
                               }
                   });
}

// Precomputed sparse linear resampling: every output position reads up to
// four weighted taps from a (depth, azimuth) source plane; shared across
// batch entries and channels.
struct ResampleMap {
    struct Tap {
        int src;  // d * azimuth + a
        double w;
    };
    int in_depth = 0, in_azimuth = 0;
    int out_h = 0, out_w = 0;
    std::vector<std::vector<Tap>> taps;  // out_h * out_w entries
};

inline Tensor apply_resample(const Tensor& x, std::shared_ptr<const ResampleMap> map) {
    const Dims4 d = dims4(x, "apply_resample");
    require(map && d.h == map->in_depth && d.w == map->in_azimuth, "nn",
            "apply_resample: source plane mismatch");
    const Dims4 dy{d.n, d.c, map->out_h, map->out_w};
    std::vector<double> out(numel({dy.n, dy.c, dy.h, dy.w}), 0.0);
    for (int n = 0; n < d.n; ++n)
        for (int c = 0; c < d.c; ++c) {
            const std::size_t src_base = idx4(d, n, c, 0, 0);
            const std::size_t dst_base = idx4(dy, n, c, 0, 0);
            for (int i = 0; i < map->out_h * map->out_w; ++i)
                for (const auto& t : map->taps[i])
                    out[dst_base + i] += t.w * x.values()[src_base + t.src];
        }
    return make_op({dy.n, dy.c, dy.h, dy.w}, std::move(out), {x},
                   [x, d, dy, map = std::move(map)](Node& node) mutable {
                       for (int n = 0; n < d.n; ++n)
                           for (int c = 0; c < d.c; ++c) {
                               const std::size_t src_base = idx4(d, n, c, 0, 0);
                               const std::size_t dst_base = idx4(dy, n, c, 0, 0);
                               for (int i = 0; i < map->out_h * map->out_w; ++i)
                                   for (const auto& t : map->taps[i])
                                       x.grad()[src_base + t.src] += t.w * node.grad[dst_base + i];
                           }
                   });
}

// softmax((logits + noise) / tau) over the option axis. noise carries the
// Gumbel draws (or zeros for the deterministic path) and is not
// differentiated.
inline Tensor gumbel_softmax(const Tensor& logits, double tau, const Tensor& noise) {
    require(tau > 0.0, "nn", "gumbel softmax temperature must be positive");
    Tensor pre = noise.defined() ? add(logits, noise) : logits;
    return softmax_channels(scale(pre, 1.0 / tau));
}

// Mean over cells of -log softmax(logits) at the one-hot target class.
inline Tensor cce_loss(const Tensor& logits, const Tensor& target) {
    check_same_shape(logits, target, "cce_loss");
    require(!target.requires_grad(), "nn", "cce_loss: soft/differentiable targets unsupported");
    const Dims4 d = dims4(logits, "cce_loss");
    const double count = static_cast<double>(d.n) * d.h * d.w;

    // validate one-hot targets
    for (int n = 0; n < d.n; ++n)
        for (int h = 0; h < d.h; ++h)
            for (int w = 0; w < d.w; ++w) {
                double s = 0.0;
                for (int c = 0; c < d.c; ++c) {
                    const double t = target.values()[idx4(d, n, c, h, w)];
                    require(t == 0.0 || t == 1.0, "nn", "cce_loss: target is not one-hot");
                    s += t;
                }
                require(s == 1.0, "nn", "cce_loss: target rows must sum to 1");
            }

    double loss = 0.0;
    std::vector<double> softmax(logits.size());
    for (int n = 0; n < d.n; ++n)
        for (int h = 0; h < d.h; ++h)
            for (int w = 0; w < d.w; ++w) {
                double mx = -1e300;
                for (int c = 0; c < d.c; ++c)
                    mx = std::max(mx, logits.values()[idx4(d, n, c, h, w)]);
                double z = 0.0;
                for (int c = 0; c < d.c; ++c) {
                    const double e = std::exp(logits.values()[idx4(d, n, c, h, w)] - mx);
                    softmax[idx4(d, n, c, h, w)] = e;
                    z += e;
                }
                const double logz = std::log(z) + mx;
                for (int c = 0; c < d.c; ++c) {
                    const std::size_t i = idx4(d, n, c, h, w);
                    softmax[i] /= z;
                    if (target.values()[i] == 1.0)
                        loss += logz - logits.values()[i];
                }
            }
    loss /= count;

    return make_op({1}, {loss}, {logits, target},
                   [logits, target, softmax = std::move(softmax), count](Node& node) mutable {
                       const double g = node.grad[0] / count;
                       for (std::size_t i = 0; i < logits.size(); ++i)
                           logits.grad()[i] += g * (softmax[i] - target.values()[i]);
                   });
}

inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "mse_loss");
    const double n = static_cast<double>(pred.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.values()[i] - target.values()[i];
        loss += d * d;
    }
    loss /= n;
    return make_op({1}, {loss}, {pred, target}, [pred, target, n](Node& node) mutable {
        const double g = 2.0 * node.grad[0] / n;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = pred.values()[i] - target.values()[i];
            if (pred.requires_grad()) pred.grad()[i] += g * d;
            if (target.requires_grad()) target.grad()[i] -= g * d;
        }
    });
}

}  // namespace bevfuse::nn
