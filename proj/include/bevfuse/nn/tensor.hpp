#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "bevfuse/common.hpp"

namespace bevfuse::nn {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i)
        s += (i ? "," : "") + std::to_string(shape[i]);
    return s + ")";
}

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

// Dense double tensor with reverse-mode gradients. Value-semantics handle
// over a shared graph node; ops build the tape, backward() walks it. Ops take
// tensors by value: copying the handle is cheap and the backward closures
// need mutable handles for gradient accumulation.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->values.assign(numel(node->shape), 0.0);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        require(numel(shape) == values.size(), "nn",
                "tensor data length does not match shape " + shape_str(shape));
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->values = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->values.size(); }
    std::vector<double>& values() { return node_->values; }
    const std::vector<double>& values() const { return node_->values; }
    std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }
    void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

    double item() const {
        require(size() == 1, "nn", "item() on a non-scalar tensor");
        return node_->values[0];
    }

    std::shared_ptr<Node> node() const { return node_; }

    // Reverse-mode sweep from a scalar root. Gradients accumulate into every
    // reachable node with requires_grad set (leaf parameters included), so
    // batch accumulation is a sequence of backward() calls.
    void backward() const {
        require(size() == 1, "nn", "backward() expects a scalar loss");
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node* p = n->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        for (Node* n : order) n->ensure_grad();
        node_->grad[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward_fn) (*it)->backward_fn(**it);
        }
    }

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    friend Tensor make_op(Shape shape, std::vector<double> values,
                          std::vector<Tensor> parents, std::function<void(Node&)> backward);

    std::shared_ptr<Node> node_;
};

inline Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                      std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    for (const auto& p : parents) {
        node->parents.push_back(p.node());
        node->requires_grad = node->requires_grad || p.requires_grad();
    }
    if (node->requires_grad) node->backward_fn = std::move(backward);
    return Tensor(std::move(node));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), "nn",
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
}

inline Tensor add(Tensor a, Tensor b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return make_op(a.shape(), std::move(out), {a, b}, [a, b](Node& n) {
        if (a.requires_grad())
            for (std::size_t i = 0; i < n.grad.size(); ++i) a.grad()[i] += n.grad[i];
        if (b.requires_grad())
            for (std::size_t i = 0; i < n.grad.size(); ++i) b.grad()[i] += n.grad[i];
    });
}

inline Tensor sub(Tensor a, Tensor b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return make_op(a.shape(), std::move(out), {a, b}, [a, b](Node& n) {
        if (a.requires_grad())
            for (std::size_t i = 0; i < n.grad.size(); ++i) a.grad()[i] += n.grad[i];
        if (b.requires_grad())
            for (std::size_t i = 0; i < n.grad.size(); ++i) b.grad()[i] -= n.grad[i];
    });
}

inline Tensor mul(Tensor a, Tensor b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return make_op(a.shape(), std::move(out), {a, b}, [a, b](Node& n) {
        if (a.requires_grad())
            for (std::size_t i = 0; i < n.grad.size(); ++i) a.grad()[i] += n.grad[i] * b.values()[i];
        if (b.requires_grad())
            for (std::size_t i = 0; i < n.grad.size(); ++i) b.grad()[i] += n.grad[i] * a.values()[i];
    });
}

inline Tensor scale(Tensor a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
    return make_op(a.shape(), std::move(out), {a}, [a, s](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) a.grad()[i] += n.grad[i] * s;
    });
}

inline Tensor relu(Tensor a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
    return make_op(a.shape(), std::move(out), {a}, [a](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (a.values()[i] > 0.0) a.grad()[i] += n.grad[i];
    });
}

inline Tensor tanh_op(Tensor a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values()[i]);
    return make_op(a.shape(), std::move(out), {a}, [a](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            a.grad()[i] += n.grad[i] * (1.0 - n.values[i] * n.values[i]);
    });
}

inline Tensor sum_all(Tensor a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make_op({1}, {s}, {a}, [a](Node& n) {
        for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += n.grad[0];
    });
}

// Fixed-weight scalarization: sum_i w_i * x_i. The probe vector is constant.
inline Tensor weighted_sum(Tensor a, std::vector<double> w) {
    require(w.size() == a.size(), "nn", "weighted_sum: weight length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * a.values()[i];
    return make_op({1}, {s}, {a}, [a, w = std::move(w)](Node& n) {
        for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += n.grad[0] * w[i];
    });
}

// NCHW helpers shared by the structured ops.
struct Dims4 {
    int n, c, h, w;
};

inline Dims4 dims4(const Tensor& t, const char* op) {
    require(t.shape().size() == 4, "nn", std::string(op) + ": expected a 4-d NCHW tensor, got " +
                                             shape_str(t.shape()));
    return {t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]};
}

inline std::size_t idx4(const Dims4& d, int n, int c, int h, int w) {
    return ((static_cast<std::size_t>(n) * d.c + c) * d.h + h) * d.w + w;
}

inline Tensor concat_channels(Tensor a, Tensor b) {
    const Dims4 da = dims4(a, "concat"), db = dims4(b, "concat");
    require(da.n == db.n && da.h == db.h && da.w == db.w, "nn",
            "concat: spatial/batch mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
    const Dims4 od{da.n, da.c + db.c, da.h, da.w};
    std::vector<double> out(numel({od.n, od.c, od.h, od.w}));
    for (int n = 0; n < od.n; ++n)
        for (int c = 0; c < od.c; ++c)
            for (int h = 0; h < od.h; ++h)
                for (int w = 0; w < od.w; ++w)
                    out[idx4(od, n, c, h, w)] = c < da.c
                                                    ? a.values()[idx4(da, n, c, h, w)]
                                                    : b.values()[idx4(db, n, c - da.c, h, w)];
    return make_op({od.n, od.c, od.h, od.w}, std::move(out), {a, b},
                   [a, b, da, db, od](Node& n4) {
                       for (int n = 0; n < od.n; ++n)
                           for (int c = 0; c < od.c; ++c)
                               for (int h = 0; h < od.h; ++h)
                                   for (int w = 0; w < od.w; ++w) {
                                       const double g = n4.grad[idx4(od, n, c, h, w)];
                                       if (c < da.c) {
                                           if (a.requires_grad())
                                               a.grad()[idx4(da, n, c, h, w)] += g;
                                       } else if (b.requires_grad()) {
                                           b.grad()[idx4(db, n, c - da.c, h, w)] += g;
                                       }
                                   }
                   });
}

// Keeps rows [r0, r1) of an NCHW tensor.
inline Tensor slice_rows(Tensor x, int r0, int r1) {
    const Dims4 d = dims4(x, "slice_rows");
    require(0 <= r0 && r0 < r1 && r1 <= d.h, "nn", "slice_rows: row range out of bounds");
    const Dims4 od{d.n, d.c, r1 - r0, d.w};
    std::vector<double> out(numel({od.n, od.c, od.h, od.w}));
    for (int n = 0; n < od.n; ++n)
        for (int c = 0; c < od.c; ++c)
            for (int h = 0; h < od.h; ++h)
                for (int w = 0; w < od.w; ++w)
                    out[idx4(od, n, c, h, w)] = x.values()[idx4(d, n, c, h + r0, w)];
    return make_op({od.n, od.c, od.h, od.w}, std::move(out), {x}, [x, d, od, r0](Node& n4) {
        for (int n = 0; n < od.n; ++n)
            for (int c = 0; c < od.c; ++c)
                for (int h = 0; h < od.h; ++h)
                    for (int w = 0; w < od.w; ++w)
                        x.grad()[idx4(d, n, c, h + r0, w)] += n4.grad[idx4(od, n, c, h, w)];
    });
}

inline Tensor upsample2x_nearest(Tensor x) {
    const Dims4 d = dims4(x, "upsample2x");
    const Dims4 od{d.n, d.c, d.h * 2, d.w * 2};
    std::vector<double> out(numel({od.n, od.c, od.h, od.w}));
    for (int n = 0; n < od.n; ++n)
        for (int c = 0; c < od.c; ++c)
            for (int h = 0; h < od.h; ++h)
                for (int w = 0; w < od.w; ++w)
                    out[idx4(od, n, c, h, w)] = x.values()[idx4(d, n, c, h / 2, w / 2)];
    return make_op({od.n, od.c, od.h, od.w}, std::move(out), {x}, [x, d, od](Node& n4) {
        for (int n = 0; n < od.n; ++n)
            for (int c = 0; c < od.c; ++c)
                for (int h = 0; h < od.h; ++h)
                    for (int w = 0; w < od.w; ++w)
                        x.grad()[idx4(d, n, c, h / 2, w / 2)] += n4.grad[idx4(od, n, c, h, w)];
    });
}

// Per-position scaling of all channels: s has shape (N,1,H,W).
inline Tensor scale_channels(Tensor x, Tensor s) {
    const Dims4 d = dims4(x, "scale_channels");
    const Dims4 ds = dims4(s, "scale_channels");
    require(ds.n == d.n && ds.c == 1 && ds.h == d.h && ds.w == d.w, "nn",
            "scale_channels: scaler must be (N,1,H,W) matching x");
    std::vector<double> out(x.size());
    for (int n = 0; n < d.n; ++n)
        for (int c = 0; c < d.c; ++c)
            for (int h = 0; h < d.h; ++h)
                for (int w = 0; w < d.w; ++w)
                    out[idx4(d, n, c, h, w)] =
                        x.values()[idx4(d, n, c, h, w)] * s.values()[idx4(ds, n, 0, h, w)];
    return make_op(x.shape(), std::move(out), {x, s}, [x, s, d, ds](Node& n4) {
        for (int n = 0; n < d.n; ++n)
            for (int c = 0; c < d.c; ++c)
                for (int h = 0; h < d.h; ++h)
                    for (int w = 0; w < d.w; ++w) {
                        const double g = n4.grad[idx4(d, n, c, h, w)];
                        if (x.requires_grad())
                            x.grad()[idx4(d, n, c, h, w)] += g * s.values()[idx4(ds, n, 0, h, w)];
                        if (s.requires_grad())
                            s.grad()[idx4(ds, n, 0, h, w)] += g * x.values()[idx4(d, n, c, h, w)];
                    }
    });
}

// Extracts channel c as (N,1,H,W).
inline Tensor select_channel(Tensor x, int ch) {
    const Dims4 d = dims4(x, "select_channel");
    require(ch >= 0 && ch < d.c, "nn", "select_channel: channel out of range");
    const Dims4 od{d.n, 1, d.h, d.w};
    std::vector<double> out(numel({od.n, 1, od.h, od.w}));
    for (int n = 0; n < d.n; ++n)
        for (int h = 0; h < d.h; ++h)
            for (int w = 0; w < d.w; ++w)
                out[idx4(od, n, 0, h, w)] = x.values()[idx4(d, n, ch, h, w)];
    return make_op({od.n, 1, od.h, od.w}, std::move(out), {x}, [x, d, od, ch](Node& n4) {
        for (int n = 0; n < d.n; ++n)
            for (int h = 0; h < d.h; ++h)
                for (int w = 0; w < d.w; ++w)
                    x.grad()[idx4(d, n, ch, h, w)] += n4.grad[idx4(od, n, 0, h, w)];
    });
}

// Numerically stable softmax over the channel axis, per (n,h,w) position.
inline Tensor softmax_channels(Tensor x) {
    const Dims4 d = dims4(x, "softmax");
    std::vector<double> out(x.size());
    for (int n = 0; n < d.n; ++n)
        for (int h = 0; h < d.h; ++h)
            for (int w = 0; w < d.w; ++w) {
                double mx = -1e300;
                for (int c = 0; c < d.c; ++c) mx = std::max(mx, x.values()[idx4(d, n, c, h, w)]);
                double z = 0.0;
                for (int c = 0; c < d.c; ++c) {
                    const double e = std::exp(x.values()[idx4(d, n, c, h, w)] - mx);
                    out[idx4(d, n, c, h, w)] = e;
                    z += e;
                }
                for (int c = 0; c < d.c; ++c) out[idx4(d, n, c, h, w)] /= z;
            }
    return make_op(x.shape(), std::move(out), {x}, [x, d](Node& n4) {
        for (int n = 0; n < d.n; ++n)
            for (int h = 0; h < d.h; ++h)
                for (int w = 0; w < d.w; ++w) {
                    double dot = 0.0;
                    for (int c = 0; c < d.c; ++c) {
                        const std::size_t i = idx4(d, n, c, h, w);
                        dot += n4.grad[i] * n4.values[i];
                    }
                    for (int c = 0; c < d.c; ++c) {
                        const std::size_t i = idx4(d, n, c, h, w);
                        x.grad()[i] += n4.values[i] * (n4.grad[i] - dot);
                    }
                }
    });
}

}  // namespace bevfuse::nn
