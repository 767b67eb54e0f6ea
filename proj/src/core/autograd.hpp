#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "core/tensor.hpp"

// Reverse-mode autodiff over dense tensors. Define-by-run: every op
// allocates a node holding the output value plus a closure that routes
// gradients to its parents. Graphs are rebuilt per step and freed when
// the loss handle goes out of scope; parameters are long-lived leaves.
namespace fasdiff::ag {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;
    int64_t id = 0;

    void ensure_grad() {
        if (grad.numel() == 0) grad = Tensor<T>(value.shape());
    }
};

inline int64_t next_node_id() {
    static std::atomic<int64_t> counter{0};
    return ++counter;
}

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) {
        n_ = std::make_shared<Node<T>>();
        n_->value = std::move(value);
        n_->requires_grad = requires_grad;
        n_->id = next_node_id();
    }

    bool defined() const { return n_ != nullptr; }
    const Tensor<T>& value() const { return n_->value; }
    Tensor<T>& value() { return n_->value; }
    const Tensor<T>& grad() const { return n_->grad; }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    const Shape& shape() const { return n_->value.shape(); }
    int64_t numel() const { return n_->value.numel(); }

    void zero_grad() {
        if (n_ && n_->grad.numel() > 0) std::fill(n_->grad.vec().begin(), n_->grad.vec().end(), T(0));
    }

    std::shared_ptr<Node<T>> node() const { return n_; }

private:
    std::shared_ptr<Node<T>> n_;
};

template <typename T>
Var<T> constant(Tensor<T> v) {
    return Var<T>(std::move(v), false);
}

template <typename T>
Var<T> param(Tensor<T> v) {
    return Var<T>(std::move(v), true);
}

namespace detail {

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward_fn) {
    bool needs = false;
    for (const auto& p : parents)
        if (p.requires_grad()) needs = true;
    Var<T> out(std::move(value), needs);
    if (needs) {
        auto node = out.node();
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward_fn);
    }
    return out;
}

template <typename T>
using EigenRowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<EigenRowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const EigenRowMat<T>>;

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_arg(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    const T* pa = a.value().data();
    const T* pb = b.value().data();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = pa[i] + pb[i];
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<T>(std::move(out), {a, b}, [na, nb](Node<T>& self) {
        if (na->requires_grad) {
            na->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) na->grad[i] += self.grad[i];
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) nb->grad[i] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_arg(a.shape() == b.shape(), "sub: shape mismatch");
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<T>(std::move(out), {a, b}, [na, nb](Node<T>& self) {
        if (na->requires_grad) {
            na->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) na->grad[i] += self.grad[i];
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) nb->grad[i] -= self.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_arg(a.shape() == b.shape(), "mul: shape mismatch");
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<T>(std::move(out), {a, b}, [na, nb](Node<T>& self) {
        if (na->requires_grad) {
            na->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) na->grad[i] += self.grad[i] * nb->value[i];
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) nb->grad[i] += self.grad[i] * na->value[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& x, double c) {
    Tensor<T> out(x.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(c) * x.value()[i];
    auto nx = x.node();
    return detail::make_result<T>(std::move(out), {x}, [nx, c](Node<T>& self) {
        nx->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) nx->grad[i] += static_cast<T>(c) * self.grad[i];
    });
}

// a*x + b*y; the workhorse of schedules and samplers.
template <typename T>
Var<T> axpby(double a, const Var<T>& x, double b, const Var<T>& y) {
    check_arg(x.shape() == y.shape(), "axpby: shape mismatch");
    Tensor<T> out(x.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(a) * x.value()[i] + static_cast<T>(b) * y.value()[i];
    auto nx = x.node();
    auto ny = y.node();
    return detail::make_result<T>(std::move(out), {x, y}, [nx, ny, a, b](Node<T>& self) {
        if (nx->requires_grad) {
            nx->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) nx->grad[i] += static_cast<T>(a) * self.grad[i];
        }
        if (ny->requires_grad) {
            ny->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) ny->grad[i] += static_cast<T>(b) * self.grad[i];
        }
    });
}

template <typename T>
Var<T> add_const(const Var<T>& x, const Tensor<T>& c) {
    check_arg(x.shape() == c.shape(), "add_const: shape mismatch");
    Tensor<T> out(x.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] + c[i];
    auto nx = x.node();
    return detail::make_result<T>(std::move(out), {x}, [nx](Node<T>& self) {
        nx->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) nx->grad[i] += self.grad[i];
    });
}

template <typename T>
Var<T> mul_const(const Var<T>& x, const Tensor<T>& c) {
    check_arg(x.shape() == c.shape(), "mul_const: shape mismatch");
    Tensor<T> out(x.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * c[i];
    auto nx = x.node();
    Tensor<T> cc = c;
    return detail::make_result<T>(std::move(out), {x}, [nx, cc = std::move(cc)](Node<T>& self) {
        nx->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) nx->grad[i] += self.grad[i] * cc[i];
    });
}

// x * s where s has shape [1]; broadcast multiply (used for the face-branch scale).
template <typename T>
Var<T> mul_scalar(const Var<T>& x, const Var<T>& s) {
    check_arg(s.numel() == 1, "mul_scalar: scale must be a scalar");
    Tensor<T> out(x.shape());
    T sv = s.value()[0];
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * sv;
    auto nx = x.node();
    auto ns = s.node();
    return detail::make_result<T>(std::move(out), {x, s}, [nx, ns](Node<T>& self) {
        if (nx->requires_grad) {
            nx->ensure_grad();
            T sv = ns->value[0];
            for (int64_t i = 0; i < self.grad.numel(); ++i) nx->grad[i] += self.grad[i] * sv;
        }
        if (ns->requires_grad) {
            ns->ensure_grad();
            double acc = 0.0;
            for (int64_t i = 0; i < self.grad.numel(); ++i)
                acc += static_cast<double>(self.grad[i]) * static_cast<double>(nx->value[i]);
            ns->grad[0] += static_cast<T>(acc);
        }
    });
}

// -------------------------------------------------------------------- unary

namespace detail {
template <typename T, typename FwdFn, typename BwdFn>
Var<T> unary_op(const Var<T>& x, FwdFn fwd, BwdFn bwd_from_in_out) {
    Tensor<T> out(x.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = fwd(x.value()[i]);
    auto nx = x.node();
    return make_result<T>(std::move(out), {x}, [nx, bwd_from_in_out](Node<T>& self) {
        nx->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i)
            nx->grad[i] += self.grad[i] * bwd_from_in_out(nx->value[i], self.value[i]);
    });
}
}  // namespace detail

template <typename T>
Var<T> relu(const Var<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    return detail::unary_op(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T out) { return out * (T(1) - out); });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v / (T(1) + std::exp(-v)); },
        [](T in, T) {
            T s = T(1) / (T(1) + std::exp(-in));
            return s * (T(1) + in * (T(1) - s));
        });
}

template <typename T>
Var<T> tanh_op(const Var<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::tanh(v); }, [](T, T out) { return T(1) - out * out; });
}

template <typename T>
Var<T> exp_op(const Var<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::exp(v); }, [](T, T out) { return out; });
}

template <typename T>
Var<T> log_op(const Var<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::log(v); }, [](T in, T) { return T(1) / in; });
}

template <typename T>
Var<T> sqrt_op(const Var<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::sqrt(v); }, [](T, T out) { return T(0.5) / out; });
}

template <typename T>
Var<T> abs_op(const Var<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::abs(v); },
        [](T in, T) { return in > T(0) ? T(1) : (in < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(const Var<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v * v; }, [](T in, T) { return T(2) * in; });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
    return detail::unary_op(
        x,
        [](T v) {
            // stable: log(1+e^v) = max(v,0) + log1p(e^{-|v|})
            return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
        },
        [](T in, T) { return T(1) / (T(1) + std::exp(-in)); });
}

// clamp from below; gradient passes only where the input is above the floor
template <typename T>
Var<T> clamp_min(const Var<T>& x, double floor_value) {
    T f = static_cast<T>(floor_value);
    return detail::unary_op(
        x, [f](T v) { return v > f ? v : f; }, [f](T in, T) { return in > f ? T(1) : T(0); });
}

// y[n,c,hw] = x[n,c,hw] - b[c]
template <typename T>
Var<T> sub_channel_bias(const Var<T>& x, const Var<T>& b) {
    check_arg(x.shape().size() == 4 && b.shape().size() == 1 && b.numel() == x.shape()[1],
              "sub_channel_bias: bias must match channel count");
    int64_t N = x.shape()[0], C = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    Tensor<T> out(x.shape());
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            T bv = b.value()[c];
            const T* src = x.value().data() + (n * C + c) * hw;
            T* dst = out.data() + (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] - bv;
        }
    auto nx = x.node();
    auto nb = b.node();
    return detail::make_result<T>(std::move(out), {x, b}, [nx, nb, N, C, hw](Node<T>& self) {
        if (nx->requires_grad) {
            nx->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) nx->grad[i] += self.grad[i];
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const T* g = self.grad.data() + (n * C + c) * hw;
                    double acc = 0.0;
                    for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(g[i]);
                    nb->grad[c] -= static_cast<T>(acc);
                }
        }
    });
}

// y[n,c,hw] = x[n,c,hw] + b[n,c]; used to inject per-sample conditioning
// vectors into feature maps
template <typename T>
Var<T> add_sample_channel_bias(const Var<T>& x, const Var<T>& b) {
    check_arg(x.shape().size() == 4 && b.shape().size() == 2 && b.shape()[0] == x.shape()[0] &&
                  b.shape()[1] == x.shape()[1],
              "add_sample_channel_bias: bias must be [N,C]");
    int64_t N = x.shape()[0], C = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    Tensor<T> out(x.shape());
    for (int64_t nc = 0; nc < N * C; ++nc) {
        T bv = b.value()[nc];
        const T* src = x.value().data() + nc * hw;
        T* dst = out.data() + nc * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] + bv;
    }
    auto nx = x.node();
    auto nb = b.node();
    return detail::make_result<T>(std::move(out), {x, b}, [nx, nb, N, C, hw](Node<T>& self) {
        if (nx->requires_grad) {
            nx->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) nx->grad[i] += self.grad[i];
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (int64_t nc = 0; nc < N * C; ++nc) {
                const T* g = self.grad.data() + nc * hw;
                double acc = 0.0;
                for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(g[i]);
                nb->grad[nc] += static_cast<T>(acc);
            }
        }
    });
}

// y[n,c,hw] = x[n,c,hw] * s[c]
template <typename T>
Var<T> mul_channel(const Var<T>& x, const Var<T>& s) {
    check_arg(x.shape().size() == 4 && s.shape().size() == 1 && s.numel() == x.shape()[1],
              "mul_channel: scale must match channel count");
    int64_t N = x.shape()[0], C = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    Tensor<T> out(x.shape());
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            T sv = s.value()[c];
            const T* src = x.value().data() + (n * C + c) * hw;
            T* dst = out.data() + (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] * sv;
        }
    auto nx = x.node();
    auto ns = s.node();
    return detail::make_result<T>(std::move(out), {x, s}, [nx, ns, N, C, hw](Node<T>& self) {
        if (nx->requires_grad) {
            nx->ensure_grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    T sv = ns->value[c];
                    const T* g = self.grad.data() + (n * C + c) * hw;
                    T* gx = nx->grad.data() + (n * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i) gx[i] += g[i] * sv;
                }
        }
        if (ns->requires_grad) {
            ns->ensure_grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const T* g = self.grad.data() + (n * C + c) * hw;
                    const T* xv = nx->value.data() + (n * C + c) * hw;
                    double acc = 0.0;
                    for (int64_t i = 0; i < hw; ++i)
                        acc += static_cast<double>(g[i]) * static_cast<double>(xv[i]);
                    ns->grad[c] += static_cast<T>(acc);
                }
        }
    });
}

// Rounding with ties away from zero; forward quantizes, backward is identity.
template <typename T>
Var<T> round_ste(const Var<T>& x) {
    Tensor<T> out(x.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::round(x.value()[i]);
    auto nx = x.node();
    return detail::make_result<T>(std::move(out), {x}, [nx](Node<T>& self) {
        nx->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) nx->grad[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum_all(const Var<T>& x) {
    double acc = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x.value()[i]);
    auto nx = x.node();
    return detail::make_result<T>(Tensor<T>::scalar(static_cast<T>(acc)), {x}, [nx](Node<T>& self) {
        nx->ensure_grad();
        T g = self.grad[0];
        for (int64_t i = 0; i < nx->grad.numel(); ++i) nx->grad[i] += g;
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    int64_t n = x.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x.value()[i]);
    auto nx = x.node();
    return detail::make_result<T>(Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n))), {x},
                                  [nx, n](Node<T>& self) {
                                      nx->ensure_grad();
                                      T g = self.grad[0] / static_cast<T>(n);
                                      for (int64_t i = 0; i < nx->grad.numel(); ++i) nx->grad[i] += g;
                                  });
}

// ------------------------------------------------------------ shape plumbing

template <typename T>
Var<T> reshape(const Var<T>& x, Shape s) {
    Tensor<T> out = x.value().reshaped(std::move(s));
    auto nx = x.node();
    return detail::make_result<T>(std::move(out), {x}, [nx](Node<T>& self) {
        nx->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) nx->grad[i] += self.grad[i];
    });
}

// [N,C,H,W] -> [N, H*W, C]
template <typename T>
Var<T> nchw_to_tokens(const Var<T>& x) {
    check_arg(x.shape().size() == 4, "nchw_to_tokens: expected 4-d input");
    int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    Tensor<T> out(Shape{N, H * W, C});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t p = 0; p < H * W; ++p) out.at3(n, p, c) = x.value()[((n * C + c) * H * W) + p];
    auto nx = x.node();
    return detail::make_result<T>(std::move(out), {x}, [nx, N, C, H, W](Node<T>& self) {
        nx->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t p = 0; p < H * W; ++p)
                    nx->grad[((n * C + c) * H * W) + p] += self.grad.at3(n, p, c);
    });
}

// [N, H*W, C] -> [N,C,H,W]
template <typename T>
Var<T> tokens_to_nchw(const Var<T>& x, int64_t H, int64_t W) {
    check_arg(x.shape().size() == 3 && x.shape()[1] == H * W, "tokens_to_nchw: bad token count");
    int64_t N = x.shape()[0], C = x.shape()[2];
    Tensor<T> out(Shape{N, C, H, W});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t p = 0; p < H * W; ++p) out[((n * C + c) * H * W) + p] = x.value().at3(n, p, c);
    auto nx = x.node();
    return detail::make_result<T>(std::move(out), {x}, [nx, N, C, H, W](Node<T>& self) {
        nx->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t p = 0; p < H * W; ++p)
                    nx->grad.at3(n, p, c) += self.grad[((n * C + c) * H * W) + p];
    });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    check_arg(a.shape().size() == 4 && b.shape().size() == 4, "concat_channels: expected 4-d");
    check_arg(a.shape()[0] == b.shape()[0] && a.shape()[2] == b.shape()[2] && a.shape()[3] == b.shape()[3],
              "concat_channels: N/H/W mismatch");
    int64_t N = a.shape()[0], Ca = a.shape()[1], Cb = b.shape()[1], H = a.shape()[2], W = a.shape()[3];
    Tensor<T> out(Shape{N, Ca + Cb, H, W});
    int64_t hw = H * W;
    for (int64_t n = 0; n < N; ++n) {
        std::copy(a.value().data() + n * Ca * hw, a.value().data() + (n + 1) * Ca * hw,
                  out.data() + n * (Ca + Cb) * hw);
        std::copy(b.value().data() + n * Cb * hw, b.value().data() + (n + 1) * Cb * hw,
                  out.data() + n * (Ca + Cb) * hw + Ca * hw);
    }
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<T>(std::move(out), {a, b}, [na, nb, N, Ca, Cb, hw](Node<T>& self) {
        for (int64_t n = 0; n < N; ++n) {
            const T* g = self.grad.data() + n * (Ca + Cb) * hw;
            if (na->requires_grad) {
                na->ensure_grad();
                T* ga = na->grad.data() + n * Ca * hw;
                for (int64_t i = 0; i < Ca * hw; ++i) ga[i] += g[i];
            }
            if (nb->requires_grad) {
                nb->ensure_grad();
                T* gb = nb->grad.data() + n * Cb * hw;
                for (int64_t i = 0; i < Cb * hw; ++i) gb[i] += g[Ca * hw + i];
            }
        }
    });
}

// --------------------------------------------------------------- linear alg

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    check_arg(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
              "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor<T> out(Shape{m, n});
    detail::ConstMatMap<T> A(a.value().data(), m, k), B(b.value().data(), k, n);
    detail::MatMap<T>(out.data(), m, n) = A * B;
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<T>(std::move(out), {a, b}, [na, nb, m, k, n](Node<T>& self) {
        detail::ConstMatMap<T> G(self.grad.data(), m, n);
        if (na->requires_grad) {
            na->ensure_grad();
            detail::ConstMatMap<T> B(nb->value.data(), k, n);
            detail::MatMap<T>(na->grad.data(), m, k) += G * B.transpose();
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            detail::ConstMatMap<T> A(na->value.data(), m, k);
            detail::MatMap<T>(nb->grad.data(), k, n) += A.transpose() * G;
        }
    });
}

// x:[m,din], w:[dout,din], b:[dout] (optional) -> [m,dout]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>()) {
    check_arg(x.shape().size() == 2 && w.shape().size() == 2 && x.shape()[1] == w.shape()[1],
              "linear: incompatible shapes " + shape_str(x.shape()) + " and " + shape_str(w.shape()));
    int64_t m = x.shape()[0], din = x.shape()[1], dout = w.shape()[0];
    Tensor<T> out(Shape{m, dout});
    detail::ConstMatMap<T> X(x.value().data(), m, din), W(w.value().data(), dout, din);
    detail::MatMap<T> O(out.data(), m, dout);
    O = X * W.transpose();
    bool has_bias = b.defined();
    if (has_bias) {
        check_arg(b.numel() == dout, "linear: bias size mismatch");
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < dout; ++j) out.at2(i, j) += b.value()[j];
    }
    std::vector<Var<T>> parents{x, w};
    if (has_bias) parents.push_back(b);
    auto nx = x.node();
    auto nw = w.node();
    auto nb = has_bias ? b.node() : nullptr;
    return detail::make_result<T>(std::move(out), std::move(parents), [nx, nw, nb, m, din, dout](Node<T>& self) {
        detail::ConstMatMap<T> G(self.grad.data(), m, dout);
        if (nx->requires_grad) {
            nx->ensure_grad();
            detail::ConstMatMap<T> W(nw->value.data(), dout, din);
            detail::MatMap<T>(nx->grad.data(), m, din) += G * W;
        }
        if (nw->requires_grad) {
            nw->ensure_grad();
            detail::ConstMatMap<T> X(nx->value.data(), m, din);
            detail::MatMap<T>(nw->grad.data(), dout, din) += G.transpose() * X;
        }
        if (nb && nb->requires_grad) {
            nb->ensure_grad();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < dout; ++j) nb->grad[j] += self.grad.at2(i, j);
        }
    });
}

// batched matmul, a:[B,m,k] b:[B,k,n]
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
    check_arg(a.shape().size() == 3 && b.shape().size() == 3 && a.shape()[0] == b.shape()[0] &&
                  a.shape()[2] == b.shape()[1],
              "bmm: incompatible shapes");
    int64_t B = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
    Tensor<T> out(Shape{B, m, n});
    for (int64_t i = 0; i < B; ++i) {
        detail::ConstMatMap<T> A(a.value().data() + i * m * k, m, k), Bm(b.value().data() + i * k * n, k, n);
        detail::MatMap<T>(out.data() + i * m * n, m, n) = A * Bm;
    }
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<T>(std::move(out), {a, b}, [na, nb, B, m, k, n](Node<T>& self) {
        for (int64_t i = 0; i < B; ++i) {
            detail::ConstMatMap<T> G(self.grad.data() + i * m * n, m, n);
            if (na->requires_grad) {
                na->ensure_grad();
                detail::ConstMatMap<T> Bm(nb->value.data() + i * k * n, k, n);
                detail::MatMap<T>(na->grad.data() + i * m * k, m, k) += G * Bm.transpose();
            }
            if (nb->requires_grad) {
                nb->ensure_grad();
                detail::ConstMatMap<T> A(na->value.data() + i * m * k, m, k);
                detail::MatMap<T>(nb->grad.data() + i * k * n, k, n) += A.transpose() * G;
            }
        }
    });
}

template <typename T>
Var<T> transpose_last2(const Var<T>& x) {
    check_arg(x.shape().size() == 3, "transpose_last2: expected 3-d");
    int64_t B = x.shape()[0], m = x.shape()[1], n = x.shape()[2];
    Tensor<T> out(Shape{B, n, m});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out.at3(b, j, i) = x.value().at3(b, i, j);
    auto nx = x.node();
    return detail::make_result<T>(std::move(out), {x}, [nx, B, m, n](Node<T>& self) {
        nx->ensure_grad();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) nx->grad.at3(b, i, j) += self.grad.at3(b, j, i);
    });
}

// softmax over the last dimension, stable w.r.t. large logits
template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
    int64_t n = x.shape().back();
    int64_t rows = x.numel() / n;
    Tensor<T> out(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const T* in = x.value().data() + r * n;
        T* o = out.data() + r * n;
        T mx = in[0];
        for (int64_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
        double denom = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            o[i] = std::exp(in[i] - mx);
            denom += static_cast<double>(o[i]);
        }
        for (int64_t i = 0; i < n; ++i) o[i] = static_cast<T>(o[i] / denom);
    }
    auto nx = x.node();
    return detail::make_result<T>(std::move(out), {x}, [nx, n, rows](Node<T>& self) {
        nx->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const T* y = self.value.data() + r * n;
            const T* gy = self.grad.data() + r * n;
            T* gx = nx->grad.data() + r * n;
            double dot = 0.0;
            for (int64_t i = 0; i < n; ++i) dot += static_cast<double>(gy[i]) * static_cast<double>(y[i]);
            for (int64_t i = 0; i < n; ++i) gx[i] += y[i] * (gy[i] - static_cast<T>(dot));
        }
    });
}

// ------------------------------------------------------------------- conv

namespace detail {

template <typename T>
void im2col(const T* img, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, T* col) {
    // col layout: [C*kh*kw, Ho*Wo]
    for (int64_t c = 0; c < C; ++c)
        for (int64_t ki = 0; ki < kh; ++ki)
            for (int64_t kj = 0; kj < kw; ++kj) {
                T* row = col + ((c * kh + ki) * kw + kj) * (Ho * Wo);
                for (int64_t oh = 0; oh < Ho; ++oh) {
                    int64_t ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) {
                        std::fill(row + oh * Wo, row + (oh + 1) * Wo, T(0));
                        continue;
                    }
                    const T* src = img + (c * H + ih) * W;
                    for (int64_t ow = 0; ow < Wo; ++ow) {
                        int64_t iw = ow * stride - pad + kj;
                        row[oh * Wo + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
                int64_t pad, int64_t Ho, int64_t Wo, T* img) {
    for (int64_t c = 0; c < C; ++c)
        for (int64_t ki = 0; ki < kh; ++ki)
            for (int64_t kj = 0; kj < kw; ++kj) {
                const T* row = col + ((c * kh + ki) * kw + kj) * (Ho * Wo);
                for (int64_t oh = 0; oh < Ho; ++oh) {
                    int64_t ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) continue;
                    T* dst = img + (c * H + ih) * W;
                    for (int64_t ow = 0; ow < Wo; ++ow) {
                        int64_t iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < W) dst[iw] += row[oh * Wo + ow];
                    }
                }
            }
}

}  // namespace detail

// x:[N,C,H,W], w:[Co,C,kh,kw], b:[Co] optional
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride, int64_t pad) {
    check_arg(x.shape().size() == 4 && w.shape().size() == 4, "conv2d: expected 4-d tensors");
    check_arg(x.shape()[1] == w.shape()[1], "conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                                                shape_str(w.shape()));
    int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    int64_t Co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    check_arg(Ho >= 1 && Wo >= 1, "conv2d: output would be empty");
    int64_t ck = C * kh * kw;

    Tensor<T> out(Shape{N, Co, Ho, Wo});
    std::vector<T> col(static_cast<size_t>(ck * Ho * Wo));
    detail::ConstMatMap<T> Wm(w.value().data(), Co, ck);
    for (int64_t n = 0; n < N; ++n) {
        detail::im2col(x.value().data() + n * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
        detail::ConstMatMap<T> Cm(col.data(), ck, Ho * Wo);
        detail::MatMap<T> Om(out.data() + n * Co * Ho * Wo, Co, Ho * Wo);
        Om = Wm * Cm;
    }
    bool has_bias = b.defined();
    if (has_bias) {
        check_arg(b.numel() == Co, "conv2d: bias size mismatch");
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < Co; ++c) {
                T bv = b.value()[c];
                T* p = out.data() + (n * Co + c) * Ho * Wo;
                for (int64_t i = 0; i < Ho * Wo; ++i) p[i] += bv;
            }
    }

    std::vector<Var<T>> parents{x, w};
    if (has_bias) parents.push_back(b);
    auto nx = x.node();
    auto nw = w.node();
    auto nb = has_bias ? b.node() : nullptr;
    return detail::make_result<T>(
        std::move(out), std::move(parents),
        [nx, nw, nb, N, C, H, W, Co, kh, kw, stride, pad, Ho, Wo, ck](Node<T>& self) {
            std::vector<T> col(static_cast<size_t>(ck * Ho * Wo));
            std::vector<T> dcol(static_cast<size_t>(ck * Ho * Wo));
            if (nx->requires_grad) nx->ensure_grad();
            if (nw->requires_grad) nw->ensure_grad();
            for (int64_t n = 0; n < N; ++n) {
                detail::ConstMatMap<T> G(self.grad.data() + n * Co * Ho * Wo, Co, Ho * Wo);
                if (nw->requires_grad) {
                    detail::im2col(nx->value.data() + n * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo,
                                   col.data());
                    detail::ConstMatMap<T> Cm(col.data(), ck, Ho * Wo);
                    detail::MatMap<T>(nw->grad.data(), Co, ck) += G * Cm.transpose();
                }
                if (nx->requires_grad) {
                    detail::ConstMatMap<T> Wm(nw->value.data(), Co, ck);
                    detail::MatMap<T>(dcol.data(), ck, Ho * Wo) = Wm.transpose() * G;
                    detail::col2im_add(dcol.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                                       nx->grad.data() + n * C * H * W);
                }
            }
            if (nb && nb->requires_grad) {
                nb->ensure_grad();
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t c = 0; c < Co; ++c) {
                        const T* g = self.grad.data() + (n * Co + c) * Ho * Wo;
                        double acc = 0.0;
                        for (int64_t i = 0; i < Ho * Wo; ++i) acc += static_cast<double>(g[i]);
                        nb->grad[c] += static_cast<T>(acc);
                    }
            }
        });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
    check_arg(x.shape().size() == 4, "upsample_nearest2: expected 4-d");
    int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    Tensor<T> out(Shape{N, C, H * 2, W * 2});
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* src = x.value().data() + nc * H * W;
        T* dst = out.data() + nc * 4 * H * W;
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
                T v = src[i * W + j];
                dst[(2 * i) * (2 * W) + 2 * j] = v;
                dst[(2 * i) * (2 * W) + 2 * j + 1] = v;
                dst[(2 * i + 1) * (2 * W) + 2 * j] = v;
                dst[(2 * i + 1) * (2 * W) + 2 * j + 1] = v;
            }
    }
    auto nx = x.node();
    return detail::make_result<T>(std::move(out), {x}, [nx, N, C, H, W](Node<T>& self) {
        nx->ensure_grad();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            T* gsrc = nx->grad.data() + nc * H * W;
            const T* g = self.grad.data() + nc * 4 * H * W;
            for (int64_t i = 0; i < H; ++i)
                for (int64_t j = 0; j < W; ++j)
                    gsrc[i * W + j] += g[(2 * i) * (2 * W) + 2 * j] + g[(2 * i) * (2 * W) + 2 * j + 1] +
                                       g[(2 * i + 1) * (2 * W) + 2 * j] + g[(2 * i + 1) * (2 * W) + 2 * j + 1];
        }
    });
}

// [N,C,H,W] -> [N,C]
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    check_arg(x.shape().size() == 4, "global_avg_pool: expected 4-d");
    int64_t N = x.shape()[0], C = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    Tensor<T> out(Shape{N, C});
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* p = x.value().data() + nc * hw;
        double acc = 0.0;
        for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(p[i]);
        out[nc] = static_cast<T>(acc / static_cast<double>(hw));
    }
    auto nx = x.node();
    return detail::make_result<T>(std::move(out), {x}, [nx, N, C, hw](Node<T>& self) {
        nx->ensure_grad();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            T g = self.grad[nc] / static_cast<T>(hw);
            T* p = nx->grad.data() + nc * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] += g;
        }
    });
}

// ----------------------------------------------------------------- groupnorm

// x:[N,C,H,W] normalized per (n, group); gamma/beta per channel.
template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int64_t groups, double eps = 1e-5) {
    check_arg(x.shape().size() == 4, "group_norm: expected 4-d");
    int64_t N = x.shape()[0], C = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    check_arg(C % groups == 0, "group_norm: channels not divisible by groups");
    check_arg(gamma.numel() == C && beta.numel() == C, "group_norm: affine size mismatch");
    int64_t cg = C / groups;      // channels per group
    int64_t m = cg * hw;          // elements per group
    Tensor<T> out(x.shape());
    Tensor<T> stats(Shape{N * groups, 2});  // mean, invstd per group
    for (int64_t n = 0; n < N; ++n)
        for (int64_t g = 0; g < groups; ++g) {
            const T* p = x.value().data() + (n * C + g * cg) * hw;
            double mean = 0.0;
            for (int64_t i = 0; i < m; ++i) mean += static_cast<double>(p[i]);
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                double d = static_cast<double>(p[i]) - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            double invstd = 1.0 / std::sqrt(var + eps);
            stats.at2(n * groups + g, 0) = static_cast<T>(mean);
            stats.at2(n * groups + g, 1) = static_cast<T>(invstd);
            T* o = out.data() + (n * C + g * cg) * hw;
            for (int64_t c = 0; c < cg; ++c) {
                T ga = gamma.value()[g * cg + c];
                T be = beta.value()[g * cg + c];
                for (int64_t i = 0; i < hw; ++i) {
                    double xh = (static_cast<double>(p[c * hw + i]) - mean) * invstd;
                    o[c * hw + i] = static_cast<T>(static_cast<double>(ga) * xh + static_cast<double>(be));
                }
            }
        }
    auto nx = x.node();
    auto ng = gamma.node();
    auto nb = beta.node();
    return detail::make_result<T>(
        std::move(out), {x, gamma, beta},
        [nx, ng, nb, N, C, hw, groups, cg, m, stats = std::move(stats)](Node<T>& self) {
            if (nx->requires_grad) nx->ensure_grad();
            if (ng->requires_grad) ng->ensure_grad();
            if (nb->requires_grad) nb->ensure_grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t g = 0; g < groups; ++g) {
                    double mean = stats.at2(n * groups + g, 0);
                    double invstd = stats.at2(n * groups + g, 1);
                    const T* p = nx->value.data() + (n * C + g * cg) * hw;
                    const T* gy = self.grad.data() + (n * C + g * cg) * hw;
                    // accumulate affine grads + the two group means needed for dx
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int64_t c = 0; c < cg; ++c) {
                        double ga = ng->value[g * cg + c];
                        double dgamma = 0.0, dbeta = 0.0;
                        for (int64_t i = 0; i < hw; ++i) {
                            double xh = (static_cast<double>(p[c * hw + i]) - mean) * invstd;
                            double dy = gy[c * hw + i];
                            dgamma += dy * xh;
                            dbeta += dy;
                            double dxh = dy * ga;
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xh;
                        }
                        if (ng->requires_grad) ng->grad[g * cg + c] += static_cast<T>(dgamma);
                        if (nb->requires_grad) nb->grad[g * cg + c] += static_cast<T>(dbeta);
                    }
                    if (!nx->requires_grad) continue;
                    double mean_dxhat = sum_dxhat / static_cast<double>(m);
                    double mean_dxhat_xhat = sum_dxhat_xhat / static_cast<double>(m);
                    T* gx = nx->grad.data() + (n * C + g * cg) * hw;
                    for (int64_t c = 0; c < cg; ++c) {
                        double ga = ng->value[g * cg + c];
                        for (int64_t i = 0; i < hw; ++i) {
                            double xh = (static_cast<double>(p[c * hw + i]) - mean) * invstd;
                            double dxh = static_cast<double>(gy[c * hw + i]) * ga;
                            gx[c * hw + i] +=
                                static_cast<T>(invstd * (dxh - mean_dxhat - xh * mean_dxhat_xhat));
                        }
                    }
                }
        });
}

// ---------------------------------------------------------------- embedding

// table:[V,d], ids flattened -> [n_ids, d]
template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<int32_t>& ids) {
    check_arg(table.shape().size() == 2, "embedding: table must be 2-d");
    int64_t V = table.shape()[0], d = table.shape()[1];
    Tensor<T> out(Shape{static_cast<int64_t>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        check_arg(ids[i] >= 0 && ids[i] < V, "embedding: id out of range");
        std::copy(table.value().data() + ids[i] * d, table.value().data() + (ids[i] + 1) * d,
                  out.data() + static_cast<int64_t>(i) * d);
    }
    auto nt = table.node();
    return detail::make_result<T>(std::move(out), {table}, [nt, ids, d](Node<T>& self) {
        nt->ensure_grad();
        for (size_t i = 0; i < ids.size(); ++i) {
            const T* g = self.grad.data() + static_cast<int64_t>(i) * d;
            T* dst = nt->grad.data() + ids[i] * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
        }
    });
}

// ----------------------------------------------------------------- backward

template <typename T>
void backward(const Var<T>& loss) {
    check_arg(loss.numel() == 1, "backward: loss must be scalar");
    check_numeric(std::isfinite(static_cast<double>(loss.value()[0])), "backward: non-finite loss");
    if (!loss.requires_grad()) return;

    // Collect the reachable grad-requiring subgraph, then run in reverse
    // creation order (valid topological order for a define-by-run graph).
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{loss.node().get()};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents) {
            if (p->requires_grad && !seen.count(p.get())) {
                seen.insert(p.get());
                stack.push_back(p.get());
            }
        }
    }
    std::sort(order.begin(), order.end(), [](Node<T>* a, Node<T>* b) { return a->id > b->id; });

    loss.node()->ensure_grad();
    loss.node()->grad[0] = T(1);
    for (Node<T>* n : order) {
        if (n->backward_fn && n->grad.numel() > 0) n->backward_fn(*n);
    }
}

// convenience losses used across training code

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    return mean_all(square(sub(a, b)));
}

// Euclidean norm with a tiny epsilon inside the root so the gradient
// stays defined at zero distance.
template <typename T>
Var<T> l2_norm(const Var<T>& x, double eps = 1e-12) {
    auto s = sum_all(square(x));
    return sqrt_op(add_const(s, Tensor<T>::scalar(static_cast<T>(eps))));
}

}  // namespace fasdiff::ag
