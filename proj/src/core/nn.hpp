#pragma once

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "core/autograd.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

// Named parameter registry, layer building blocks and the optimizer.
// Parameters live in a flat name -> Var map; module structs are thin views
// that register (or re-attach to) their tensors by prefixed name, so a
// checkpoint can be loaded into the store before modules are built.
namespace fasdiff::nn {

using ag::Var;

template <typename T>
class ParamStore {
public:
    // Returns the existing parameter if the name is already present
    // (shape-checked), otherwise creates it via init.
    template <typename InitFn>
    Var<T> create(const std::string& name, const Shape& shape, InitFn init) {
        auto it = params_.find(name);
        if (it != params_.end()) {
            check_arg(it->second.shape() == shape, "parameter shape mismatch for " + name + ": stored " +
                                                       shape_str(it->second.shape()) + " vs requested " +
                                                       shape_str(shape));
            return it->second;
        }
        Tensor<T> t(shape);
        init(t);
        Var<T> v = ag::param(std::move(t));
        params_.emplace(name, v);
        return v;
    }

    bool has(const std::string& name) const { return params_.count(name) > 0; }

    Var<T> get(const std::string& name) const {
        auto it = params_.find(name);
        check_arg(it != params_.end(), "unknown parameter " + name);
        return it->second;
    }

    void put(const std::string& name, Tensor<T> t) {
        auto it = params_.find(name);
        if (it != params_.end()) {
            check_arg(it->second.shape() == t.shape(), "checkpoint shape mismatch for " + name);
            it->second.value() = std::move(t);
        } else {
            params_.emplace(name, ag::param(std::move(t)));
        }
    }

    std::vector<std::string> names(const std::string& prefix = "") const {
        std::vector<std::string> out;
        for (const auto& [k, v] : params_)
            if (k.rfind(prefix, 0) == 0) out.push_back(k);
        return out;  // std::map iteration is already sorted
    }

    void zero_grad(const std::string& prefix = "") {
        for (auto& [k, v] : params_)
            if (k.rfind(prefix, 0) == 0) v.zero_grad();
    }

    void set_trainable(const std::string& prefix, bool trainable) {
        for (auto& [k, v] : params_)
            if (k.rfind(prefix, 0) == 0) v.node()->requires_grad = trainable;
    }

    bool trainable(const std::string& name) const { return get(name).requires_grad(); }

    // FNV-1a over the raw little-endian bytes of every parameter under
    // prefix, in sorted name order. Used to prove tensors did not move.
    uint64_t digest(const std::string& prefix = "") const {
        uint64_t h = 1469598103934665603ull;
        auto mix = [&h](const void* p, size_t n) {
            const unsigned char* b = static_cast<const unsigned char*>(p);
            for (size_t i = 0; i < n; ++i) {
                h ^= b[i];
                h *= 1099511628211ull;
            }
        };
        for (const auto& [k, v] : params_) {
            if (k.rfind(prefix, 0) != 0) continue;
            mix(k.data(), k.size());
            mix(v.value().data(), sizeof(T) * static_cast<size_t>(v.numel()));
        }
        return h;
    }

    size_t size() const { return params_.size(); }
    const std::map<std::string, Var<T>>& all() const { return params_; }

private:
    std::map<std::string, Var<T>> params_;
};

// ------------------------------------------------------------------- inits

template <typename T>
auto init_zeros() {
    return [](Tensor<T>& t) { std::fill(t.vec().begin(), t.vec().end(), T(0)); };
}

template <typename T>
auto init_const(T v) {
    return [v](Tensor<T>& t) { std::fill(t.vec().begin(), t.vec().end(), v); };
}

// scaled normal, std = gain / sqrt(fan_in)
template <typename T>
auto init_scaled_normal(RngStream& rng, double fan_in, double gain = 1.0) {
    double std = gain / std::sqrt(std::max(fan_in, 1.0));
    return [&rng, std](Tensor<T>& t) { rng.fill_normal(t, std); };
}

// ------------------------------------------------------------------ modules

template <typename T>
struct Conv2d {
    Var<T> w, b;
    int64_t stride = 1, pad = 0;

    Conv2d() = default;
    Conv2d(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout, int64_t k,
           int64_t stride_, int64_t pad_, RngStream& rng, bool zero_init = false) {
        stride = stride_;
        pad = pad_;
        double fan_in = static_cast<double>(cin * k * k);
        if (zero_init) {
            w = ps.create(name + ".w", Shape{cout, cin, k, k}, init_zeros<T>());
        } else {
            w = ps.create(name + ".w", Shape{cout, cin, k, k}, init_scaled_normal<T>(rng, fan_in, std::sqrt(2.0)));
        }
        b = ps.create(name + ".b", Shape{cout}, init_zeros<T>());
    }

    Var<T> operator()(const Var<T>& x) const { return ag::conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct Linear {
    Var<T> w, b;

    Linear() = default;
    Linear(ParamStore<T>& ps, const std::string& name, int64_t din, int64_t dout, RngStream& rng,
           bool zero_init = false) {
        if (zero_init) {
            w = ps.create(name + ".w", Shape{dout, din}, init_zeros<T>());
        } else {
            w = ps.create(name + ".w", Shape{dout, din},
                          init_scaled_normal<T>(rng, static_cast<double>(din), 1.0));
        }
        b = ps.create(name + ".b", Shape{dout}, init_zeros<T>());
    }

    // x: [m, din] -> [m, dout]
    Var<T> operator()(const Var<T>& x) const { return ag::linear(x, w, b); }

    // tokens: [B, N, din] -> [B, N, dout]
    Var<T> tokens(const Var<T>& x) const {
        int64_t B = x.shape()[0], N = x.shape()[1], din = x.shape()[2];
        auto flat = ag::reshape(x, Shape{B * N, din});
        auto out = ag::linear(flat, w, b);
        return ag::reshape(out, Shape{B, N, out.shape()[1]});
    }
};

template <typename T>
struct GroupNorm {
    Var<T> gamma, beta;
    int64_t groups = 1;
    double eps = 1e-5;

    GroupNorm() = default;
    GroupNorm(ParamStore<T>& ps, const std::string& name, int64_t channels, int64_t groups_) {
        groups = groups_;
        gamma = ps.create(name + ".g", Shape{channels}, init_const<T>(T(1)));
        beta = ps.create(name + ".b", Shape{channels}, init_zeros<T>());
    }

    Var<T> operator()(const Var<T>& x) const { return ag::group_norm(x, gamma, beta, groups, eps); }
};

template <typename T>
struct Embedding {
    Var<T> table;

    Embedding() = default;
    Embedding(ParamStore<T>& ps, const std::string& name, int64_t vocab, int64_t dim, RngStream& rng) {
        table = ps.create(name + ".w", Shape{vocab, dim}, init_scaled_normal<T>(rng, static_cast<double>(dim)));
    }

    Var<T> operator()(const std::vector<int32_t>& ids) const { return ag::embedding(table, ids); }
};

// -------------------------------------------------------------------- adam

template <typename T>
class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // One update over the given parameter subset. Parameters without an
    // accumulated gradient this step are skipped (their moments still decay
    // on the steps where they do appear, which is the conventional lazy
    // behaviour for per-step graphs).
    void step(ParamStore<T>& ps, const std::vector<std::string>& names) {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (const auto& name : names) {
            Var<T> p = ps.get(name);
            if (p.grad().numel() == 0) continue;
            auto& m = slot(moments1_, name, p.shape());
            auto& v = slot(moments2_, name, p.shape());
            T* pv = p.value().data();
            const T* g = p.grad().data();
            for (int64_t i = 0; i < p.numel(); ++i) {
                double gi = g[i];
                double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * gi;
                double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * gi * gi;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                pv[i] -= static_cast<T>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
            }
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }

    // moment tensors exposed for checkpointing (exact resume)
    std::map<std::string, Tensor<T>>& moments1() { return moments1_; }
    std::map<std::string, Tensor<T>>& moments2() { return moments2_; }

private:
    Tensor<T>& slot(std::map<std::string, Tensor<T>>& m, const std::string& name, const Shape& shape) {
        auto it = m.find(name);
        if (it == m.end()) it = m.emplace(name, Tensor<T>(shape)).first;
        check_arg(it->second.shape() == shape, "optimizer moment shape mismatch for " + name);
        return it->second;
    }

    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::map<std::string, Tensor<T>> moments1_, moments2_;
};

}  // namespace fasdiff::nn
