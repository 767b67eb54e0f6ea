#pragma once

#include <string>

#include "core/nn.hpp"
#include "media/dataset.hpp"

// Attribute classifier over portraits. Five independent binary heads
// (male, smiling, glasses, beard, dark hair); the penultimate activation
// doubles as the facial feature embedding consumed by the face projector.
namespace fasdiff::models {

using ag::Var;

constexpr int64_t kAttributeCount = 5;

inline std::vector<float> attribute_targets(const media::FaceAttributes& a) {
    return {a.male ? 1.0f : 0.0f, a.smiling ? 1.0f : 0.0f, a.glasses ? 1.0f : 0.0f,
            a.beard ? 1.0f : 0.0f, a.dark_hair ? 1.0f : 0.0f};
}

struct ClassifierConfig {
    int64_t w1 = 16;
    int64_t w2 = 32;
    int64_t w3 = 64;
    int64_t feature_dim = 64;
};

template <typename T>
class Classifier {
public:
    Classifier() = default;

    Classifier(nn::ParamStore<T>& ps, const std::string& prefix, const ClassifierConfig& cfg,
               RngStream& rng)
        : cfg_(cfg) {
        auto p = [&prefix](const std::string& s) { return prefix + s; };
        c1_ = nn::Conv2d<T>(ps, p("c1"), 3, cfg.w1, 3, 2, 1, rng);
        n1_ = nn::GroupNorm<T>(ps, p("n1"), cfg.w1, norm_groups(cfg.w1));
        c2_ = nn::Conv2d<T>(ps, p("c2"), cfg.w1, cfg.w2, 3, 2, 1, rng);
        n2_ = nn::GroupNorm<T>(ps, p("n2"), cfg.w2, norm_groups(cfg.w2));
        c3_ = nn::Conv2d<T>(ps, p("c3"), cfg.w2, cfg.w3, 3, 2, 1, rng);
        n3_ = nn::GroupNorm<T>(ps, p("n3"), cfg.w3, norm_groups(cfg.w3));
        fc1_ = nn::Linear<T>(ps, p("fc1"), cfg.w3, cfg.feature_dim, rng);
        fc2_ = nn::Linear<T>(ps, p("fc2"), cfg.feature_dim, kAttributeCount, rng);
    }

    // penultimate embedding, [N, feature_dim]
    Var<T> features(const Var<T>& x) const {
        auto h = ag::silu(n1_(c1_(x)));
        h = ag::silu(n2_(c2_(h)));
        h = ag::silu(n3_(c3_(h)));
        return ag::silu(fc1_(ag::global_avg_pool(h)));
    }

    // [N, 5] raw logits
    Var<T> logits(const Var<T>& x) const { return fc2_(features(x)); }

    int64_t feature_dim() const { return cfg_.feature_dim; }

private:
    ClassifierConfig cfg_;
    nn::Conv2d<T> c1_, c2_, c3_;
    nn::GroupNorm<T> n1_, n2_, n3_;
    nn::Linear<T> fc1_, fc2_;
};

// numerically stable binary cross entropy with logits:
// softplus(z) - z*y, averaged over all entries
template <typename T>
ag::Var<T> bce_with_logits(const ag::Var<T>& logits, const Tensor<T>& targets) {
    check_arg(logits.shape() == targets.shape(), "bce: shape mismatch");
    auto zy = ag::mul_const(logits, targets);
    return ag::mean_all(ag::sub(ag::softplus(logits), zy));
}

// fraction of correct hard decisions for one attribute column
template <typename T>
double attribute_accuracy(const Tensor<T>& logits, const Tensor<T>& targets, int64_t column) {
    check_arg(logits.shape() == targets.shape() && logits.shape().size() == 2, "accuracy: bad shapes");
    check_arg(column >= 0 && column < logits.shape()[1], "accuracy: bad column");
    int64_t n = logits.shape()[0];
    int64_t hit = 0;
    for (int64_t i = 0; i < n; ++i) {
        bool pred = logits.at2(i, column) > T(0);
        bool truth = targets.at2(i, column) > T(0.5);
        if (pred == truth) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(n);
}

}  // namespace fasdiff::models
