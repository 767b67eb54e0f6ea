#pragma once

#include <memory>
#include <string>

#include "core/nn.hpp"

// Fixed random convolutional feature extractors. Random projections
// preserve enough structure to compare images in feature space, which
// gives us a deterministic, dependency-free stand-in for pretrained
// perceptual networks. Weights come from a pinned seed, live in a private
// store and are never trained or checkpointed.
namespace fasdiff::models {

using ag::Var;

// seeds are fixed constants so every process derives identical nets
constexpr uint64_t kLowLevelFeatureSeed = 0x46534446u;    // consistency loss net
constexpr uint64_t kPerceptualFeatureSeed = 0x50455243u;  // reconstruction proxy net

template <typename T>
class FrozenFeatureNet {
public:
    explicit FrozenFeatureNet(uint64_t seed) {
        RngStream rng(derive_seed(seed, "frozen-feature-net"));
        int64_t widths[4] = {16, 32, 64, 128};
        int64_t cin = 3;
        for (int i = 0; i < 4; ++i) {
            convs_[i] = nn::Conv2d<T>(store_, "f" + std::to_string(i), cin, widths[i], 3, 2, 1, rng);
            cin = widths[i];
        }
        store_.set_trainable("", false);
    }

    // all four stage activations, coarsest last
    std::vector<Var<T>> stages(const Var<T>& x) const {
        check_arg(x.shape().size() == 4 && x.shape()[1] == 3, "feature net expects [N,3,H,W]");
        std::vector<Var<T>> out;
        Var<T> h = x;
        for (int i = 0; i < 4; ++i) {
            h = ag::silu(convs_[i](h));
            out.push_back(h);
        }
        return out;
    }

    // pooled embedding of the deepest stage, [N, 128]
    Var<T> embed(const Var<T>& x) const { return ag::global_avg_pool(stages(x).back()); }

    uint64_t digest() const { return store_.digest(); }

private:
    nn::ParamStore<T> store_;
    nn::Conv2d<T> convs_[4];
};

// Multi-stage feature distance: per-stage mean squared difference, summed.
// Zero iff the inputs are identical almost everywhere.
template <typename T>
Var<T> perceptual_distance(const FrozenFeatureNet<T>& net, const Var<T>& a, const Var<T>& b) {
    auto fa = net.stages(a);
    auto fb = net.stages(b);
    Var<T> total;
    for (size_t i = 0; i < fa.size(); ++i) {
        auto d = ag::mean_all(ag::square(ag::sub(fa[i], fb[i])));
        total = total.defined() ? ag::add(total, d) : d;
    }
    return total;
}

// Batch-averaged embedding distance used by the consistency loss.
template <typename T>
Var<T> embedding_distance(const FrozenFeatureNet<T>& net, const Var<T>& decoded, const Var<T>& target) {
    auto diff = ag::sub(net.embed(decoded), net.embed(target));
    double inv_n = 1.0 / static_cast<double>(decoded.shape()[0]);
    return ag::scale(ag::l2_norm(diff), inv_n);
}

}  // namespace fasdiff::models
