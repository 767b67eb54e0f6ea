#pragma once

#include <string>

#include "core/autograd.hpp"

// Facial-consistency weighting for the latent distortion term. Channels
// with low spatial variance in the source latent are weighted up so the
// compressor cannot neglect the flat, identity-bearing components.
namespace fasdiff::models {

// Per-(sample, channel) inverse-variance weights, normalized to mean one
// over channels within each sample, broadcast to the full latent shape.
// Computed from values only; no gradient flows through the weights.
template <typename T>
Tensor<T> variance_weight_map(const Tensor<T>& y, double eps = 1e-6) {
    check_arg(y.shape().size() == 4, "variance_weight_map: expected 4-d latent");
    int64_t N = y.shape()[0], C = y.shape()[1], hw = y.shape()[2] * y.shape()[3];
    check_arg(hw > 0, "variance_weight_map: empty spatial extent");
    Tensor<T> out(y.shape());
    std::vector<double> w(static_cast<size_t>(C));
    for (int64_t n = 0; n < N; ++n) {
        double wsum = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            const T* p = y.data() + (n * C + c) * hw;
            double mean = 0.0;
            for (int64_t i = 0; i < hw; ++i) mean += static_cast<double>(p[i]);
            mean /= static_cast<double>(hw);
            double var = 0.0;
            for (int64_t i = 0; i < hw; ++i) {
                double d = static_cast<double>(p[i]) - mean;
                var += d * d;
            }
            var /= static_cast<double>(hw);
            w[static_cast<size_t>(c)] = 1.0 / (var + eps);
            wsum += w[static_cast<size_t>(c)];
        }
        for (int64_t c = 0; c < C; ++c) {
            double norm = w[static_cast<size_t>(c)] * static_cast<double>(C) / wsum;
            T* dst = out.data() + (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = static_cast<T>(norm);
        }
    }
    return out;
}

enum class LatentDistance { l1, l2 };

// mean over elements of W .* |y - z| (or the squared difference)
template <typename T>
ag::Var<T> weighted_latent_distance(const ag::Var<T>& y, const ag::Var<T>& z, const Tensor<T>& weights,
                                    LatentDistance kind = LatentDistance::l2) {
    check_arg(y.shape() == z.shape() && y.shape() == weights.shape(),
              "weighted_latent_distance: shape mismatch");
    auto diff = ag::sub(y, z);
    auto dist = (kind == LatentDistance::l2) ? ag::square(diff) : ag::abs_op(diff);
    return ag::mean_all(ag::mul_const(dist, weights));
}

}  // namespace fasdiff::models
