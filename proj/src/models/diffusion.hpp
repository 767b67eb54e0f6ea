#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "core/autograd.hpp"

// Noise schedule plus the deterministic (eta = 0) sampler. Everything is
// expressed through autograd ops so the short sampling chains used during
// fine-tuning stay differentiable end to end.
namespace fasdiff::diffusion {

class NoiseSchedule {
public:
    explicit NoiseSchedule(int64_t steps, double beta_start = 1e-4, double beta_end = 0.02)
        : steps_(steps) {
        check_arg(steps >= 1, "schedule needs at least one step");
        check_arg(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end, "bad beta range");
        alpha_bar_.resize(static_cast<size_t>(steps) + 1);
        alpha_bar_[0] = 1.0;
        long double acc = 1.0L;  // cumulative product in extended precision
        for (int64_t t = 1; t <= steps; ++t) {
            double frac = steps > 1 ? static_cast<double>(t - 1) / static_cast<double>(steps - 1) : 0.0;
            double beta = beta_start + (beta_end - beta_start) * frac;
            acc *= static_cast<long double>(1.0 - beta);
            alpha_bar_[static_cast<size_t>(t)] = static_cast<double>(acc);
        }
    }

    int64_t steps() const { return steps_; }

    double beta(int64_t t) const {
        check_arg(t >= 1 && t <= steps_, "beta: t out of range");
        double a = alpha_bar_[static_cast<size_t>(t)] / alpha_bar_[static_cast<size_t>(t - 1)];
        return 1.0 - a;
    }

    double alpha_bar(int64_t t) const {
        check_arg(t >= 0 && t <= steps_, "alpha_bar: t out of range");
        return alpha_bar_[static_cast<size_t>(t)];
    }

    // Uniformly spaced sampling grid from t = steps down to t = 0,
    // inclusive on both ends (count + 1 entries).
    std::vector<int64_t> sample_grid(int64_t count) const {
        check_arg(count >= 1 && count <= steps_, "sample_grid: bad step count");
        std::vector<int64_t> grid(static_cast<size_t>(count) + 1);
        for (int64_t i = 0; i <= count; ++i)
            grid[static_cast<size_t>(i)] =
                std::llround(static_cast<double>(steps_) * static_cast<double>(count - i) /
                             static_cast<double>(count));
        return grid;
    }

private:
    int64_t steps_;
    std::vector<double> alpha_bar_;
};

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
template <typename T>
ag::Var<T> forward_noise(const NoiseSchedule& ns, const ag::Var<T>& z0, const ag::Var<T>& eps, int64_t t) {
    if (t == 0) return z0;
    double ab = ns.alpha_bar(t);
    return ag::axpby(std::sqrt(ab), z0, std::sqrt(1.0 - ab), eps);
}

// x0 = (z_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)
template <typename T>
ag::Var<T> x0_from_eps(const NoiseSchedule& ns, const ag::Var<T>& z_t, const ag::Var<T>& eps, int64_t t) {
    if (t == 0) return z_t;
    double ab = ns.alpha_bar(t);
    double s = std::sqrt(ab);
    return ag::axpby(1.0 / s, z_t, -std::sqrt(1.0 - ab) / s, eps);
}

// Time-aware blend of the clean latent toward its degraded counterpart:
// sqrt(1 - t/T) z + (1 - sqrt(1 - t/T)) y. The endpoints are returned
// verbatim so t = 0 and t = T are exact by construction.
template <typename T>
ag::Var<T> time_aware_mix(const ag::Var<T>& z, const ag::Var<T>& y, int64_t t, int64_t total) {
    check_arg(t >= 0 && t <= total, "time_aware_mix: t out of range");
    if (t == 0) return z;
    if (t == total) return y;
    double w = std::sqrt(1.0 - static_cast<double>(t) / static_cast<double>(total));
    return ag::axpby(w, z, 1.0 - w, y);
}

template <typename T>
using Denoiser = std::function<ag::Var<T>(const ag::Var<T>&, int64_t)>;

// Deterministic sampler: at each grid step predict eps, form the clean
// estimate, and re-noise it to the next grid time. The final step (t = 0)
// returns the clean estimate itself. Differentiable end to end.
template <typename T>
ag::Var<T> ddim_sample(const NoiseSchedule& ns, const Denoiser<T>& eps_fn, const ag::Var<T>& z_start,
                       int64_t count) {
    auto grid = ns.sample_grid(count);
    ag::Var<T> z = z_start;
    for (size_t i = 0; i + 1 < grid.size(); ++i) {
        int64_t t = grid[i];
        int64_t t_next = grid[i + 1];
        auto eps = eps_fn(z, t);
        check_arg(eps.shape() == z.shape(), "denoiser changed tensor shape");
        auto x0 = x0_from_eps(ns, z, eps, t);
        if (t_next == 0) {
            z = x0;
        } else {
            double ab = ns.alpha_bar(t_next);
            z = ag::axpby(std::sqrt(ab), x0, std::sqrt(1.0 - ab), eps);
        }
    }
    return z;
}

}  // namespace fasdiff::diffusion
