#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "core/rng.hpp"
#include "models/diffusion.hpp"

using fasdiff::RngStream;
using fasdiff::Shape;
using fasdiff::Tensor;
namespace ag = fasdiff::ag;
namespace diffusion = fasdiff::diffusion;

TEST_CASE("schedule cumulative products match an independent recomputation") {
    const int64_t T = 1000;
    diffusion::NoiseSchedule ns(T);
    CHECK(ns.alpha_bar(0) == 1.0);
    CHECK(ns.alpha_bar(1) == doctest::Approx(1.0 - 1e-4).epsilon(1e-12));

    // recompute with straight double products as the oracle
    std::vector<double> oracle(static_cast<size_t>(T) + 1, 1.0);
    for (int64_t t = 1; t <= T; ++t) {
        double beta = 1e-4 + (0.02 - 1e-4) * static_cast<double>(t - 1) / static_cast<double>(T - 1);
        oracle[static_cast<size_t>(t)] = oracle[static_cast<size_t>(t - 1)] * (1.0 - beta);
    }
    for (int64_t t : {1l, 2l, 10l, 137l, 500l, 999l, 1000l}) {
        CHECK(ns.alpha_bar(t) ==
              doctest::Approx(oracle[static_cast<size_t>(t)]).epsilon(1e-12));
    }
    // strictly decreasing, and essentially fully noised at the end
    for (int64_t t = 1; t <= T; ++t) CHECK(ns.alpha_bar(t) < ns.alpha_bar(t - 1));
    CHECK(ns.alpha_bar(T) < 5e-5);

    // beta recovers the per-step ratio
    CHECK(ns.beta(1) == doctest::Approx(1e-4).epsilon(1e-9));
    CHECK(ns.beta(T) == doctest::Approx(0.02).epsilon(1e-9));
}

TEST_CASE("sampling grid is uniform, inclusive and strictly decreasing") {
    diffusion::NoiseSchedule ns(1000);
    auto g = ns.sample_grid(3);
    REQUIRE(g.size() == 4);
    CHECK(g[0] == 1000);
    CHECK(g[1] == 667);
    CHECK(g[2] == 333);
    CHECK(g[3] == 0);

    auto g20 = ns.sample_grid(20);
    REQUIRE(g20.size() == 21);
    CHECK(g20.front() == 1000);
    CHECK(g20.back() == 0);
    for (size_t i = 1; i < g20.size(); ++i) CHECK(g20[i] < g20[i - 1]);

    CHECK_THROWS_AS(ns.sample_grid(0), fasdiff::Error);
    CHECK_THROWS_AS(ns.sample_grid(1001), fasdiff::Error);
}

TEST_CASE("forward noising endpoints and inversion") {
    diffusion::NoiseSchedule ns(1000);
    RngStream rng(21);
    Tensor<double> z0t(Shape{2, 4, 8, 8});
    Tensor<double> epst(Shape{2, 4, 8, 8});
    rng.fill_normal(z0t);
    rng.fill_normal(epst);
    auto z0 = ag::constant(z0t);
    auto eps = ag::constant(epst);

    // t = 0 is the identity, bit for bit
    auto z_at_0 = diffusion::forward_noise(ns, z0, eps, 0);
    for (int64_t i = 0; i < z0t.numel(); ++i) CHECK(z_at_0.value()[i] == z0t[i]);

    // recovering the clean latent from (z_t, eps) inverts the noising
    for (int64_t t : {1l, 250l, 999l}) {
        auto zt = diffusion::forward_noise(ns, z0, eps, t);
        auto back = diffusion::x0_from_eps(ns, zt, eps, t);
        for (int64_t i = 0; i < z0t.numel(); ++i)
            CHECK(back.value()[i] == doctest::Approx(z0t[i]).epsilon(1e-9));
    }
}

TEST_CASE("forward noising preserves unit variance") {
    diffusion::NoiseSchedule ns(1000);
    RngStream rng(22);
    Tensor<double> z0t(Shape{1, 1, 128, 128});
    Tensor<double> epst(Shape{1, 1, 128, 128});
    rng.fill_normal(z0t);
    rng.fill_normal(epst);
    auto zt = diffusion::forward_noise(ns, ag::constant(z0t), ag::constant(epst), 500);
    double sum = 0.0, sq = 0.0;
    for (int64_t i = 0; i < zt.numel(); ++i) {
        sum += zt.value()[i];
        sq += zt.value()[i] * zt.value()[i];
    }
    double mean = sum / static_cast<double>(zt.numel());
    double var = sq / static_cast<double>(zt.numel()) - mean * mean;
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("time-aware mix endpoints are exact and midpoint matches the closed form") {
    RngStream rng(23);
    Tensor<double> zt(Shape{3, 7});
    Tensor<double> yt(Shape{3, 7});
    rng.fill_normal(zt);
    rng.fill_normal(yt);
    auto z = ag::constant(zt);
    auto y = ag::constant(yt);

    auto at0 = diffusion::time_aware_mix(z, y, 0, 1000);
    auto atT = diffusion::time_aware_mix(z, y, 1000, 1000);
    for (int64_t i = 0; i < zt.numel(); ++i) {
        CHECK(at0.value()[i] == zt[i]);
        CHECK(atT.value()[i] == yt[i]);
    }

    auto mid = diffusion::time_aware_mix(z, y, 500, 1000);
    double w = std::sqrt(0.5);
    for (int64_t i = 0; i < zt.numel(); ++i)
        CHECK(mid.value()[i] == doctest::Approx(w * zt[i] + (1.0 - w) * yt[i]).epsilon(1e-12));

    CHECK_THROWS_AS(diffusion::time_aware_mix(z, y, 1001, 1000), fasdiff::Error);
}

TEST_CASE("sampler with an oracle denoiser recovers the clean latent") {
    diffusion::NoiseSchedule ns(1000);
    RngStream rng(24);
    Tensor<double> z0t(Shape{1, 4, 8, 8});
    Tensor<double> noise(Shape{1, 4, 8, 8});
    rng.fill_normal(z0t);
    rng.fill_normal(noise);
    auto z0 = ag::constant(z0t);

    // the oracle returns exactly the eps that maps z_t back to z0
    diffusion::Denoiser<double> oracle = [&](const ag::Var<double>& z, int64_t t) {
        double ab = ns.alpha_bar(t);
        return ag::axpby(1.0 / std::sqrt(1.0 - ab), z, -std::sqrt(ab) / std::sqrt(1.0 - ab), z0);
    };

    for (int64_t steps : {1l, 3l, 20l}) {
        auto out = diffusion::ddim_sample(ns, oracle, ag::constant(noise), steps);
        for (int64_t i = 0; i < z0t.numel(); ++i)
            CHECK(out.value()[i] == doctest::Approx(z0t[i]).epsilon(1e-6));
    }
}

TEST_CASE("sampler is deterministic") {
    diffusion::NoiseSchedule ns(100);
    RngStream rng(25);
    Tensor<double> start(Shape{1, 2, 4, 4});
    rng.fill_normal(start);
    diffusion::Denoiser<double> f = [&](const ag::Var<double>& z, int64_t t) {
        return ag::scale(ag::tanh_op(z), 0.5 + static_cast<double>(t) / 200.0);
    };
    auto a = diffusion::ddim_sample(ns, f, ag::constant(start), 5);
    auto b = diffusion::ddim_sample(ns, f, ag::constant(start), 5);
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.value()[i] == b.value()[i]);
}

TEST_CASE("gradients flow through the whole sampling chain") {
    // denoiser eps = theta * z; compare the analytic gradient of the
    // sampled output w.r.t. theta against central differences
    diffusion::NoiseSchedule ns(50);
    RngStream rng(26);
    Tensor<double> start(Shape{1, 1, 3, 3});
    rng.fill_normal(start);

    auto run = [&](double theta_val, bool with_grad) {
        Tensor<double> th(Shape{1});
        th[0] = theta_val;
        auto theta = with_grad ? ag::param(th) : ag::constant(th);
        diffusion::Denoiser<double> f = [&theta](const ag::Var<double>& z, int64_t) {
            return ag::mul_scalar(z, theta);
        };
        auto out = diffusion::ddim_sample(ns, f, ag::constant(start), 3);
        auto loss = ag::sum_all(ag::square(out));
        return std::make_pair(loss, theta);
    };

    auto [loss, theta] = run(0.3, true);
    ag::backward(loss);
    double analytic = theta.grad()[0];

    double h = 1e-6;
    double fp = run(0.3 + h, false).first.value()[0];
    double fm = run(0.3 - h, false).first.value()[0];
    double numeric = (fp - fm) / (2.0 * h);
    CHECK(std::abs(analytic - numeric) / std::max({1e-6, std::abs(analytic), std::abs(numeric)}) < 1e-4);
}
