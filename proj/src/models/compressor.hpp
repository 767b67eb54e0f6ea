#pragma once

#include <string>

#include "codec/entropy.hpp"
#include "core/nn.hpp"
#include "models/autoencoder.hpp"

// Learned latent compressor. The analysis transform folds the half- and
// quarter-resolution encoder features into the latent and emits an
// 8-channel code at latent resolution; the synthesis transform maps the
// quantized code back to a latent estimate. A per-channel logistic model
// prices the code for both training and the real range coder.
namespace fasdiff::models {

struct CompressorConfig {
    int64_t e1_channels = 32;   // matches AutoencoderConfig::w1
    int64_t e2_channels = 64;   // matches AutoencoderConfig::w2
    int64_t latent_channels = 4;
    int64_t code_channels = 8;
    int64_t width = 64;
};

template <typename T>
class Compressor {
public:
    Compressor() = default;

    Compressor(nn::ParamStore<T>& ps, const std::string& prefix, const CompressorConfig& cfg,
               RngStream& rng)
        : cfg_(cfg) {
        auto p = [&prefix](const std::string& s) { return prefix + s; };
        int64_t w = cfg.width;
        a1_ = nn::Conv2d<T>(ps, p("a1"), cfg.e1_channels, w / 2, 3, 2, 1, rng);
        a1n_ = nn::GroupNorm<T>(ps, p("a1n"), w / 2, norm_groups(w / 2));
        a2_ = nn::Conv2d<T>(ps, p("a2"), w / 2 + cfg.e2_channels, w, 3, 2, 1, rng);
        a2n_ = nn::GroupNorm<T>(ps, p("a2n"), w, norm_groups(w));
        a3_ = nn::Conv2d<T>(ps, p("a3"), w + cfg.latent_channels, w, 3, 1, 1, rng);
        a3n_ = nn::GroupNorm<T>(ps, p("a3n"), w, norm_groups(w));
        a_head_ = nn::Conv2d<T>(ps, p("a_head"), w, cfg.code_channels, 1, 1, 0, rng);

        s1_ = nn::Conv2d<T>(ps, p("s1"), cfg.code_channels, w, 3, 1, 1, rng);
        s1n_ = nn::GroupNorm<T>(ps, p("s1n"), w, norm_groups(w));
        s2_ = nn::Conv2d<T>(ps, p("s2"), w, w, 3, 1, 1, rng);
        s2n_ = nn::GroupNorm<T>(ps, p("s2n"), w, norm_groups(w));
        s_head_ = nn::Conv2d<T>(ps, p("s_head"), w, cfg.latent_channels, 3, 1, 1, rng);

        em_mu_ = ps.create(p("em.mu"), Shape{cfg.code_channels}, nn::init_zeros<T>());
        em_log_s_ = ps.create(p("em.log_s"), Shape{cfg.code_channels}, nn::init_zeros<T>());
    }

    // (latent, half-res feature, quarter-res feature) -> continuous code
    Var<T> analyze(const Var<T>& z, const Var<T>& e1, const Var<T>& e2) const {
        check_arg(z.shape()[1] == cfg_.latent_channels, "analyze: wrong latent channels");
        check_arg(e1.shape()[1] == cfg_.e1_channels && e1.shape()[2] == z.shape()[2] * 4,
                  "analyze: e1 must be the half-resolution feature");
        check_arg(e2.shape()[1] == cfg_.e2_channels && e2.shape()[2] == z.shape()[2] * 2,
                  "analyze: e2 must be the quarter-resolution feature");
        auto h = ag::silu(a1n_(a1_(e1)));
        h = ag::silu(a2n_(a2_(ag::concat_channels(h, e2))));
        h = ag::silu(a3n_(a3_(ag::concat_channels(h, z))));
        return a_head_(h);
    }

    Var<T> synthesize(const Var<T>& code) const {
        check_arg(code.shape()[1] == cfg_.code_channels, "synthesize: wrong code channels");
        auto h = ag::silu(s1n_(s1_(code)));
        h = ag::silu(s2n_(s2_(h)));
        return s_head_(h);
    }

    // hard rounding with a straight-through gradient
    Var<T> quantize_ste(const Var<T>& code) const { return ag::round_ste(code); }

    // additive uniform noise, the standard training relaxation of rounding
    Var<T> quantize_noise(const Var<T>& code, RngStream& rng) const {
        Tensor<T> noise(code.shape());
        rng.fill_uniform(noise, -0.5, 0.5);
        return ag::add_const(code, noise);
    }

    // differentiable rate of a (relaxed) code batch, in total bits
    Var<T> rate_bits(const Var<T>& code) const { return codec::rate_bits(code, em_mu_, em_log_s_); }

    // frequency tables for the range coder, frozen from the current model
    std::vector<std::vector<uint16_t>> freq_tables() const {
        std::vector<double> mu(static_cast<size_t>(cfg_.code_channels));
        std::vector<double> sc(static_cast<size_t>(cfg_.code_channels));
        for (int64_t c = 0; c < cfg_.code_channels; ++c) {
            mu[static_cast<size_t>(c)] = static_cast<double>(em_mu_.value()[c]);
            sc[static_cast<size_t>(c)] = std::exp(static_cast<double>(em_log_s_.value()[c]));
        }
        return codec::build_freq_tables(mu, sc);
    }

    const CompressorConfig& config() const { return cfg_; }

private:
    CompressorConfig cfg_;
    nn::Conv2d<T> a1_, a2_, a3_, a_head_;
    nn::GroupNorm<T> a1n_, a2n_, a3n_;
    nn::Conv2d<T> s1_, s2_, s_head_;
    nn::GroupNorm<T> s1n_, s2n_;
    Var<T> em_mu_, em_log_s_;
};

}  // namespace fasdiff::models
