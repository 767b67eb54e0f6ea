#pragma once

#include <string>

#include "core/nn.hpp"

// Convolutional autoencoder that maps 64x64 rgb to a 4-channel 8x8 latent
// and back. The two intermediate encoder activations (half and quarter
// resolution) are exported; the latent compressor conditions on them.
namespace fasdiff::models {

using ag::Var;

inline int64_t norm_groups(int64_t channels) {
    for (int64_t g : {8, 4, 2}) {
        if (channels % g == 0) return g;
    }
    return 1;
}

struct AutoencoderConfig {
    int64_t w1 = 32;
    int64_t w2 = 64;
    int64_t w3 = 128;
    int64_t latent_channels = 4;
};

template <typename T>
struct EncodedLatent {
    Var<T> z;   // [N, latent, H/8, W/8]
    Var<T> e1;  // [N, w1, H/2, W/2]
    Var<T> e2;  // [N, w2, H/4, W/4]
};

template <typename T>
class Autoencoder {
public:
    Autoencoder() = default;

    Autoencoder(nn::ParamStore<T>& ps, const std::string& prefix, const AutoencoderConfig& cfg,
                RngStream& rng)
        : cfg_(cfg) {
        auto p = [&prefix](const std::string& s) { return prefix + s; };
        enc1_ = nn::Conv2d<T>(ps, p("enc1"), 3, cfg.w1, 3, 2, 1, rng);
        enc1_norm_ = nn::GroupNorm<T>(ps, p("enc1n"), cfg.w1, norm_groups(cfg.w1));
        enc2_ = nn::Conv2d<T>(ps, p("enc2"), cfg.w1, cfg.w2, 3, 2, 1, rng);
        enc2_norm_ = nn::GroupNorm<T>(ps, p("enc2n"), cfg.w2, norm_groups(cfg.w2));
        enc3_ = nn::Conv2d<T>(ps, p("enc3"), cfg.w2, cfg.w3, 3, 2, 1, rng);
        enc3_norm_ = nn::GroupNorm<T>(ps, p("enc3n"), cfg.w3, norm_groups(cfg.w3));
        enc_head_ = nn::Conv2d<T>(ps, p("enc_head"), cfg.w3, cfg.latent_channels, 3, 1, 1, rng);

        dec_in_ = nn::Conv2d<T>(ps, p("dec_in"), cfg.latent_channels, cfg.w3, 3, 1, 1, rng);
        dec_in_norm_ = nn::GroupNorm<T>(ps, p("dec_inn"), cfg.w3, norm_groups(cfg.w3));
        dec1_ = nn::Conv2d<T>(ps, p("dec1"), cfg.w3, cfg.w2, 3, 1, 1, rng);
        dec1_norm_ = nn::GroupNorm<T>(ps, p("dec1n"), cfg.w2, norm_groups(cfg.w2));
        dec2_ = nn::Conv2d<T>(ps, p("dec2"), cfg.w2, cfg.w1, 3, 1, 1, rng);
        dec2_norm_ = nn::GroupNorm<T>(ps, p("dec2n"), cfg.w1, norm_groups(cfg.w1));
        dec3_ = nn::Conv2d<T>(ps, p("dec3"), cfg.w1, cfg.w1, 3, 1, 1, rng);
        dec3_norm_ = nn::GroupNorm<T>(ps, p("dec3n"), cfg.w1, norm_groups(cfg.w1));
        dec_head_ = nn::Conv2d<T>(ps, p("dec_head"), cfg.w1, 3, 3, 1, 1, rng);
    }

    EncodedLatent<T> encode(const Var<T>& x) const {
        check_arg(x.shape().size() == 4 && x.shape()[1] == 3, "encode: expected [N,3,H,W]");
        check_arg(x.shape()[2] % 8 == 0 && x.shape()[3] % 8 == 0, "encode: H and W must be multiples of 8");
        auto e1 = ag::silu(enc1_norm_(enc1_(x)));
        auto e2 = ag::silu(enc2_norm_(enc2_(e1)));
        auto h = ag::silu(enc3_norm_(enc3_(e2)));
        return {enc_head_(h), e1, e2};
    }

    // decoded output is sigmoid-bounded to valid pixel range
    Var<T> decode(const Var<T>& z) const {
        check_arg(z.shape().size() == 4 && z.shape()[1] == cfg_.latent_channels,
                  "decode: wrong latent shape");
        auto h = ag::silu(dec_in_norm_(dec_in_(z)));
        h = ag::silu(dec1_norm_(dec1_(ag::upsample_nearest2(h))));
        h = ag::silu(dec2_norm_(dec2_(ag::upsample_nearest2(h))));
        h = ag::silu(dec3_norm_(dec3_(ag::upsample_nearest2(h))));
        return ag::sigmoid(dec_head_(h));
    }

    const AutoencoderConfig& config() const { return cfg_; }

private:
    AutoencoderConfig cfg_;
    nn::Conv2d<T> enc1_, enc2_, enc3_, enc_head_;
    nn::GroupNorm<T> enc1_norm_, enc2_norm_, enc3_norm_;
    nn::Conv2d<T> dec_in_, dec1_, dec2_, dec3_, dec_head_;
    nn::GroupNorm<T> dec_in_norm_, dec1_norm_, dec2_norm_, dec3_norm_;
};

}  // namespace fasdiff::models
