#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "core/nn.hpp"
#include "core/spectral.hpp"
#include "models/autoencoder.hpp"

// Latent-space denoiser. A three-level UNet over the 8x8 latent with:
//  - sinusoidal timestep conditioning through every residual block,
//  - decoupled cross-attention on the two decoder levels that still have
//    enough spatial extent to attend from (8x8 and 4x4), with separate
//    key/value projections for text and face tokens,
//  - frequency-selective attenuation of skip connections,
//  - additive features from a control branch that re-runs the encoder on
//    a conditioning latent and projects through zero-initialized 1x1s.
namespace fasdiff::models {

using ag::Var;

struct SpectralSkipConfig {
    bool enabled = true;
    double gain = 0.6;              // scale applied to the low-frequency band
    double radius = 0.5;            // band edge as a fraction of nyquist
    std::vector<int> levels{1, 2};  // skip levels to touch; 2 is the deepest
};

struct UNetConfig {
    int64_t latent_channels = 4;
    int64_t w0 = 64;   // channels at latent resolution
    int64_t w1 = 128;  // at half
    int64_t w2 = 256;  // at quarter
    int64_t cond_dim = 64;
    SpectralSkipConfig spectral;

    int64_t temb_dim() const { return 4 * w0; }
};

// [N] timesteps -> [N, dim] sinusoidal features (constant, no gradient)
template <typename T>
Tensor<T> sinusoidal_embedding(const std::vector<int64_t>& ts, int64_t dim) {
    check_arg(dim >= 2 && dim % 2 == 0, "sinusoidal_embedding: dim must be even");
    int64_t half = dim / 2;
    Tensor<T> out(Shape{static_cast<int64_t>(ts.size()), dim});
    for (size_t n = 0; n < ts.size(); ++n)
        for (int64_t i = 0; i < half; ++i) {
            double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                   static_cast<double>(half - 1));
            double ang = static_cast<double>(ts[n]) * freq;
            out.at2(static_cast<int64_t>(n), i) = static_cast<T>(std::sin(ang));
            out.at2(static_cast<int64_t>(n), half + i) = static_cast<T>(std::cos(ang));
        }
    return out;
}

template <typename T>
struct ResBlock {
    nn::GroupNorm<T> gn1, gn2;
    nn::Conv2d<T> conv1, conv2, skip;
    nn::Linear<T> temb_proj;
    bool channel_change = false;

    ResBlock() = default;
    ResBlock(nn::ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout, int64_t temb_dim,
             RngStream& rng) {
        gn1 = nn::GroupNorm<T>(ps, name + ".gn1", cin, norm_groups(cin));
        conv1 = nn::Conv2d<T>(ps, name + ".conv1", cin, cout, 3, 1, 1, rng);
        temb_proj = nn::Linear<T>(ps, name + ".temb", temb_dim, cout, rng);
        gn2 = nn::GroupNorm<T>(ps, name + ".gn2", cout, norm_groups(cout));
        conv2 = nn::Conv2d<T>(ps, name + ".conv2", cout, cout, 3, 1, 1, rng);
        channel_change = cin != cout;
        if (channel_change) skip = nn::Conv2d<T>(ps, name + ".skip", cin, cout, 1, 1, 0, rng);
    }

    Var<T> operator()(const Var<T>& x, const Var<T>& temb) const {
        auto h = conv1(ag::silu(gn1(x)));
        h = ag::add_sample_channel_bias(h, temb_proj(ag::silu(temb)));
        h = conv2(ag::silu(gn2(h)));
        return ag::add(h, channel_change ? skip(x) : x);
    }
};

// softmax(q k^T / sqrt(dk)) v for token batches
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
    double scale = 1.0 / std::sqrt(static_cast<double>(q.shape()[2]));
    auto scores = ag::scale(ag::bmm(q, ag::transpose_last2(k)), scale);
    return ag::bmm(ag::softmax_lastdim(scores), v);
}

// Sum of a text-attention branch and a face-attention branch weighted by
// mu. Returns the raw branch sum (the caller applies its own output
// projection), so identical branches at mu = 1 give exactly twice the
// text-only result.
template <typename T>
Var<T> decoupled_attention(const Var<T>& q, const Var<T>& k_text, const Var<T>& v_text,
                           const std::optional<Var<T>>& k_face, const std::optional<Var<T>>& v_face,
                           double mu) {
    auto text = attention(q, k_text, v_text);
    if (!k_face.has_value() || mu == 0.0) return text;
    auto face = attention(q, *k_face, *v_face);
    return ag::add(text, ag::scale(face, mu));
}

template <typename T>
struct CrossAttnBlock {
    nn::GroupNorm<T> gn;
    nn::Linear<T> q, k_text, v_text, k_face, v_face, out;

    CrossAttnBlock() = default;
    CrossAttnBlock(nn::ParamStore<T>& ps, const std::string& name, int64_t channels, int64_t cond_dim,
                   RngStream& rng) {
        gn = nn::GroupNorm<T>(ps, name + ".gn", channels, norm_groups(channels));
        q = nn::Linear<T>(ps, name + ".q", channels, channels, rng);
        // the face projections start as copies of the text projections so
        // the face branch begins as a pure duplicate and then specializes
        bool fresh = !ps.has(name + ".kf.w");
        k_text = nn::Linear<T>(ps, name + ".kt", cond_dim, channels, rng);
        v_text = nn::Linear<T>(ps, name + ".vt", cond_dim, channels, rng);
        k_face = nn::Linear<T>(ps, name + ".kf", cond_dim, channels, rng);
        v_face = nn::Linear<T>(ps, name + ".vf", cond_dim, channels, rng);
        if (fresh) {
            k_face.w.value() = k_text.w.value();
            k_face.b.value() = k_text.b.value();
            v_face.w.value() = v_text.w.value();
            v_face.b.value() = v_text.b.value();
        }
        out = nn::Linear<T>(ps, name + ".out", channels, channels, rng, /*zero_init=*/true);
    }

    Var<T> operator()(const Var<T>& h, const Var<T>& text_tokens, const std::optional<Var<T>>& face_tokens,
                      double mu) const {
        int64_t H = h.shape()[2], W = h.shape()[3];
        auto tokens = ag::nchw_to_tokens(gn(h));
        auto qv = q.tokens(tokens);
        auto kt = k_text.tokens(text_tokens);
        auto vt = v_text.tokens(text_tokens);
        std::optional<Var<T>> kf, vf;
        if (face_tokens.has_value()) {
            kf = k_face.tokens(*face_tokens);
            vf = v_face.tokens(*face_tokens);
        }
        auto mixed = decoupled_attention(qv, kt, vt, kf, vf, mu);
        return ag::add(h, ag::tokens_to_nchw(out.tokens(mixed), H, W));
    }
};

// Conditioning inputs for one denoiser evaluation. With no text tokens the
// cross-attention blocks are skipped entirely, leaving a purely
// convolutional denoising path.
template <typename T>
struct Conditioning {
    std::optional<Var<T>> text_tokens;  // [N, Nt, cond_dim]
    std::optional<Var<T>> face_tokens;  // [N, Nf, cond_dim]
    double mu = 1.0;                    // weight of the face branch
};

template <typename T>
struct ControlFeatures {
    Var<T> f0, f1, f2;  // aligned with the three skip levels
};

// Trainable copy of the denoiser encoder, fed with a conditioning latent.
// Projections start at zero so enabling the branch is initially a no-op.
template <typename T>
class ControlModule {
public:
    ControlModule() = default;

    ControlModule(nn::ParamStore<T>& ps, const std::string& prefix, const UNetConfig& cfg, RngStream& rng,
                  const std::string& copy_from_prefix) {
        auto p = [&prefix](const std::string& s) { return prefix + s; };
        bool fresh = !ps.has(p("enc.conv_in.w"));
        conv_in_ = nn::Conv2d<T>(ps, p("enc.conv_in"), cfg.latent_channels, cfg.w0, 3, 1, 1, rng);
        rb0a_ = ResBlock<T>(ps, p("enc.rb0a"), cfg.w0, cfg.w0, cfg.temb_dim(), rng);
        rb0b_ = ResBlock<T>(ps, p("enc.rb0b"), cfg.w0, cfg.w0, cfg.temb_dim(), rng);
        down0_ = nn::Conv2d<T>(ps, p("enc.down0"), cfg.w0, cfg.w1, 3, 2, 1, rng);
        rb1a_ = ResBlock<T>(ps, p("enc.rb1a"), cfg.w1, cfg.w1, cfg.temb_dim(), rng);
        rb1b_ = ResBlock<T>(ps, p("enc.rb1b"), cfg.w1, cfg.w1, cfg.temb_dim(), rng);
        down1_ = nn::Conv2d<T>(ps, p("enc.down1"), cfg.w1, cfg.w2, 3, 2, 1, rng);
        rb2a_ = ResBlock<T>(ps, p("enc.rb2a"), cfg.w2, cfg.w2, cfg.temb_dim(), rng);
        rb2b_ = ResBlock<T>(ps, p("enc.rb2b"), cfg.w2, cfg.w2, cfg.temb_dim(), rng);
        zero0_ = nn::Conv2d<T>(ps, p("zero0"), cfg.w0, cfg.w0, 1, 1, 0, rng, /*zero_init=*/true);
        zero1_ = nn::Conv2d<T>(ps, p("zero1"), cfg.w1, cfg.w1, 1, 1, 0, rng, /*zero_init=*/true);
        zero2_ = nn::Conv2d<T>(ps, p("zero2"), cfg.w2, cfg.w2, 1, 1, 0, rng, /*zero_init=*/true);

        if (fresh && !copy_from_prefix.empty()) {
            // start from the denoiser encoder weights
            for (const auto& name : ps.names(copy_from_prefix + "enc.")) {
                std::string suffix = name.substr(copy_from_prefix.size());
                if (ps.has(prefix + suffix)) ps.get(prefix + suffix).value() = ps.get(name).value();
            }
        }
    }

    ControlFeatures<T> forward(const Var<T>& cond_latent, const Var<T>& temb) const {
        auto h = conv_in_(cond_latent);
        h = rb0a_(h, temb);
        h = rb0b_(h, temb);
        auto f0 = zero0_(h);
        h = down0_(h);
        h = rb1a_(h, temb);
        h = rb1b_(h, temb);
        auto f1 = zero1_(h);
        h = down1_(h);
        h = rb2a_(h, temb);
        h = rb2b_(h, temb);
        auto f2 = zero2_(h);
        return {f0, f1, f2};
    }

private:
    nn::Conv2d<T> conv_in_, down0_, down1_, zero0_, zero1_, zero2_;
    ResBlock<T> rb0a_, rb0b_, rb1a_, rb1b_, rb2a_, rb2b_;
};

template <typename T>
class UNet {
public:
    UNet() = default;

    UNet(nn::ParamStore<T>& ps, const std::string& prefix, const UNetConfig& cfg, RngStream& rng)
        : cfg_(cfg) {
        auto p = [&prefix](const std::string& s) { return prefix + s; };
        temb_l1_ = nn::Linear<T>(ps, p("temb.l1"), cfg.w0, cfg.temb_dim(), rng);
        temb_l2_ = nn::Linear<T>(ps, p("temb.l2"), cfg.temb_dim(), cfg.temb_dim(), rng);

        conv_in_ = nn::Conv2d<T>(ps, p("enc.conv_in"), cfg.latent_channels, cfg.w0, 3, 1, 1, rng);
        rb0a_ = ResBlock<T>(ps, p("enc.rb0a"), cfg.w0, cfg.w0, cfg.temb_dim(), rng);
        rb0b_ = ResBlock<T>(ps, p("enc.rb0b"), cfg.w0, cfg.w0, cfg.temb_dim(), rng);
        down0_ = nn::Conv2d<T>(ps, p("enc.down0"), cfg.w0, cfg.w1, 3, 2, 1, rng);
        rb1a_ = ResBlock<T>(ps, p("enc.rb1a"), cfg.w1, cfg.w1, cfg.temb_dim(), rng);
        rb1b_ = ResBlock<T>(ps, p("enc.rb1b"), cfg.w1, cfg.w1, cfg.temb_dim(), rng);
        down1_ = nn::Conv2d<T>(ps, p("enc.down1"), cfg.w1, cfg.w2, 3, 2, 1, rng);
        rb2a_ = ResBlock<T>(ps, p("enc.rb2a"), cfg.w2, cfg.w2, cfg.temb_dim(), rng);
        rb2b_ = ResBlock<T>(ps, p("enc.rb2b"), cfg.w2, cfg.w2, cfg.temb_dim(), rng);

        mid1_ = ResBlock<T>(ps, p("mid.rb1"), cfg.w2, cfg.w2, cfg.temb_dim(), rng);
        mid2_ = ResBlock<T>(ps, p("mid.rb2"), cfg.w2, cfg.w2, cfg.temb_dim(), rng);

        dec2_rb_ = ResBlock<T>(ps, p("dec2.rb"), 2 * cfg.w2, cfg.w2, cfg.temb_dim(), rng);
        up2_ = nn::Conv2d<T>(ps, p("dec2.up"), cfg.w2, cfg.w1, 3, 1, 1, rng);
        dec1_rb_ = ResBlock<T>(ps, p("dec1.rb"), 2 * cfg.w1, cfg.w1, cfg.temb_dim(), rng);
        dec1_attn_ = CrossAttnBlock<T>(ps, p("dec1.xattn"), cfg.w1, cfg.cond_dim, rng);
        up1_ = nn::Conv2d<T>(ps, p("dec1.up"), cfg.w1, cfg.w0, 3, 1, 1, rng);
        dec0_rb_ = ResBlock<T>(ps, p("dec0.rb"), 2 * cfg.w0, cfg.w0, cfg.temb_dim(), rng);
        dec0_attn_ = CrossAttnBlock<T>(ps, p("dec0.xattn"), cfg.w0, cfg.cond_dim, rng);

        head_norm_ = nn::GroupNorm<T>(ps, p("head.gn"), cfg.w0, norm_groups(cfg.w0));
        head_conv_ = nn::Conv2d<T>(ps, p("head.conv"), cfg.w0, cfg.latent_channels, 3, 1, 1, rng);
    }

    // shared timestep embedding; the control branch reuses it
    Var<T> time_embedding(const std::vector<int64_t>& ts) const {
        auto emb = ag::constant(sinusoidal_embedding<T>(ts, cfg_.w0));
        return temb_l2_(ag::silu(temb_l1_(emb)));
    }

    Var<T> forward(const Var<T>& z_t, const Var<T>& temb, const Conditioning<T>& cond,
                   const std::optional<ControlFeatures<T>>& control) const {
        check_arg(z_t.shape().size() == 4 && z_t.shape()[1] == cfg_.latent_channels,
                  "denoiser: wrong latent shape");

        auto h = conv_in_(z_t);
        h = rb0a_(h, temb);
        h = rb0b_(h, temb);
        auto s0 = h;
        h = down0_(h);
        h = rb1a_(h, temb);
        h = rb1b_(h, temb);
        auto s1 = h;
        h = down1_(h);
        h = rb2a_(h, temb);
        h = rb2b_(h, temb);
        auto s2 = h;

        h = mid1_(h, temb);
        h = mid2_(h, temb);

        auto skip_of = [&](const Var<T>& s, int level, const Var<T>& ctrl) {
            Var<T> v = s;
            if (cfg_.spectral.enabled &&
                std::find(cfg_.spectral.levels.begin(), cfg_.spectral.levels.end(), level) !=
                    cfg_.spectral.levels.end())
                v = spectral::spectral_lowpass(v, cfg_.spectral.radius, cfg_.spectral.gain);
            if (control.has_value()) v = ag::add(v, ctrl);
            return v;
        };
        Var<T> c0, c1, c2;
        if (control.has_value()) {
            c0 = control->f0;
            c1 = control->f1;
            c2 = control->f2;
        }

        h = dec2_rb_(ag::concat_channels(h, skip_of(s2, 2, c2)), temb);
        h = up2_(ag::upsample_nearest2(h));
        h = dec1_rb_(ag::concat_channels(h, skip_of(s1, 1, c1)), temb);
        if (cond.text_tokens.has_value())
            h = dec1_attn_(h, *cond.text_tokens, cond.face_tokens, cond.mu);
        h = up1_(ag::upsample_nearest2(h));
        h = dec0_rb_(ag::concat_channels(h, skip_of(s0, 0, c0)), temb);
        if (cond.text_tokens.has_value())
            h = dec0_attn_(h, *cond.text_tokens, cond.face_tokens, cond.mu);

        return head_conv_(ag::silu(head_norm_(h)));
    }

    const UNetConfig& config() const { return cfg_; }

private:
    UNetConfig cfg_;
    nn::Linear<T> temb_l1_, temb_l2_;
    nn::Conv2d<T> conv_in_, down0_, down1_, up2_, up1_;
    ResBlock<T> rb0a_, rb0b_, rb1a_, rb1b_, rb2a_, rb2b_, mid1_, mid2_;
    ResBlock<T> dec2_rb_, dec1_rb_, dec0_rb_;
    CrossAttnBlock<T> dec1_attn_, dec0_attn_;
    nn::GroupNorm<T> head_norm_;
    nn::Conv2d<T> head_conv_;
};

}  // namespace fasdiff::models
