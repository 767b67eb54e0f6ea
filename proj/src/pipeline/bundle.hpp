#pragma once

#include <functional>
#include <string>

#include "models/autoencoder.hpp"
#include "models/classifier.hpp"
#include "models/compressor.hpp"
#include "models/hlfe.hpp"
#include "models/unet.hpp"
#include "models/diffusion.hpp"
#include "pipeline/config.hpp"

// All pipeline networks over one shared parameter store. Checkpoint tensors
// are loaded into the store first (via the loader hook); module constructors
// then re-attach to existing names, so a bundle built after a load carries
// the checkpoint weights and a bundle built fresh gets seeded initialization.
namespace fasdiff::pipeline {

// parameter name prefixes, also the freezing / digest granularity
inline constexpr const char* kAePrefix = "ae.";
inline constexpr const char* kClassifierPrefix = "cls.";
inline constexpr const char* kCompressorPrefix = "h.";
inline constexpr const char* kTextPrefix = "te.";
inline constexpr const char* kProjPrefix = "proj.";
inline constexpr const char* kUNetPrefix = "unet.";
inline constexpr const char* kControlPrefix = "cm.";

inline models::AutoencoderConfig ae_config(const Config& cfg) {
    models::AutoencoderConfig c;
    c.w1 = cfg.model.ae_w1;
    c.w2 = cfg.model.ae_w2;
    c.w3 = cfg.model.ae_w3;
    c.latent_channels = cfg.model.latent_channels;
    return c;
}

inline models::ClassifierConfig classifier_config(const Config& cfg) {
    models::ClassifierConfig c;
    c.w1 = cfg.model.cls_w1;
    c.w2 = cfg.model.cls_w2;
    c.w3 = cfg.model.cls_w3;
    c.feature_dim = cfg.model.cls_feature_dim;
    return c;
}

inline models::CompressorConfig compressor_config(const Config& cfg) {
    models::CompressorConfig c;
    c.e1_channels = cfg.model.ae_w1;
    c.e2_channels = cfg.model.ae_w2;
    c.latent_channels = cfg.model.latent_channels;
    c.code_channels = cfg.model.code_channels;
    c.width = cfg.model.comp_width;
    return c;
}

inline models::HlfeConfig hlfe_config(const Config& cfg) {
    models::HlfeConfig c;
    c.cond_dim = cfg.model.cond_dim;
    c.text_tokens = cfg.model.text_tokens;
    c.face_tokens = cfg.model.face_tokens;
    c.face_feature_dim = cfg.model.cls_feature_dim;
    return c;
}

inline models::UNetConfig unet_config(const Config& cfg) {
    models::UNetConfig c;
    c.latent_channels = cfg.model.latent_channels;
    c.w0 = cfg.model.unet_w0;
    c.w1 = cfg.model.unet_w1;
    c.w2 = cfg.model.unet_w2;
    c.cond_dim = cfg.model.cond_dim;
    c.spectral.enabled = cfg.model.skip_filter_enabled;
    c.spectral.gain = cfg.model.skip_filter_gain;
    c.spectral.radius = cfg.model.skip_filter_radius;
    return c;
}

struct Bundle {
    Config cfg;
    nn::ParamStore<float> ps;
    models::Autoencoder<float> ae;
    models::Classifier<float> cls;
    models::Compressor<float> comp;
    models::TextEncoder<float> te;
    models::FaceProjector<float> proj;
    models::UNet<float> unet;
    models::ControlModule<float> cm;
    diffusion::NoiseSchedule sched;

    // loader runs against the empty store before any module registers its
    // parameters; pass {} for a fresh, seed-initialized bundle
    explicit Bundle(const Config& config,
                    const std::function<void(nn::ParamStore<float>&)>& loader = {})
        : cfg(config), sched(config.model.diffusion_steps) {
        if (loader) loader(ps);
        // separate init streams per component keep initializations stable
        // when other components change
        auto stream = [&](const char* name) { return RngStream(derive_seed(cfg.seed, name)); };
        auto r_ae = stream("init.ae");
        ae = models::Autoencoder<float>(ps, kAePrefix, ae_config(cfg), r_ae);
        auto r_cls = stream("init.cls");
        cls = models::Classifier<float>(ps, kClassifierPrefix, classifier_config(cfg), r_cls);
        auto r_h = stream("init.h");
        comp = models::Compressor<float>(ps, kCompressorPrefix, compressor_config(cfg), r_h);
        auto r_te = stream("init.te");
        te = models::TextEncoder<float>(ps, kTextPrefix, hlfe_config(cfg), r_te);
        auto r_proj = stream("init.proj");
        proj = models::FaceProjector<float>(ps, kProjPrefix, hlfe_config(cfg), r_proj);
        auto r_unet = stream("init.unet");
        unet = models::UNet<float>(ps, kUNetPrefix, unet_config(cfg), r_unet);
        auto r_cm = stream("init.cm");
        cm = models::ControlModule<float>(ps, kControlPrefix, unet_config(cfg), r_cm, kUNetPrefix);
    }

    // digest of one component's parameters (hex, as stored in metadata)
    std::string digest_hex(const std::string& prefix) const {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(ps.digest(prefix)));
        return std::string(buf);
    }
};

}  // namespace fasdiff::pipeline
