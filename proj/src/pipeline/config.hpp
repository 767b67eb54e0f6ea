#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/error.hpp"

// Run configuration. Everything an artifact needs to be reproduced travels
// through this struct: it is loaded from JSON (possibly partial, unknown
// keys rejected), echoed into checkpoints and sidecar files, and printed at
// the start of every command.
namespace fasdiff::pipeline {

// the released rate ladder; container lambda_id indexes into this
inline constexpr std::array<double, 4> kLambdaLadder{32.0, 96.0, 190.0, 224.0};

// -1 when the value is not on the ladder
int lambda_index(double lambda);

struct DatasetConfig {
    std::string train_dir = "data/train";
    std::string val_dir = "data/val";
    int64_t train_count = 64;
    int64_t val_count = 8;
    int64_t image_size = 64;
};

struct ModelConfig {
    // autoencoder widths and latent size
    int64_t ae_w1 = 32, ae_w2 = 64, ae_w3 = 128;
    int64_t latent_channels = 4;
    // compressor
    int64_t code_channels = 8;
    int64_t comp_width = 64;
    // attribute classifier (doubles as the face-embedding extractor)
    int64_t cls_w1 = 16, cls_w2 = 32, cls_w3 = 64;
    int64_t cls_feature_dim = 64;
    // denoiser
    int64_t unet_w0 = 64, unet_w1 = 128, unet_w2 = 256;
    int64_t cond_dim = 64;
    int64_t text_tokens = 8, face_tokens = 4;
    // low-frequency attenuation of the skip connections
    bool skip_filter_enabled = true;
    double skip_filter_gain = 0.6;
    double skip_filter_radius = 0.5;
    // diffusion schedule length
    int64_t diffusion_steps = 1000;
};

struct TrainConfig {
    double lambda_rate = 32.0;  // rate term multiplier
    double gamma = 0.2;         // weighted latent distortion multiplier
    double lr_stage1 = 1e-4;
    double lr_stage2 = 0.5e-5;
    double lr_pretrain = 1e-3;
    double lr_classifier = 2e-3;
    int64_t stage1_steps = 50000;
    int64_t stage2_steps = 20000;
    int64_t pretrain_steps = 8000;
    int64_t classifier_steps = 2000;
    int64_t batch_size = 16;
    int64_t checkpoint_every = 1000;
    // converts mean bits per code element into the loss's rate units; the
    // ladder values were published for a far larger latent, this rescale
    // lands them in a usable range at this latent size
    double rate_scale = 0.0625;
    double latent_l2 = 1e-4;             // autoencoder latent scale penalty
    std::string latent_distance = "l2";  // "l1" | "l2"
    // ablation switches (all on for the released model)
    bool consistency_guidance = true;  // variance weighting + feature consistency
    bool latent_mix = true;            // time-dependent control input mixing
    bool fused_conditioning = true;    // text+face guidance in stage 2
};

struct DecodeConfig {
    int64_t steps = 20;
    uint64_t seed = 0;
    double mu = 1.0;  // face-branch weight at inference
};

struct Config {
    uint64_t seed = 7;
    DatasetConfig dataset;
    ModelConfig model;
    TrainConfig train;
    DecodeConfig decode;
};

Config config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const Config& cfg);

// explicit path if given, else $FASDIFF_CONFIG, else built-in defaults
Config resolve_config(const std::string& explicit_path);

// ablation variants: the full model plus the four single-switch removals
enum class Variant {
    full,
    no_consistency_guidance,
    no_skip_filter,
    no_latent_mix,
    no_fused_conditioning,
};

const std::array<Variant, 5>& all_variants();
std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);
Config apply_variant(Config cfg, Variant v);

// ------------------------------------------------------------------- paths
// All artifacts live under an explicit workdir with this fixed layout.
namespace paths {

std::string join(const std::string& a, const std::string& b);
void ensure_parent_dir(const std::string& path);

std::string dataset_train(const std::string& workdir, const Config& cfg);
std::string dataset_val(const std::string& workdir, const Config& cfg);
std::string ae_ckpt(const std::string& workdir);
std::string classifier_ckpt(const std::string& workdir);
std::string stage_ckpt(const std::string& workdir, int stage, double lambda, Variant v);
std::string train_log(const std::string& workdir, int stage, double lambda, Variant v);
std::string eval_dir(const std::string& workdir);
std::string vocab_file(const std::string& workdir);

}  // namespace paths

// sidecar metadata written next to every produced artifact
void write_sidecar(const std::string& artifact_path, const Config& cfg, const nlohmann::json& extra);

}  // namespace fasdiff::pipeline
