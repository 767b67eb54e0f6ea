#include "pipeline/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace fasdiff::pipeline {

namespace {

using nlohmann::json;

// rejects unknown keys so config typos fail loudly instead of silently
// falling back to defaults
void check_keys(const json& j, const std::string& scope, std::initializer_list<const char*> known) {
    check_arg(j.is_object(), "config: " + scope + " must be an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known)
            if (key == k) ok = true;
        check_arg(ok, "config: unknown key \"" + key + "\" in " + scope);
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

int lambda_index(double lambda) {
    for (size_t i = 0; i < kLambdaLadder.size(); ++i)
        if (kLambdaLadder[i] == lambda) return static_cast<int>(i);
    return -1;
}

Config config_from_json(const nlohmann::json& j) {
    Config cfg;
    check_keys(j, "root", {"seed", "dataset", "model", "train", "decode"});
    get_if(j, "seed", cfg.seed);

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        check_keys(d, "dataset", {"train_dir", "val_dir", "train_count", "val_count", "image_size"});
        get_if(d, "train_dir", cfg.dataset.train_dir);
        get_if(d, "val_dir", cfg.dataset.val_dir);
        get_if(d, "train_count", cfg.dataset.train_count);
        get_if(d, "val_count", cfg.dataset.val_count);
        get_if(d, "image_size", cfg.dataset.image_size);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_keys(m, "model",
                   {"ae_w1", "ae_w2", "ae_w3", "latent_channels", "code_channels", "comp_width",
                    "cls_w1", "cls_w2", "cls_w3", "cls_feature_dim", "unet_w0", "unet_w1", "unet_w2",
                    "cond_dim", "text_tokens", "face_tokens", "skip_filter_enabled", "skip_filter_gain",
                    "skip_filter_radius", "diffusion_steps"});
        get_if(m, "ae_w1", cfg.model.ae_w1);
        get_if(m, "ae_w2", cfg.model.ae_w2);
        get_if(m, "ae_w3", cfg.model.ae_w3);
        get_if(m, "latent_channels", cfg.model.latent_channels);
        get_if(m, "code_channels", cfg.model.code_channels);
        get_if(m, "comp_width", cfg.model.comp_width);
        get_if(m, "cls_w1", cfg.model.cls_w1);
        get_if(m, "cls_w2", cfg.model.cls_w2);
        get_if(m, "cls_w3", cfg.model.cls_w3);
        get_if(m, "cls_feature_dim", cfg.model.cls_feature_dim);
        get_if(m, "unet_w0", cfg.model.unet_w0);
        get_if(m, "unet_w1", cfg.model.unet_w1);
        get_if(m, "unet_w2", cfg.model.unet_w2);
        get_if(m, "cond_dim", cfg.model.cond_dim);
        get_if(m, "text_tokens", cfg.model.text_tokens);
        get_if(m, "face_tokens", cfg.model.face_tokens);
        get_if(m, "skip_filter_enabled", cfg.model.skip_filter_enabled);
        get_if(m, "skip_filter_gain", cfg.model.skip_filter_gain);
        get_if(m, "skip_filter_radius", cfg.model.skip_filter_radius);
        get_if(m, "diffusion_steps", cfg.model.diffusion_steps);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t, "train",
                   {"lambda_rate", "gamma", "lr_stage1", "lr_stage2", "lr_pretrain", "lr_classifier",
                    "stage1_steps", "stage2_steps", "pretrain_steps", "classifier_steps", "batch_size",
                    "checkpoint_every", "rate_scale", "latent_l2", "latent_distance",
                    "consistency_guidance", "latent_mix", "fused_conditioning"});
        get_if(t, "lambda_rate", cfg.train.lambda_rate);
        get_if(t, "gamma", cfg.train.gamma);
        get_if(t, "lr_stage1", cfg.train.lr_stage1);
        get_if(t, "lr_stage2", cfg.train.lr_stage2);
        get_if(t, "lr_pretrain", cfg.train.lr_pretrain);
        get_if(t, "lr_classifier", cfg.train.lr_classifier);
        get_if(t, "stage1_steps", cfg.train.stage1_steps);
        get_if(t, "stage2_steps", cfg.train.stage2_steps);
        get_if(t, "pretrain_steps", cfg.train.pretrain_steps);
        get_if(t, "classifier_steps", cfg.train.classifier_steps);
        get_if(t, "batch_size", cfg.train.batch_size);
        get_if(t, "checkpoint_every", cfg.train.checkpoint_every);
        get_if(t, "rate_scale", cfg.train.rate_scale);
        get_if(t, "latent_l2", cfg.train.latent_l2);
        get_if(t, "latent_distance", cfg.train.latent_distance);
        get_if(t, "consistency_guidance", cfg.train.consistency_guidance);
        get_if(t, "latent_mix", cfg.train.latent_mix);
        get_if(t, "fused_conditioning", cfg.train.fused_conditioning);
    }
    if (j.contains("decode")) {
        const auto& d = j.at("decode");
        check_keys(d, "decode", {"steps", "seed", "mu"});
        get_if(d, "steps", cfg.decode.steps);
        get_if(d, "seed", cfg.decode.seed);
        get_if(d, "mu", cfg.decode.mu);
    }

    check_arg(cfg.train.lr_stage1 > 0 && cfg.train.lr_stage2 > 0, "config: learning rates must be > 0");
    check_arg(cfg.train.batch_size > 0, "config: batch_size must be > 0");
    check_arg(cfg.dataset.image_size % 8 == 0, "config: image_size must be a multiple of 8");
    check_arg(cfg.train.latent_distance == "l1" || cfg.train.latent_distance == "l2",
              "config: latent_distance must be \"l1\" or \"l2\"");
    check_arg(cfg.decode.steps >= 1, "config: decode steps must be >= 1");
    check_arg(cfg.model.diffusion_steps >= 2, "config: diffusion_steps must be >= 2");
    return cfg;
}

nlohmann::json config_to_json(const Config& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["dataset"] = {{"train_dir", cfg.dataset.train_dir},
                    {"val_dir", cfg.dataset.val_dir},
                    {"train_count", cfg.dataset.train_count},
                    {"val_count", cfg.dataset.val_count},
                    {"image_size", cfg.dataset.image_size}};
    j["model"] = {{"ae_w1", cfg.model.ae_w1},
                  {"ae_w2", cfg.model.ae_w2},
                  {"ae_w3", cfg.model.ae_w3},
                  {"latent_channels", cfg.model.latent_channels},
                  {"code_channels", cfg.model.code_channels},
                  {"comp_width", cfg.model.comp_width},
                  {"cls_w1", cfg.model.cls_w1},
                  {"cls_w2", cfg.model.cls_w2},
                  {"cls_w3", cfg.model.cls_w3},
                  {"cls_feature_dim", cfg.model.cls_feature_dim},
                  {"unet_w0", cfg.model.unet_w0},
                  {"unet_w1", cfg.model.unet_w1},
                  {"unet_w2", cfg.model.unet_w2},
                  {"cond_dim", cfg.model.cond_dim},
                  {"text_tokens", cfg.model.text_tokens},
                  {"face_tokens", cfg.model.face_tokens},
                  {"skip_filter_enabled", cfg.model.skip_filter_enabled},
                  {"skip_filter_gain", cfg.model.skip_filter_gain},
                  {"skip_filter_radius", cfg.model.skip_filter_radius},
                  {"diffusion_steps", cfg.model.diffusion_steps}};
    j["train"] = {{"lambda_rate", cfg.train.lambda_rate},
                  {"gamma", cfg.train.gamma},
                  {"lr_stage1", cfg.train.lr_stage1},
                  {"lr_stage2", cfg.train.lr_stage2},
                  {"lr_pretrain", cfg.train.lr_pretrain},
                  {"lr_classifier", cfg.train.lr_classifier},
                  {"stage1_steps", cfg.train.stage1_steps},
                  {"stage2_steps", cfg.train.stage2_steps},
                  {"pretrain_steps", cfg.train.pretrain_steps},
                  {"classifier_steps", cfg.train.classifier_steps},
                  {"batch_size", cfg.train.batch_size},
                  {"checkpoint_every", cfg.train.checkpoint_every},
                  {"rate_scale", cfg.train.rate_scale},
                  {"latent_l2", cfg.train.latent_l2},
                  {"latent_distance", cfg.train.latent_distance},
                  {"consistency_guidance", cfg.train.consistency_guidance},
                  {"latent_mix", cfg.train.latent_mix},
                  {"fused_conditioning", cfg.train.fused_conditioning}};
    j["decode"] = {{"steps", cfg.decode.steps}, {"seed", cfg.decode.seed}, {"mu", cfg.decode.mu}};
    return j;
}

Config resolve_config(const std::string& explicit_path) {
    std::string path = explicit_path;
    if (path.empty()) {
        const char* env = std::getenv("FASDIFF_CONFIG");
        if (env != nullptr) path = env;
    }
    if (path.empty()) return Config{};
    std::ifstream is(path);
    check_data(is.good(), "cannot open config file " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::data, "config parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

const std::array<Variant, 5>& all_variants() {
    static const std::array<Variant, 5> v{Variant::full, Variant::no_consistency_guidance,
                                          Variant::no_skip_filter, Variant::no_latent_mix,
                                          Variant::no_fused_conditioning};
    return v;
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_consistency_guidance: return "no_consistency_guidance";
        case Variant::no_skip_filter: return "no_skip_filter";
        case Variant::no_latent_mix: return "no_latent_mix";
        case Variant::no_fused_conditioning: return "no_fused_conditioning";
    }
    throw Error(ErrorCode::internal, "unreachable variant");
}

Variant variant_from_name(const std::string& name) {
    for (Variant v : all_variants())
        if (variant_name(v) == name) return v;
    throw Error(ErrorCode::invalid_argument, "unknown variant \"" + name + "\"");
}

Config apply_variant(Config cfg, Variant v) {
    switch (v) {
        case Variant::full: break;
        case Variant::no_consistency_guidance: cfg.train.consistency_guidance = false; break;
        case Variant::no_skip_filter: cfg.model.skip_filter_enabled = false; break;
        case Variant::no_latent_mix: cfg.train.latent_mix = false; break;
        case Variant::no_fused_conditioning: cfg.train.fused_conditioning = false; break;
    }
    return cfg;
}

namespace paths {

std::string join(const std::string& a, const std::string& b) {
    if (a.empty()) return b;
    return (std::filesystem::path(a) / b).string();
}

void ensure_parent_dir(const std::string& path) {
    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

std::string dataset_train(const std::string& workdir, const Config& cfg) {
    return join(workdir, cfg.dataset.train_dir);
}

std::string dataset_val(const std::string& workdir, const Config& cfg) {
    return join(workdir, cfg.dataset.val_dir);
}

std::string ae_ckpt(const std::string& workdir) { return join(workdir, "ckpt/ae.fsck"); }

std::string classifier_ckpt(const std::string& workdir) { return join(workdir, "ckpt/classifier.fsck"); }

namespace {
std::string lambda_tag(double lambda) {
    // ladder values are small integers; keep tags short and stable
    if (lambda == static_cast<double>(static_cast<int64_t>(lambda)))
        return "l" + std::to_string(static_cast<int64_t>(lambda));
    return "l" + std::to_string(lambda);
}
std::string variant_dir(Variant v) {
    return v == Variant::full ? "ckpt" : join("ckpt", variant_name(v));
}
}  // namespace

std::string stage_ckpt(const std::string& workdir, int stage, double lambda, Variant v) {
    check_arg(stage == 1 || stage == 2, "stage must be 1 or 2");
    return join(workdir, join(variant_dir(v),
                              "stage" + std::to_string(stage) + "-" + lambda_tag(lambda) + ".fsck"));
}

std::string train_log(const std::string& workdir, int stage, double lambda, Variant v) {
    std::string name = "stage" + std::to_string(stage) + "-" + lambda_tag(lambda);
    if (v != Variant::full) name += "-" + variant_name(v);
    return join(workdir, join("logs", name + ".log"));
}

std::string eval_dir(const std::string& workdir) { return join(workdir, "eval"); }

std::string vocab_file(const std::string& workdir) { return join(workdir, "ckpt/vocab.txt"); }

}  // namespace paths

void write_sidecar(const std::string& artifact_path, const Config& cfg, const nlohmann::json& extra) {
    nlohmann::json j;
    j["config"] = config_to_json(cfg);
    j["extra"] = extra;
    std::ofstream os(artifact_path + ".meta.json", std::ios::binary);
    check_data(os.good(), "cannot write sidecar for " + artifact_path);
    os << j.dump(2) << "\n";
}

}  // namespace fasdiff::pipeline
