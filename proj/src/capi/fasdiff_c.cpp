#include "fasdiff/fasdiff.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "media/dataset.hpp"
#include "media/image.hpp"
#include "pipeline/codec.hpp"
#include "pipeline/evalsuite.hpp"
#include "pipeline/training.hpp"
#include "pipeline/version.hpp"

namespace {

using namespace fasdiff;

thread_local std::string g_last_error;

fasdiff_status status_of(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument:
            return FASDIFF_ERR_USAGE;
        case ErrorCode::data:
            return FASDIFF_ERR_DATA;
        case ErrorCode::numeric:
            return FASDIFF_ERR_NUMERIC;
        default:
            return FASDIFF_ERR_INTERNAL;
    }
}

// every entry point funnels through here so exceptions never cross the ABI
template <typename Fn>
fasdiff_status guarded(Fn&& fn) {
    try {
        fn();
        return FASDIFF_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.code());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return FASDIFF_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return FASDIFF_ERR_INTERNAL;
    }
}

std::string require(const char* s, const char* what) {
    check_arg(s != nullptr && *s != '\0', std::string(what) + " must be given");
    return s;
}

pipeline::Config parse_config(const char* config_json) {
    if (config_json == nullptr || *config_json == '\0') return pipeline::resolve_config("");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::data, std::string("config is not valid JSON: ") + e.what());
    }
    return pipeline::config_from_json(j);
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    check_data(out != nullptr, "out of memory");
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

pipeline::Variant parse_variant(const char* variant) {
    return (variant == nullptr || *variant == '\0') ? pipeline::Variant::full
                                                    : pipeline::variant_from_name(variant);
}

}  // namespace

struct fasdiff_codec {
    fasdiff::pipeline::ModelHandle model;
    fasdiff::pipeline::Config cfg;
};

extern "C" {

const char* fasdiff_version(void) { return fasdiff::version(); }

const char* fasdiff_last_error(void) { return g_last_error.c_str(); }

void fasdiff_string_free(char* s) { std::free(s); }

fasdiff_status fasdiff_resolve_config(const char* path_or_null, char** out_json) {
    return guarded([&] {
        check_arg(out_json != nullptr, "out_json must be given");
        auto cfg = pipeline::resolve_config(path_or_null ? path_or_null : "");
        *out_json = dup_string(pipeline::config_to_json(cfg).dump(2));
    });
}

fasdiff_status fasdiff_generate_dataset(const char* dir, int count, uint64_t seed, int image_size) {
    return guarded([&] {
        media::generate_dataset(require(dir, "dir"), count, seed, image_size);
    });
}

fasdiff_status fasdiff_pretrain_autoencoder(const char* config_json, const char* workdir) {
    return guarded([&] {
        pipeline::pretrain_autoencoder(parse_config(config_json), require(workdir, "workdir"));
    });
}

fasdiff_status fasdiff_train_classifier(const char* config_json, const char* workdir) {
    return guarded([&] {
        pipeline::train_classifier(parse_config(config_json), require(workdir, "workdir"));
    });
}

fasdiff_status fasdiff_train(const char* config_json, const char* workdir, int stage,
                             const char* variant) {
    return guarded([&] {
        pipeline::run_training(parse_config(config_json), require(workdir, "workdir"), stage,
                               parse_variant(variant));
    });
}

fasdiff_status fasdiff_eval(const char* config_json, const char* workdir, const char* checkpoint,
                            const char* tag, char** out_summary_json) {
    return guarded([&] {
        auto ckpt = require(checkpoint, "checkpoint");
        std::string tag_str;
        if (tag && *tag) {
            tag_str = tag;
        } else {
            // default tag: checkpoint file name without extension
            auto slash = ckpt.find_last_of('/');
            tag_str = slash == std::string::npos ? ckpt : ckpt.substr(slash + 1);
            auto dot = tag_str.find_last_of('.');
            if (dot != std::string::npos) tag_str = tag_str.substr(0, dot);
        }
        auto s = pipeline::evaluate_checkpoint(ckpt, require(workdir, "workdir"),
                                               parse_config(config_json), tag_str);
        if (out_summary_json) {
            nlohmann::json j{{"checkpoint", s.checkpoint},
                             {"tag", tag_str},
                             {"mean_bpp", s.mean_bpp},
                             {"mean_psnr", s.mean_psnr},
                             {"mean_perceptual", s.mean_perceptual},
                             {"downstream_accuracy", s.downstream_accuracy},
                             {"gender_accuracy", s.gender_accuracy},
                             {"source_accuracy", s.source_accuracy},
                             {"recon_psnr_floor", s.recon_psnr_floor}};
            *out_summary_json = dup_string(j.dump(2));
        }
    });
}

fasdiff_status fasdiff_rd_curve(const char* config_json, const char* workdir, int stage,
                                const char* variant) {
    return guarded([&] {
        pipeline::run_rd_curve(parse_config(config_json), require(workdir, "workdir"), stage,
                               parse_variant(variant));
    });
}

fasdiff_status fasdiff_ablation_report(const char* config_json, const char* workdir, int stage) {
    return guarded([&] {
        pipeline::run_ablation_report(parse_config(config_json), require(workdir, "workdir"), stage);
    });
}

fasdiff_status fasdiff_codec_open(const char* checkpoint_path, fasdiff_codec** out) {
    return guarded([&] {
        check_arg(out != nullptr, "out must be given");
        auto handle = pipeline::load_model(require(checkpoint_path, "checkpoint_path"));
        auto cfg = pipeline::config_from_json(handle.meta.config);
        *out = new fasdiff_codec{std::move(handle), std::move(cfg)};
    });
}

void fasdiff_codec_close(fasdiff_codec* codec) { delete codec; }

fasdiff_status fasdiff_codec_encode_file(fasdiff_codec* codec, const char* image_png,
                                         const char* out_stream, const char* caption,
                                         double* bpp_out) {
    return guarded([&] {
        check_arg(codec != nullptr, "codec handle must be given");
        auto res = pipeline::encode_file(*codec->model.bundle, codec->cfg,
                                         require(image_png, "image_png"),
                                         require(out_stream, "out_stream"), caption ? caption : "");
        if (bpp_out) *bpp_out = res.bpp;
    });
}

fasdiff_status fasdiff_codec_decode_file(fasdiff_codec* codec, const char* stream_path,
                                         const char* out_png, const char* preliminary_png,
                                         int64_t steps, uint64_t seed, double mu) {
    return guarded([&] {
        check_arg(codec != nullptr, "codec handle must be given");
        pipeline::decode_file(*codec->model.bundle, require(stream_path, "stream_path"),
                              require(out_png, "out_png"), preliminary_png ? preliminary_png : "",
                              steps, seed, mu);
    });
}

fasdiff_status fasdiff_psnr(const char* png_a, const char* png_b, double* out_db) {
    return guarded([&] {
        check_arg(out_db != nullptr, "out_db must be given");
        auto a = media::load_png(require(png_a, "png_a"));
        auto b = media::load_png(require(png_b, "png_b"));
        *out_db = media::psnr(a, b);
    });
}

}  // extern "C"
