// Command-line front end. Talks to the pipeline exclusively through the C
// API in fasdiff/fasdiff.h; the only other dependencies are the vendored
// argument parser and JSON reader used to patch flag overrides into the
// resolved configuration text.
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fasdiff/fasdiff.h"

namespace {

using nlohmann::json;

int fail(fasdiff_status st) {
    std::cerr << "error: " << fasdiff_last_error() << "\n";
    return static_cast<int>(st);
}

// flags shared by every subcommand
struct CommonArgs {
    std::string config_path;
    std::string workdir = ".";
    std::optional<uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "config file (JSON); falls back to $FASDIFF_CONFIG");
    cmd->add_option("--workdir", args.workdir, "artifact root; relative paths resolve against it");
    cmd->add_option("--seed", args.seed, "override the root seed");
}

std::string join_workdir(const std::string& workdir, const std::string& path) {
    if (path.empty() || path.front() == '/') return path;
    if (workdir.empty() || workdir == ".") return path;
    return workdir + "/" + path;
}

bool file_exists(const std::string& path) {
    if (FILE* f = std::fopen(path.c_str(), "rb")) {
        std::fclose(f);
        return true;
    }
    return false;
}

// --ckpt accepts a file path or a ladder shorthand like "l224"
// (resolved to the stage-2 checkpoint of the full model under workdir)
std::string resolve_ckpt(const std::string& workdir, const std::string& given) {
    auto direct = join_workdir(workdir, given);
    if (file_exists(direct)) return direct;
    if (given.size() >= 2 && given[0] == 'l' &&
        given.find_first_not_of("0123456789", 1) == std::string::npos) {
        auto ladder = join_workdir(workdir, "ckpt/stage2-" + given + ".fsck");
        if (file_exists(ladder)) return ladder;
    }
    return direct;  // let the library report the missing file
}

// resolves the config, applies overrides, echoes it, returns the JSON text
std::string prepare_config(const CommonArgs& args, const json& overrides) {
    char* raw = nullptr;
    auto st = fasdiff_resolve_config(args.config_path.empty() ? nullptr : args.config_path.c_str(), &raw);
    if (st != FASDIFF_OK) {
        std::cerr << "error: " << fasdiff_last_error() << "\n";
        std::exit(static_cast<int>(st));
    }
    json cfg = json::parse(raw);
    fasdiff_string_free(raw);

    if (args.seed) cfg["seed"] = *args.seed;
    for (const auto& [section, values] : overrides.items())
        for (const auto& [key, value] : values.items()) cfg[section][key] = value;

    // reproducibility echo: the exact configuration this process runs with
    std::cerr << "resolved config (seed " << cfg["seed"].get<uint64_t>() << "):\n"
              << cfg.dump(2) << "\n";
    return cfg.dump();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"facial image compression: training, codec and evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(fasdiff_version()));
    int exit_code = 0;

    // ------------------------------------------------------------ training
    auto* pre = app.add_subcommand("pretrain-ae", "train the latent autoencoder");
    CommonArgs pre_args;
    std::optional<int64_t> pre_steps;
    add_common(pre, pre_args);
    pre->add_option("--steps", pre_steps, "override the pretraining step budget");
    pre->callback([&] {
        json ov;
        if (pre_steps) ov["train"]["pretrain_steps"] = *pre_steps;
        auto st = fasdiff_pretrain_autoencoder(prepare_config(pre_args, ov).c_str(),
                                               pre_args.workdir.c_str());
        if (st != FASDIFF_OK) exit_code = fail(st);
    });

    auto* cls = app.add_subcommand("train-classifier", "train the attribute classifier");
    CommonArgs cls_args;
    std::optional<int64_t> cls_steps;
    add_common(cls, cls_args);
    cls->add_option("--steps", cls_steps, "override the classifier step budget");
    cls->callback([&] {
        json ov;
        if (cls_steps) ov["train"]["classifier_steps"] = *cls_steps;
        auto st = fasdiff_train_classifier(prepare_config(cls_args, ov).c_str(),
                                           cls_args.workdir.c_str());
        if (st != FASDIFF_OK) exit_code = fail(st);
    });

    auto* train = app.add_subcommand("train", "run one training stage");
    CommonArgs train_args;
    int train_stage = 1;
    std::string train_variant = "full";
    std::optional<double> train_lambda;
    std::optional<int64_t> train_steps;
    add_common(train, train_args);
    train->add_option("--stage", train_stage, "training stage")->check(CLI::IsMember({1, 2}))->required();
    train->add_option("--variant", train_variant, "ablation variant or 'full'");
    train->add_option("--lambda", train_lambda, "rate-distortion weight (ladder point)");
    train->add_option("--steps", train_steps, "override the stage step budget");
    train->callback([&] {
        json ov;
        if (train_lambda) ov["train"]["lambda_rate"] = *train_lambda;
        if (train_steps) ov["train"][train_stage == 2 ? "stage2_steps" : "stage1_steps"] = *train_steps;
        auto st = fasdiff_train(prepare_config(train_args, ov).c_str(), train_args.workdir.c_str(),
                                train_stage, train_variant.c_str());
        if (st != FASDIFF_OK) exit_code = fail(st);
    });

    // --------------------------------------------------------------- codec
    auto* enc = app.add_subcommand("encode", "compress an image into a bitstream file");
    CommonArgs enc_args;
    std::string enc_in, enc_out, enc_ckpt, enc_caption;
    add_common(enc, enc_args);
    enc->add_option("--in", enc_in, "input image (png)")->required();
    enc->add_option("--out", enc_out, "output bitstream path")->required();
    enc->add_option("--ckpt", enc_ckpt, "checkpoint path or ladder shorthand (l224)")->required();
    enc->add_option("--caption", enc_caption, "caption within the model vocabulary");
    enc->callback([&] {
        prepare_config(enc_args, {});  // echo only; the checkpoint carries the model config
        fasdiff_codec* codec = nullptr;
        auto st = fasdiff_codec_open(resolve_ckpt(enc_args.workdir, enc_ckpt).c_str(), &codec);
        if (st != FASDIFF_OK) {
            exit_code = fail(st);
            return;
        }
        double bpp = 0.0;
        st = fasdiff_codec_encode_file(codec, join_workdir(enc_args.workdir, enc_in).c_str(),
                                       join_workdir(enc_args.workdir, enc_out).c_str(),
                                       enc_caption.c_str(), &bpp);
        fasdiff_codec_close(codec);
        if (st != FASDIFF_OK) {
            exit_code = fail(st);
            return;
        }
        std::cout << "bpp=" << bpp << "\n";
    });

    auto* dec = app.add_subcommand("decode", "reconstruct an image from a bitstream file");
    CommonArgs dec_args;
    std::string dec_in, dec_out, dec_ckpt, dec_preliminary;
    int64_t dec_steps = 20;
    uint64_t dec_seed = 0;
    double dec_mu = 1.0;
    add_common(dec, dec_args);
    dec->add_option("--in", dec_in, "input bitstream")->required();
    dec->add_option("--out", dec_out, "output image (png)")->required();
    dec->add_option("--ckpt", dec_ckpt, "checkpoint path or ladder shorthand")->required();
    dec->add_option("--preliminary", dec_preliminary, "also write the pre-diffusion estimate here");
    dec->add_option("--steps", dec_steps, "sampling steps");
    dec->add_option("--decode-seed", dec_seed, "noise seed for the sampler start");
    dec->add_option("--mu", dec_mu, "facial conditioning weight");
    dec->callback([&] {
        prepare_config(dec_args, {});
        fasdiff_codec* codec = nullptr;
        auto st = fasdiff_codec_open(resolve_ckpt(dec_args.workdir, dec_ckpt).c_str(), &codec);
        if (st != FASDIFF_OK) {
            exit_code = fail(st);
            return;
        }
        st = fasdiff_codec_decode_file(
            codec, join_workdir(dec_args.workdir, dec_in).c_str(),
            join_workdir(dec_args.workdir, dec_out).c_str(),
            dec_preliminary.empty() ? nullptr : join_workdir(dec_args.workdir, dec_preliminary).c_str(),
            dec_steps, dec_seed, dec_mu);
        fasdiff_codec_close(codec);
        if (st != FASDIFF_OK) exit_code = fail(st);
    });

    // ---------------------------------------------------------- evaluation
    auto* ev = app.add_subcommand("eval", "metric sweep of one checkpoint on the validation split");
    CommonArgs ev_args;
    std::string ev_ckpt, ev_tag;
    std::optional<int64_t> ev_steps;
    add_common(ev, ev_args);
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path or ladder shorthand")->required();
    ev->add_option("--tag", ev_tag, "artifact directory name under eval/");
    ev->add_option("--steps", ev_steps, "override decode sampling steps");
    ev->callback([&] {
        json ov;
        if (ev_steps) ov["decode"]["steps"] = *ev_steps;
        char* summary = nullptr;
        auto st = fasdiff_eval(prepare_config(ev_args, ov).c_str(), ev_args.workdir.c_str(),
                               resolve_ckpt(ev_args.workdir, ev_ckpt).c_str(),
                               ev_tag.empty() ? nullptr : ev_tag.c_str(), &summary);
        if (st != FASDIFF_OK) {
            exit_code = fail(st);
            return;
        }
        std::cout << summary << "\n";
        fasdiff_string_free(summary);
    });

    auto* rd = app.add_subcommand("rd-curve", "rate-distortion sweep across the lambda ladder");
    CommonArgs rd_args;
    int rd_stage = 2;
    std::string rd_variant = "full";
    std::optional<int64_t> rd_steps;
    add_common(rd, rd_args);
    rd->add_option("--stage", rd_stage, "checkpoint stage to sweep")->check(CLI::IsMember({1, 2}));
    rd->add_option("--variant", rd_variant, "ablation variant or 'full'");
    rd->add_option("--steps", rd_steps, "override decode sampling steps");
    rd->callback([&] {
        json ov;
        if (rd_steps) ov["decode"]["steps"] = *rd_steps;
        auto st = fasdiff_rd_curve(prepare_config(rd_args, ov).c_str(), rd_args.workdir.c_str(),
                                   rd_stage, rd_variant.c_str());
        if (st != FASDIFF_OK) exit_code = fail(st);
    });

    auto* ab = app.add_subcommand("ablation-report", "BD-rate table of ablations against the full model");
    CommonArgs ab_args;
    int ab_stage = 2;
    std::optional<int64_t> ab_steps;
    add_common(ab, ab_args);
    ab->add_option("--stage", ab_stage, "checkpoint stage to compare")->check(CLI::IsMember({1, 2}));
    ab->add_option("--steps", ab_steps, "override decode sampling steps");
    ab->callback([&] {
        json ov;
        if (ab_steps) ov["decode"]["steps"] = *ab_steps;
        auto st = fasdiff_ablation_report(prepare_config(ab_args, ov).c_str(), ab_args.workdir.c_str(),
                                          ab_stage);
        if (st != FASDIFF_OK) exit_code = fail(st);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;  // any parse problem is a usage error
    }
    return exit_code;
}
