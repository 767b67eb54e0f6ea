#include "pipeline/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "media/image.hpp"
#include "models/fcg.hpp"

namespace fasdiff::pipeline {

namespace {

using ag::Var;
using Clock = std::chrono::steady_clock;

// differentiable sampling depth in stage 2
constexpr int64_t kStage2SamplerSteps = 3;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string format_indices(const std::vector<int64_t>& idx) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < idx.size(); ++i) os << (i ? "," : "") << idx[i];
    os << "]";
    return os.str();
}

// loss log record; "total" is printed first, remaining parts in map order
void append_log_line(std::ofstream& log, int64_t step, const std::map<std::string, double>& parts,
                     double wall_ms) {
    log << "step=" << step;
    char buf[64];
    auto put = [&](const std::string& k, double v) {
        std::snprintf(buf, sizeof(buf), " %s=%.9g", k.c_str(), v);
        log << buf;
    };
    auto it = parts.find("total");
    if (it != parts.end()) put("total", it->second);
    for (const auto& [k, v] : parts)
        if (k != "total") put(k, v);
    std::snprintf(buf, sizeof(buf), " wall_ms=%.2f", wall_ms);
    log << buf << "\n";
    log.flush();
}

std::ofstream open_log(const std::string& path) {
    paths::ensure_parent_dir(path);
    std::ofstream log(path, std::ios::app);
    check_data(log.good(), "cannot open log file " + path);
    return log;
}

void require_finite(double v, const std::string& what, int64_t step,
                    const std::vector<int64_t>& batch, uint64_t seed) {
    check_numeric(std::isfinite(v), what + " is non-finite at step " + std::to_string(step) +
                                        ", batch " + format_indices(batch) + ", seed " +
                                        std::to_string(seed));
}

}  // namespace

// --------------------------------------------------------------- pretrain

void pretrain_autoencoder(const Config& cfg, const std::string& workdir) {
    auto train = LoadedDataset::load(paths::dataset_train(workdir, cfg));
    auto val = LoadedDataset::load(paths::dataset_val(workdir, cfg));

    nn::ParamStore<float> ps;
    RngStream init(derive_seed(cfg.seed, "init.ae"));
    models::Autoencoder<float> ae(ps, kAePrefix, ae_config(cfg), init);
    auto names = ps.names(kAePrefix);
    nn::Adam<float> opt(cfg.train.lr_pretrain);
    RngStream rng(derive_seed(cfg.seed, "pretrain-ae"));

    auto log = open_log(paths::join(workdir, "logs/pretrain-ae.log"));
    int64_t B = std::min<int64_t>(cfg.train.batch_size, train.size());
    for (int64_t step = 1; step <= cfg.train.pretrain_steps; ++step) {
        auto t0 = Clock::now();
        std::vector<int64_t> idx(static_cast<size_t>(B));
        for (auto& i : idx) i = rng.uniform_int(0, train.size() - 1);
        auto x = ag::constant(train.batch(idx));
        auto enc = ae.encode(x);
        auto recon_term = ag::mse(ae.decode(enc.z), x);
        // small pull toward zero keeps latents in the range the code
        // quantizer and the diffusion noise scale both assume
        auto reg_term = ag::scale(ag::mean_all(ag::square(enc.z)), cfg.train.latent_l2);
        auto loss = ag::add(recon_term, reg_term);

        std::map<std::string, double> parts;
        parts["recon"] = static_cast<double>(recon_term.value().vec()[0]);
        parts["latent_reg"] = static_cast<double>(reg_term.value().vec()[0]);
        parts["total"] = parts["recon"] + parts["latent_reg"];
        require_finite(parts["total"], "pretrain loss", step, idx, cfg.seed);

        ag::backward(loss);
        opt.step(ps, names);
        ps.zero_grad();
        append_log_line(log, step, parts, ms_since(t0));
        if (step % 500 == 0 || step == cfg.train.pretrain_steps)
            std::cout << "pretrain-ae step " << step << "/" << cfg.train.pretrain_steps
                      << " recon=" << parts["recon"] << "\n";
    }

    // reconstruction quality with no compression in the way; decode quality
    // is later judged against this floor
    double floor = 0.0;
    for (int64_t i = 0; i < val.size(); ++i) {
        auto x = ag::constant(val.batch({i}));
        auto recon = ae.decode(ae.encode(x).z);
        floor += media::psnr(recon.value(), x.value());
    }
    floor /= static_cast<double>(val.size());

    CheckpointMeta meta;
    meta.kind = "autoencoder";
    meta.seed = cfg.seed;
    meta.step = cfg.train.pretrain_steps;
    meta.optimizer_step = opt.step_count();
    meta.recon_psnr_floor = floor;
    meta.config = config_to_json(cfg);
    meta.digests["ae"] = [&] {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(ps.digest(kAePrefix)));
        return std::string(buf);
    }();
    auto path = paths::ae_ckpt(workdir);
    save_checkpoint(path, meta, ps, &opt);
    write_sidecar(path, cfg, {{"kind", "autoencoder"}, {"recon_psnr_floor", floor}});
    std::cout << "pretrain-ae done, val psnr floor " << floor << " dB -> " << path << "\n";
}

// -------------------------------------------------------------- classifier

void train_classifier(const Config& cfg, const std::string& workdir) {
    auto train = LoadedDataset::load(paths::dataset_train(workdir, cfg));
    auto val = LoadedDataset::load(paths::dataset_val(workdir, cfg));

    nn::ParamStore<float> ps;
    RngStream init(derive_seed(cfg.seed, "init.cls"));
    models::Classifier<float> cls(ps, kClassifierPrefix, classifier_config(cfg), init);
    auto names = ps.names(kClassifierPrefix);
    nn::Adam<float> opt(cfg.train.lr_classifier);
    RngStream rng(derive_seed(cfg.seed, "train-classifier"));

    auto log = open_log(paths::join(workdir, "logs/train-classifier.log"));
    int64_t B = std::min<int64_t>(cfg.train.batch_size, train.size());
    for (int64_t step = 1; step <= cfg.train.classifier_steps; ++step) {
        auto t0 = Clock::now();
        std::vector<int64_t> idx(static_cast<size_t>(B));
        for (auto& i : idx) i = rng.uniform_int(0, train.size() - 1);
        auto x = ag::constant(train.batch(idx));
        auto loss = models::bce_with_logits(cls.logits(x), train.batch_targets(idx));

        std::map<std::string, double> parts;
        parts["bce"] = static_cast<double>(loss.value().vec()[0]);
        parts["total"] = parts["bce"];
        require_finite(parts["total"], "classifier loss", step, idx, cfg.seed);

        ag::backward(loss);
        opt.step(ps, names);
        ps.zero_grad();
        append_log_line(log, step, parts, ms_since(t0));
    }

    // mean over attributes of thresholded accuracy on the validation split
    std::vector<int64_t> all_val(static_cast<size_t>(val.size()));
    std::iota(all_val.begin(), all_val.end(), 0);
    auto logits = cls.logits(ag::constant(val.batch(all_val))).value();
    auto targets = val.batch_targets(all_val);
    double acc = 0.0;
    for (int64_t c = 0; c < models::kAttributeCount; ++c)
        acc += models::attribute_accuracy(logits, targets, c);
    acc /= static_cast<double>(models::kAttributeCount);

    CheckpointMeta meta;
    meta.kind = "classifier";
    meta.seed = cfg.seed;
    meta.step = cfg.train.classifier_steps;
    meta.optimizer_step = opt.step_count();
    meta.classifier_val_accuracy = acc;
    meta.config = config_to_json(cfg);
    auto path = paths::classifier_ckpt(workdir);
    save_checkpoint(path, meta, ps, &opt);
    write_sidecar(path, cfg, {{"kind", "classifier"}, {"val_accuracy", acc}});
    std::cout << "train-classifier done, val accuracy " << acc << " -> " << path << "\n";
}

// ----------------------------------------------------------------- session

TrainingSession::TrainingSession(const Config& cfg, const std::string& workdir, int stage,
                                 Variant variant)
    : cfg_(apply_variant(cfg, variant)),
      workdir_(workdir),
      stage_(stage),
      variant_(variant),
      opt_(stage == 2 ? cfg.train.lr_stage2 : cfg.train.lr_stage1),
      rng_(derive_seed(cfg.seed, stage == 2 ? "train.stage2" : "train.stage1")) {
    check_arg(stage == 1 || stage == 2, "training stage must be 1 or 2");

    train_data_ = std::make_unique<LoadedDataset>(LoadedDataset::load(paths::dataset_train(workdir_, cfg_)));
    consistency_net_ = std::make_unique<models::FrozenFeatureNet<float>>(models::kLowLevelFeatureSeed);
    if (stage_ == 2)
        perceptual_net_ = std::make_unique<models::FrozenFeatureNet<float>>(models::kPerceptualFeatureSeed);

    auto own_path = checkpoint_path();
    if (checkpoint_exists(own_path)) {
        CheckpointMeta meta;
        bundle_ = std::make_unique<Bundle>(cfg_, [&](nn::ParamStore<float>& ps) {
            meta = load_checkpoint(own_path, ps, &opt_);
        });
        check_data(meta.stage == stage_ && meta.variant == variant_name(variant_),
                   "checkpoint " + own_path + " does not match the requested stage/variant");
        step_ = meta.step;
        rng_.load_state(meta.rng_state);
        recon_psnr_floor_ = meta.recon_psnr_floor;
        classifier_val_accuracy_ = meta.classifier_val_accuracy;
    } else if (stage_ == 1) {
        auto ae_path = paths::ae_ckpt(workdir_);
        check_data(checkpoint_exists(ae_path),
                   "stage 1 needs the pretrained autoencoder at " + ae_path + "; run pretrain-ae first");
        CheckpointMeta ae_meta;
        bundle_ = std::make_unique<Bundle>(cfg_, [&](nn::ParamStore<float>& ps) {
            ae_meta = load_checkpoint(ae_path, ps, nullptr);
        });
        recon_psnr_floor_ = ae_meta.recon_psnr_floor;
    } else {
        auto s1_path = paths::stage_ckpt(workdir_, 1, cfg_.train.lambda_rate, variant_);
        check_data(checkpoint_exists(s1_path),
                   "stage 2 needs the stage-1 checkpoint at " + s1_path + "; run stage 1 first");
        auto cls_path = paths::classifier_ckpt(workdir_);
        check_data(checkpoint_exists(cls_path),
                   "stage 2 needs the attribute classifier at " + cls_path + "; run train-classifier first");
        CheckpointMeta s1_meta;
        bundle_ = std::make_unique<Bundle>(cfg_, [&](nn::ParamStore<float>& ps) {
            s1_meta = load_checkpoint(s1_path, ps, nullptr);
            load_checkpoint(cls_path, ps, nullptr);  // overwrites the stage-1 copy of cls.*
        });
        check_data(s1_meta.lambda_rate == cfg_.train.lambda_rate,
                   "stage-1 checkpoint rate weight does not match this run");
        recon_psnr_floor_ = s1_meta.recon_psnr_floor;
        classifier_val_accuracy_ = peek_checkpoint(cls_path).classifier_val_accuracy;
    }

    auto& ps = bundle_->ps;
    ps.set_trainable("", false);
    if (stage_ == 1) {
        // denoiser, control branch and compressor learn; everything else is
        // fixed support machinery
        for (const char* p : {kUNetPrefix, kControlPrefix, kCompressorPrefix})
            ps.set_trainable(p, true);
        for (const char* p : {kUNetPrefix, kControlPrefix, kCompressorPrefix})
            for (auto& n : ps.names(p)) trainable_names_.push_back(n);
    } else {
        // only the conditioning machinery adapts: cross-attention inside the
        // denoiser, the control branch, and the face projector
        for (const char* p : {kControlPrefix, kProjPrefix})
            ps.set_trainable(p, true);
        for (const char* p : {kControlPrefix, kProjPrefix})
            for (auto& n : ps.names(p)) trainable_names_.push_back(n);
        for (auto& n : ps.names(kUNetPrefix)) {
            if (n.find(".xattn.") == std::string::npos) continue;
            ps.get(n).node()->requires_grad = true;
            trainable_names_.push_back(n);
        }
    }
}

TrainingSession::~TrainingSession() = default;

std::string TrainingSession::checkpoint_path() const {
    return paths::stage_ckpt(workdir_, stage_, cfg_.train.lambda_rate, variant_);
}

std::vector<int64_t> TrainingSession::draw_batch_indices() {
    int64_t B = std::min<int64_t>(cfg_.train.batch_size, train_data_->size());
    std::vector<int64_t> idx(static_cast<size_t>(B));
    for (auto& i : idx) i = rng_.uniform_int(0, train_data_->size() - 1);
    return idx;
}

std::map<std::string, double> TrainingSession::step() {
    auto parts = (stage_ == 1) ? stage1_step() : stage2_step();
    step_ += 1;
    return parts;
}

std::map<std::string, double> TrainingSession::stage1_step() {
    auto& b = *bundle_;
    last_batch_ = draw_batch_indices();
    int64_t B = static_cast<int64_t>(last_batch_.size());
    int64_t t = rng_.uniform_int(0, b.sched.steps());

    auto x = ag::constant(train_data_->batch(last_batch_));
    auto enc = b.ae.encode(x);
    const auto& y = enc.z;

    Tensor<float> eps_t(y.shape());
    rng_.fill_normal(eps_t);
    auto eps = ag::constant(std::move(eps_t));

    auto code = b.comp.analyze(y, enc.e1, enc.e2);
    auto z_y = b.comp.synthesize(b.comp.quantize_ste(code));
    auto rate = b.comp.rate_bits(b.comp.quantize_noise(code, rng_));

    // inverse-variance weighting concentrates the distortion budget on the
    // flat latent channels; the ablation runs unweighted and drops the
    // feature consistency term
    Tensor<float> w(y.shape());
    if (cfg_.train.consistency_guidance) {
        w = models::variance_weight_map(y.value());
    } else {
        std::fill(w.vec().begin(), w.vec().end(), 1.0f);
    }
    auto mode = cfg_.train.latent_distance == "l1" ? models::LatentDistance::l1
                                                   : models::LatentDistance::l2;
    double latent_elems = static_cast<double>(y.numel() / y.shape()[0]);
    auto distortion = ag::scale(models::weighted_latent_distance(y, z_y, w, mode),
                                cfg_.train.gamma * latent_elems);

    // rate in bits per code element, weighted by the ladder point
    double code_elems = static_cast<double>(code.numel());
    auto rate_term = ag::scale(rate, cfg_.train.lambda_rate * cfg_.train.rate_scale / code_elems);

    Var<float> l_h;
    if (cfg_.train.consistency_guidance) {
        auto consistency = models::embedding_distance(*consistency_net_, b.ae.decode(z_y), x);
        l_h = ag::add(ag::add(distortion, consistency), rate_term);
    } else {
        l_h = ag::add(distortion, rate_term);
    }

    // denoising branch: the control input drifts from the decoded latent
    // toward the clean one as t grows, so late (noisy) steps see the
    // strongest guidance
    auto z_t = diffusion::forward_noise(b.sched, y, eps, t);
    auto z_mix = cfg_.train.latent_mix ? diffusion::time_aware_mix(z_y, y, t, b.sched.steps()) : z_y;
    auto temb = b.unet.time_embedding(std::vector<int64_t>(static_cast<size_t>(B), t));
    auto ctrl = b.cm.forward(z_mix, temb);

    models::Conditioning<float> cond;
    cond.text_tokens = b.te.encode(std::vector<std::string>(static_cast<size_t>(B), media::kNeutralCaption));
    cond.mu = 0.0;
    auto l_ldm = ag::mse(b.unet.forward(z_t, temb, cond, ctrl), eps);

    std::map<std::string, double> parts;
    parts["l_h"] = static_cast<double>(l_h.value().vec()[0]);
    parts["l_ldm"] = static_cast<double>(l_ldm.value().vec()[0]);
    parts["total"] = parts["l_h"] + parts["l_ldm"];
    require_finite(parts["total"], "stage-1 loss", step_ + 1, last_batch_, cfg_.seed);

    ag::backward(ag::add(l_h, l_ldm));
    opt_.step(b.ps, trainable_names_);
    b.ps.zero_grad();
    return parts;
}

std::map<std::string, double> TrainingSession::stage2_step() {
    auto& b = *bundle_;
    last_batch_ = draw_batch_indices();
    int64_t B = static_cast<int64_t>(last_batch_.size());
    int64_t t = rng_.uniform_int(0, b.sched.steps());

    auto x = ag::constant(train_data_->batch(last_batch_));
    auto enc = b.ae.encode(x);
    const auto& y = enc.z;

    Tensor<float> eps_t(y.shape());
    rng_.fill_normal(eps_t);
    auto eps = ag::constant(std::move(eps_t));

    // compressor is frozen now; z_y is just the decoded hard-quantized code
    auto z_y = b.comp.synthesize(b.comp.quantize_ste(b.comp.analyze(y, enc.e1, enc.e2)));

    models::Conditioning<float> cond;
    if (cfg_.train.fused_conditioning) {
        cond.text_tokens = b.te.encode(train_data_->batch_captions(last_batch_));
        cond.face_tokens = b.proj.project(b.cls.features(b.ae.decode(z_y)));
        cond.mu = 1.0;
    } else {
        // conditioning ablation: fall back to the stage-1 path
        cond.text_tokens =
            b.te.encode(std::vector<std::string>(static_cast<size_t>(B), media::kNeutralCaption));
        cond.mu = 0.0;
    }

    auto denoise_at = [&](const Var<float>& z, int64_t tt) {
        auto temb = b.unet.time_embedding(std::vector<int64_t>(static_cast<size_t>(B), tt));
        return b.unet.forward(z, temb, cond, b.cm.forward(z_y, temb));
    };

    // the same noise draw seeds the sampler and serves as the prediction
    // target of the denoising term
    auto y_hat = diffusion::ddim_sample<float>(b.sched, denoise_at, eps, kStage2SamplerSteps);
    auto z_t = diffusion::forward_noise(b.sched, y, eps, t);
    auto l_ldm = ag::mse(denoise_at(z_t, t), eps);

    auto latent = ag::scale(ag::l2_norm(ag::sub(y_hat, y)), 1.0 / static_cast<double>(B));
    auto perceptual = models::perceptual_distance(*perceptual_net_, b.ae.decode(y_hat), x);

    std::map<std::string, double> parts;
    parts["latent"] = static_cast<double>(latent.value().vec()[0]);
    parts["perceptual"] = static_cast<double>(perceptual.value().vec()[0]);
    parts["l_ldm"] = static_cast<double>(l_ldm.value().vec()[0]);
    parts["total"] = parts["latent"] + parts["perceptual"] + parts["l_ldm"];
    require_finite(parts["total"], "stage-2 loss", step_ + 1, last_batch_, cfg_.seed);

    ag::backward(ag::add(ag::add(latent, perceptual), l_ldm));
    opt_.step(b.ps, trainable_names_);
    b.ps.zero_grad();
    return parts;
}

void TrainingSession::save(const std::string& path) const {
    CheckpointMeta meta;
    meta.kind = stage_ == 1 ? "stage1" : "stage2";
    meta.stage = stage_;
    meta.seed = cfg_.seed;
    meta.lambda_rate = cfg_.train.lambda_rate;
    meta.variant = variant_name(variant_);
    meta.step = step_;
    meta.optimizer_step = opt_.step_count();
    meta.rng_state = rng_.save_state();
    meta.recon_psnr_floor = recon_psnr_floor_;
    meta.classifier_val_accuracy = classifier_val_accuracy_;
    meta.config = config_to_json(cfg_);
    for (const char* p : {kAePrefix, kClassifierPrefix, kCompressorPrefix, kTextPrefix, kProjPrefix,
                          kUNetPrefix, kControlPrefix}) {
        std::string key(p);
        key.pop_back();  // trailing dot
        meta.digests[key] = bundle_->digest_hex(p);
    }
    save_checkpoint(path, meta, bundle_->ps, &opt_);
}

// ------------------------------------------------------------ run_training

void run_training(const Config& cfg, const std::string& workdir, int stage, Variant variant) {
    TrainingSession session(cfg, workdir, stage, variant);
    int64_t budget = stage == 2 ? cfg.train.stage2_steps : cfg.train.stage1_steps;
    auto ckpt_path = session.checkpoint_path();

    // the caption list ships with the model so decoders agree on token ids
    auto vocab_path = paths::vocab_file(workdir);
    if (!std::ifstream(vocab_path).good()) {
        paths::ensure_parent_dir(vocab_path);
        models::Vocabulary().write_file(vocab_path);
    }

    if (session.completed_steps() >= budget) {
        std::cout << "stage " << stage << " already at step " << session.completed_steps() << " -> "
                  << ckpt_path << "\n";
        return;
    }

    auto log = open_log(paths::train_log(workdir, stage, cfg.train.lambda_rate, variant));
    while (session.completed_steps() < budget) {
        auto t0 = Clock::now();
        auto parts = session.step();
        append_log_line(log, session.completed_steps(), parts, ms_since(t0));
        if (session.completed_steps() % cfg.train.checkpoint_every == 0) session.save();
        if (session.completed_steps() % 200 == 0 || session.completed_steps() == budget)
            std::cout << "stage " << stage << " (" << variant_name(variant) << ", rate weight "
                      << cfg.train.lambda_rate << ") step " << session.completed_steps() << "/"
                      << budget << " total=" << parts["total"] << "\n";
    }
    session.save();
    write_sidecar(ckpt_path, session.bundle().cfg,
                  {{"kind", stage == 1 ? "stage1" : "stage2"},
                   {"steps", session.completed_steps()},
                   {"variant", variant_name(variant)}});
}

}  // namespace fasdiff::pipeline
