#pragma once

#include <map>
#include <memory>
#include <string>

#include "models/feature_net.hpp"
#include "pipeline/bundle.hpp"
#include "pipeline/checkpoint.hpp"
#include "pipeline/data.hpp"

// Training orchestration. The autoencoder and attribute classifier are
// pretrained once; the main model then trains in two stages:
//   stage 1: compressor + denoiser + control branch, no text conditioning,
//            control input mixed toward the clean latent by timestep
//   stage 2: cross-attention, control branch and face projector only,
//            supervised through a differentiable 3-step sampling chain
namespace fasdiff::pipeline {

void pretrain_autoencoder(const Config& cfg, const std::string& workdir);
void train_classifier(const Config& cfg, const std::string& workdir);

// runs (or resumes) one training stage to cfg's step budget, writing
// periodic checkpoints and a line-delimited loss log
void run_training(const Config& cfg, const std::string& workdir, int stage, Variant variant);

// Single training stage with stepwise control, used by run_training and
// driven directly by tests. Auto-resumes from the stage checkpoint when one
// exists; otherwise starts from the stage's prerequisites (autoencoder for
// stage 1; stage-1 checkpoint and classifier for stage 2).
class TrainingSession {
public:
    TrainingSession(const Config& cfg, const std::string& workdir, int stage, Variant variant);
    ~TrainingSession();

    // one optimizer update; returns the loss parts, with "total" equal to
    // the sum of the other parts as reported. Throws ErrorCode::numeric
    // with batch diagnostics if the loss goes non-finite.
    std::map<std::string, double> step();

    int64_t completed_steps() const { return step_; }
    int stage() const { return stage_; }
    Bundle& bundle() { return *bundle_; }
    const Bundle& bundle() const { return *bundle_; }
    std::string rng_state() const { return rng_.save_state(); }
    double recon_psnr_floor() const { return recon_psnr_floor_; }

    // canonical checkpoint for this stage / lambda / variant
    std::string checkpoint_path() const;
    void save(const std::string& path) const;
    void save() const { save(checkpoint_path()); }

private:
    std::vector<int64_t> draw_batch_indices();
    std::map<std::string, double> stage1_step();
    std::map<std::string, double> stage2_step();

    Config cfg_;
    std::string workdir_;
    int stage_;
    Variant variant_;
    std::unique_ptr<Bundle> bundle_;
    std::unique_ptr<LoadedDataset> train_data_;
    std::unique_ptr<models::FrozenFeatureNet<float>> consistency_net_;  // compressor loss
    std::unique_ptr<models::FrozenFeatureNet<float>> perceptual_net_;   // stage-2 pixel loss
    nn::Adam<float> opt_;
    std::vector<std::string> trainable_names_;
    RngStream rng_;
    int64_t step_ = 0;
    double recon_psnr_floor_ = 0.0;
    double classifier_val_accuracy_ = 0.0;
    std::vector<int64_t> last_batch_;  // for NaN diagnostics
};

}  // namespace fasdiff::pipeline
