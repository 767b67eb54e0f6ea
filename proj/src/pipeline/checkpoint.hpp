#pragma once

#include <string>

#include <json.hpp>

#include "core/nn.hpp"

// Checkpoint archive: one self-contained binary file holding the full
// parameter store, optimizer moments (for exact resume), and a JSON
// metadata block with the resolved config, seed, rng state and per-prefix
// parameter digests. A crc32 trailer guards the whole file; writes go
// through a temp file + rename so an interrupted save never clobbers the
// previous good checkpoint.
namespace fasdiff::pipeline {

struct CheckpointMeta {
    std::string kind;  // "autoencoder" | "classifier" | "stage1" | "stage2"
    int64_t stage = 0;
    uint64_t seed = 0;
    double lambda_rate = 0.0;
    std::string variant = "full";
    int64_t step = 0;            // training steps completed
    int64_t optimizer_step = 0;  // adam timestep
    std::string rng_state;       // training stream, for exact resume
    double recon_psnr_floor = 0.0;
    double classifier_val_accuracy = 0.0;
    nlohmann::json config;   // echo of the resolved run config
    nlohmann::json digests;  // prefix -> parameter digest (hex string)
};

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const nn::ParamStore<float>& ps, const nn::Adam<float>* opt);

// loads all parameters into ps (creating or overwriting by name); when opt
// is given its moments and step counter are restored too
CheckpointMeta load_checkpoint(const std::string& path, nn::ParamStore<float>& ps,
                               nn::Adam<float>* opt);

// metadata only
CheckpointMeta peek_checkpoint(const std::string& path);

bool checkpoint_exists(const std::string& path);

}  // namespace fasdiff::pipeline
