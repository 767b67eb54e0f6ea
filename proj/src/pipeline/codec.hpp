#pragma once

#include <memory>
#include <string>
#include <vector>

#include "codec/container.hpp"
#include "pipeline/bundle.hpp"
#include "pipeline/checkpoint.hpp"

// Deployable encode/decode on top of a trained checkpoint: the analysis
// transform's rounded code goes through the range coder into a container
// whose bytes (header, caption and payload together) define the bitrate.
namespace fasdiff::pipeline {

// checkpoint plus the networks rebuilt from its embedded config
struct ModelHandle {
    CheckpointMeta meta;
    std::unique_ptr<Bundle> bundle;
};

ModelHandle load_model(const std::string& ckpt_path);

struct EncodeResult {
    std::vector<uint8_t> bytes;
    double bpp = 0.0;  // 8 * bytes / (img_w * img_h)
};

// caption must stay inside the closed vocabulary; empty selects the neutral
// fallback caption
EncodeResult encode_image(const Bundle& b, const Tensor<float>& rgb, const std::string& caption);

struct DecodeResult {
    Tensor<float> image;        // [3, H, W], final reconstruction
    Tensor<float> preliminary;  // [3, H, W], decoded latent before diffusion
    std::string caption;
};

DecodeResult decode_stream(const Bundle& b, const std::vector<uint8_t>& bytes, int64_t steps,
                           uint64_t seed, double mu);

// file front-ends used by the CLI and the C API
EncodeResult encode_file(const Bundle& b, const Config& cfg, const std::string& image_path,
                         const std::string& out_path, const std::string& caption);
DecodeResult decode_file(const Bundle& b, const std::string& stream_path,
                         const std::string& out_image_path, const std::string& preliminary_path,
                         int64_t steps, uint64_t seed, double mu);

std::vector<uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace fasdiff::pipeline
