#pragma once

#include <string>
#include <vector>

#include "pipeline/codec.hpp"
#include "pipeline/config.hpp"

// Rate-distortion evaluation: per-checkpoint metric sweeps over the
// validation split, RD curve files across the rate ladder, BD-rate between
// curves, and the ablation comparison table.
namespace fasdiff::pipeline {

struct RDPoint {
    double bpp = 0.0;
    double metric = 0.0;
};

struct RDCurve {
    std::string metric_name;
    bool lower_is_better = false;
    std::vector<RDPoint> points;  // strictly increasing bpp
};

// average delta-rate of `test` against `anchor` in percent; positive means
// the test curve needs more bits for the same quality. Interpolates
// log2(bpp) as a monotone piecewise-cubic function of the metric and
// averages the gap over the shared metric range.
double bd_rate(const RDCurve& anchor, const RDCurve& test);

void write_rd_file(const std::string& path, const RDCurve& curve);
RDCurve read_rd_file(const std::string& path);

struct ImageEval {
    std::string file;
    double bpp = 0.0;
    double psnr = 0.0;
    double perceptual = 0.0;
};

struct EvalSummary {
    std::string checkpoint;
    double mean_bpp = 0.0;
    double mean_psnr = 0.0;        // +inf samples excluded, with a warning
    double mean_perceptual = 0.0;
    double downstream_accuracy = 0.0;  // mean over attributes, reconstructions
    double gender_accuracy = 0.0;
    double source_accuracy = 0.0;  // same classifier on the originals
    double recon_psnr_floor = 0.0;
    std::vector<ImageEval> per_image;
};

// encode + decode every validation image through the checkpoint and collect
// metrics; writes per-image and summary records under eval/<tag>/
EvalSummary evaluate_checkpoint(const std::string& ckpt_path, const std::string& workdir,
                                const Config& cfg, const std::string& tag);

// sweeps the rate ladder at one stage/variant into RD curve files + plots;
// returns the curves in ladder order
std::vector<RDCurve> run_rd_curve(const Config& cfg, const std::string& workdir, int stage,
                                  Variant variant);

// BD-rate of every ablation variant against the full model, written as a
// delimited table with labeled (empty) columns for unimplemented metrics
void run_ablation_report(const Config& cfg, const std::string& workdir, int stage);

}  // namespace fasdiff::pipeline
