#include "pipeline/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "media/image.hpp"
#include "media/plot.hpp"
#include "models/feature_net.hpp"
#include "pipeline/data.hpp"

namespace fasdiff::pipeline {

namespace {

// ------------------------------------------------------- bd-rate internals

// shape-preserving piecewise-cubic slopes (Fritsch-Carlson); keeps the
// interpolant monotone wherever the data is, so four-point RD curves cannot
// oscillate the way a global cubic fit does
std::vector<double> pchip_slopes(const std::vector<double>& x, const std::vector<double>& y) {
    size_t n = x.size();
    std::vector<double> h(n - 1), d(n - 1), s(n);
    for (size_t i = 0; i + 1 < n; ++i) {
        h[i] = x[i + 1] - x[i];
        d[i] = (y[i + 1] - y[i]) / h[i];
    }
    for (size_t i = 1; i + 1 < n; ++i) {
        if (d[i - 1] * d[i] <= 0.0) {
            s[i] = 0.0;
        } else {
            double w1 = 2.0 * h[i] + h[i - 1];
            double w2 = h[i] + 2.0 * h[i - 1];
            s[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
        }
    }
    auto endpoint = [](double h0, double h1, double d0, double d1) {
        double v = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if (v * d0 <= 0.0) return 0.0;
        if (d0 * d1 < 0.0 && std::abs(v) > 3.0 * std::abs(d0)) return 3.0 * d0;
        return v;
    };
    s[0] = endpoint(h[0], h[1], d[0], d[1]);
    s[n - 1] = endpoint(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
    return s;
}

// antiderivative of the cubic Hermite segment, in normalized coordinates
double hermite_integral_to(double u, double y0, double y1, double s0, double s1, double h) {
    double u2 = u * u, u3 = u2 * u, u4 = u3 * u;
    return h * (y0 * (u - u3 + 0.5 * u4) + h * s0 * (0.5 * u2 - 2.0 / 3.0 * u3 + 0.25 * u4) +
                y1 * (u3 - 0.5 * u4) + h * s1 * (0.25 * u4 - u3 / 3.0));
}

// integral of the interpolant over [lo, hi], which must lie inside the data
double pchip_integrate(const std::vector<double>& x, const std::vector<double>& y,
                       const std::vector<double>& s, double lo, double hi) {
    double acc = 0.0;
    for (size_t i = 0; i + 1 < x.size(); ++i) {
        double a = std::max(x[i], lo), b = std::min(x[i + 1], hi);
        if (a >= b) continue;
        double h = x[i + 1] - x[i];
        double ua = (a - x[i]) / h, ub = (b - x[i]) / h;
        acc += hermite_integral_to(ub, y[i], y[i + 1], s[i], s[i + 1], h) -
               hermite_integral_to(ua, y[i], y[i + 1], s[i], s[i + 1], h);
    }
    return acc;
}

struct PreparedCurve {
    std::vector<double> metric;   // ascending, in "higher is better" orientation
    std::vector<double> log_bpp;  // must ascend with metric
};

PreparedCurve prepare_curve(const RDCurve& c) {
    check_arg(c.points.size() >= 4, "bd_rate: curve '" + c.metric_name + "' needs at least 4 points");
    PreparedCurve out;
    std::vector<RDPoint> pts = c.points;
    double flip = c.lower_is_better ? -1.0 : 1.0;
    std::sort(pts.begin(), pts.end(),
              [&](const RDPoint& a, const RDPoint& b) { return flip * a.metric < flip * b.metric; });
    for (const auto& p : pts) {
        check_arg(p.bpp > 0.0 && std::isfinite(p.metric), "bd_rate: invalid point in curve");
        out.metric.push_back(flip * p.metric);
        out.log_bpp.push_back(std::log2(p.bpp));
    }
    for (size_t i = 0; i + 1 < pts.size(); ++i)
        check_arg(out.metric[i] < out.metric[i + 1] && out.log_bpp[i] < out.log_bpp[i + 1],
                  "bd_rate: curve '" + c.metric_name + "' is not monotone after sorting");
    return out;
}

// ------------------------------------------------------------ file helpers

std::string fmt(double v, const char* spec = "%.6g") {
    char buf[48];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

constexpr int64_t kGenderColumn = 0;

}  // namespace

double bd_rate(const RDCurve& anchor, const RDCurve& test) {
    auto a = prepare_curve(anchor);
    auto t = prepare_curve(test);
    double lo = std::max(a.metric.front(), t.metric.front());
    double hi = std::min(a.metric.back(), t.metric.back());
    check_arg(lo < hi, "bd_rate: curves share no metric range");
    auto sa = pchip_slopes(a.metric, a.log_bpp);
    auto st = pchip_slopes(t.metric, t.log_bpp);
    double delta = (pchip_integrate(t.metric, t.log_bpp, st, lo, hi) -
                    pchip_integrate(a.metric, a.log_bpp, sa, lo, hi)) /
                   (hi - lo);
    return (std::exp2(delta) - 1.0) * 100.0;
}

void write_rd_file(const std::string& path, const RDCurve& curve) {
    for (size_t i = 0; i + 1 < curve.points.size(); ++i)
        check_arg(curve.points[i].bpp < curve.points[i + 1].bpp,
                  "rd file: points must have strictly increasing bpp");
    paths::ensure_parent_dir(path);
    std::ofstream os(path);
    check_data(os.good(), "cannot write " + path);
    os << "# metric=" << curve.metric_name << " lower_is_better=" << (curve.lower_is_better ? 1 : 0)
       << "\n";
    for (const auto& p : curve.points) os << fmt(p.bpp, "%.9g") << "\t" << fmt(p.metric, "%.9g") << "\n";
    check_data(os.good(), "short write to " + path);
}

RDCurve read_rd_file(const std::string& path) {
    std::ifstream is(path);
    check_data(is.good(), "cannot open " + path);
    RDCurve curve;
    std::string line;
    bool have_header = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream hs(line.substr(1));
            std::string field;
            while (hs >> field) {
                auto eq = field.find('=');
                if (eq == std::string::npos) continue;
                auto key = field.substr(0, eq), val = field.substr(eq + 1);
                if (key == "metric") curve.metric_name = val;
                if (key == "lower_is_better") curve.lower_is_better = (val == "1");
            }
            have_header = true;
            continue;
        }
        std::istringstream ls(line);
        RDPoint p;
        check_data(static_cast<bool>(ls >> p.bpp >> p.metric), "malformed rd line in " + path);
        curve.points.push_back(p);
    }
    check_data(have_header && !curve.points.empty(), "rd file " + path + " missing header or points");
    return curve;
}

EvalSummary evaluate_checkpoint(const std::string& ckpt_path, const std::string& workdir,
                                const Config& cfg, const std::string& tag) {
    auto handle = load_model(ckpt_path);
    auto& b = *handle.bundle;
    auto val = LoadedDataset::load(paths::dataset_val(workdir, cfg));
    models::FrozenFeatureNet<float> proxy(models::kPerceptualFeatureSeed);

    EvalSummary out;
    out.checkpoint = ckpt_path;
    out.recon_psnr_floor = handle.meta.recon_psnr_floor;

    auto ds = media::load_dataset(paths::dataset_val(workdir, cfg));
    check_data(ds.items.size() == static_cast<size_t>(val.size()), "dataset listing changed mid-run");

    std::vector<int64_t> all(static_cast<size_t>(val.size()));
    std::iota(all.begin(), all.end(), 0);
    auto targets = val.batch_targets(all);

    // reconstruct every validation image through the full encode/decode path
    Tensor<float> recon_batch(Shape{val.size(), 3, val.images[0].shape()[1], val.images[0].shape()[2]});
    double psnr_sum = 0.0, proxy_sum = 0.0, bpp_sum = 0.0;
    int64_t psnr_count = 0;
    for (int64_t i = 0; i < val.size(); ++i) {
        const auto& img = val.images[static_cast<size_t>(i)];
        auto encoded = encode_image(b, img, val.captions[static_cast<size_t>(i)]);
        auto decoded = decode_stream(b, encoded.bytes, cfg.decode.steps, cfg.decode.seed, cfg.decode.mu);

        ImageEval pe;
        pe.file = ds.items[static_cast<size_t>(i)].file;
        pe.bpp = encoded.bpp;
        pe.psnr = media::psnr(decoded.image, img);
        {
            Tensor<float> a(Shape{1, 3, img.shape()[1], img.shape()[2]});
            Tensor<float> bb(a.shape());
            std::copy(decoded.image.vec().begin(), decoded.image.vec().end(), a.vec().begin());
            std::copy(img.vec().begin(), img.vec().end(), bb.vec().begin());
            pe.perceptual = static_cast<double>(
                models::perceptual_distance(proxy, ag::constant(std::move(a)), ag::constant(std::move(bb)))
                    .value()
                    .vec()[0]);
        }
        out.per_image.push_back(pe);

        bpp_sum += pe.bpp;
        proxy_sum += pe.perceptual;
        if (std::isfinite(pe.psnr)) {
            psnr_sum += pe.psnr;
            psnr_count += 1;
        } else {
            std::cerr << "warning: psnr is infinite for " << pe.file << ", excluded from the mean\n";
        }
        std::copy(decoded.image.vec().begin(), decoded.image.vec().end(),
                  recon_batch.data() + i * decoded.image.numel());
    }

    out.mean_bpp = bpp_sum / static_cast<double>(val.size());
    out.mean_perceptual = proxy_sum / static_cast<double>(val.size());
    out.mean_psnr = psnr_count > 0 ? psnr_sum / static_cast<double>(psnr_count)
                                   : std::numeric_limits<double>::infinity();

    // downstream attribute recognition on reconstructions vs originals
    auto recon_logits = b.cls.logits(ag::constant(std::move(recon_batch))).value();
    auto source_logits = b.cls.logits(ag::constant(val.batch(all))).value();
    double recon_acc = 0.0, source_acc = 0.0;
    for (int64_t c = 0; c < models::kAttributeCount; ++c) {
        recon_acc += models::attribute_accuracy(recon_logits, targets, c);
        source_acc += models::attribute_accuracy(source_logits, targets, c);
    }
    out.downstream_accuracy = recon_acc / static_cast<double>(models::kAttributeCount);
    out.source_accuracy = source_acc / static_cast<double>(models::kAttributeCount);
    out.gender_accuracy = models::attribute_accuracy(recon_logits, targets, kGenderColumn);

    // artifacts: per-image log + summary snapshot
    auto dir = paths::join(paths::eval_dir(workdir), tag);
    {
        auto path = paths::join(dir, "per_image.txt");
        paths::ensure_parent_dir(path);
        std::ofstream os(path);
        check_data(os.good(), "cannot write " + path);
        os << "# file\tbpp\tpsnr\tperceptual\n";
        for (const auto& pe : out.per_image)
            os << pe.file << "\t" << fmt(pe.bpp) << "\t" << fmt(pe.psnr) << "\t" << fmt(pe.perceptual)
               << "\n";
    }
    {
        nlohmann::json j{{"checkpoint", out.checkpoint},
                         {"image_count", out.per_image.size()},
                         {"mean_bpp", out.mean_bpp},
                         {"mean_psnr", out.mean_psnr},
                         {"mean_perceptual", out.mean_perceptual},
                         {"downstream_accuracy", out.downstream_accuracy},
                         {"gender_accuracy", out.gender_accuracy},
                         {"source_accuracy", out.source_accuracy},
                         {"recon_psnr_floor", out.recon_psnr_floor}};
        auto path = paths::join(dir, "summary.json");
        std::ofstream os(path);
        check_data(os.good(), "cannot write " + path);
        os << j.dump(2) << "\n";
        write_sidecar(path, cfg, {{"kind", "eval-summary"}});
    }
    return out;
}

namespace {

std::string ladder_tag(int stage, double lambda, Variant v) {
    std::string tag = "stage" + std::to_string(stage) + "-l" + std::to_string(static_cast<int>(lambda));
    if (v != Variant::full) tag += "-" + variant_name(v);
    return tag;
}

std::string curve_suffix(Variant v) {
    return v == Variant::full ? std::string() : "-" + variant_name(v);
}

}  // namespace

std::vector<RDCurve> run_rd_curve(const Config& cfg, const std::string& workdir, int stage,
                                  Variant variant) {
    struct MetricSpec {
        const char* name;
        bool lower_is_better;
    };
    const MetricSpec metrics[] = {{"psnr", false}, {"perceptual", true}, {"downstream_accuracy", false}};

    std::vector<EvalSummary> sweeps;
    for (double lambda : kLambdaLadder) {
        Config run_cfg = cfg;
        run_cfg.train.lambda_rate = lambda;
        auto ckpt = paths::stage_ckpt(workdir, stage, lambda, variant);
        check_data(checkpoint_exists(ckpt), "rd-curve: missing checkpoint " + ckpt);
        sweeps.push_back(evaluate_checkpoint(ckpt, workdir, run_cfg, ladder_tag(stage, lambda, variant)));
    }

    std::vector<RDCurve> curves;
    for (const auto& m : metrics) {
        RDCurve c;
        c.metric_name = m.name;
        c.lower_is_better = m.lower_is_better;
        for (const auto& s : sweeps) {
            double metric = std::string(m.name) == "psnr"
                                ? s.mean_psnr
                                : (std::string(m.name) == "perceptual" ? s.mean_perceptual
                                                                       : s.downstream_accuracy);
            if (!std::isfinite(metric)) {
                std::cerr << "warning: dropping non-finite " << m.name << " point at bpp " << s.mean_bpp
                          << "\n";
                continue;
            }
            c.points.push_back({s.mean_bpp, metric});
        }
        std::sort(c.points.begin(), c.points.end(),
                  [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });

        auto base = paths::join(paths::eval_dir(workdir),
                                "rd-" + std::string(m.name) + curve_suffix(variant));
        write_rd_file(base + ".txt", c);
        media::PlotSeries series;
        series.label = m.name;
        for (const auto& p : c.points) {
            series.x.push_back(p.bpp);
            series.y.push_back(p.metric);
        }
        media::write_plot_png(base + ".png", {series}, "bpp", m.name);
        curves.push_back(std::move(c));
    }
    return curves;
}

void run_ablation_report(const Config& cfg, const std::string& workdir, int stage) {
    // curve per variant, full model first as the reference
    std::vector<std::pair<Variant, std::vector<RDCurve>>> sweeps;
    for (Variant v : all_variants()) sweeps.push_back({v, run_rd_curve(cfg, workdir, stage, v)});

    const auto& reference = sweeps.front().second;  // Variant::full
    auto path = paths::join(paths::eval_dir(workdir), "ablation.txt");
    paths::ensure_parent_dir(path);
    std::ofstream os(path);
    check_data(os.good(), "cannot write " + path);
    // unimplemented metric columns stay in the schema but hold no values
    os << "variant\tbd_rate_psnr\tbd_rate_perceptual\tfid\tkid\tdists\tclip_iqa\tface_sim\n";
    for (const auto& [v, curves] : sweeps) {
        os << variant_name(v);
        for (size_t m = 0; m < 2; ++m) os << "\t" << fmt(bd_rate(reference[m], curves[m]), "%.4f");
        os << "\t\t\t\t\t\n";
    }
    check_data(os.good(), "short write to " + path);
    write_sidecar(path, cfg, {{"kind", "ablation-report"}, {"stage", stage}});
    std::cout << "ablation table -> " << path << "\n";
}

}  // namespace fasdiff::pipeline
