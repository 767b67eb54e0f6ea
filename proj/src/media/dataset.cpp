#include "media/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "core/error.hpp"
#include "media/image.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace fasdiff::media {

std::string caption_for(const FaceAttributes& a) {
    std::string s = "a ";
    if (a.smiling) s += "smiling ";
    s += a.male ? "man" : "woman";
    std::vector<std::string> extras;
    if (a.glasses) extras.push_back("glasses");
    if (a.beard && a.male) extras.push_back("beard");
    if (a.dark_hair) extras.push_back("dark hair");
    for (size_t i = 0; i < extras.size(); ++i) {
        s += (i == 0 ? " with " : " and ");
        s += extras[i];
    }
    return s;
}

FaceAttributes random_attributes(RngStream& rng) {
    FaceAttributes a;
    a.male = rng.uniform01() < 0.5;
    a.smiling = rng.uniform01() < 0.5;
    a.glasses = rng.uniform01() < 0.35;
    a.beard = a.male && rng.uniform01() < 0.4;
    a.dark_hair = rng.uniform01() < 0.5;
    return a;
}

namespace {

struct Canvas {
    Tensor<float>& t;
    int64_t n;

    void set(int64_t y, int64_t x, float r, float g, float b) {
        if (y < 0 || y >= n || x < 0 || x >= n) return;
        t.at3(0, y, x) = r;
        t.at3(1, y, x) = g;
        t.at3(2, y, x) = b;
    }

    void fill_ellipse(double cy, double cx, double ry, double rx, float r, float g, float b) {
        for (int64_t y = static_cast<int64_t>(cy - ry) - 1; y <= static_cast<int64_t>(cy + ry) + 1; ++y)
            for (int64_t x = static_cast<int64_t>(cx - rx) - 1; x <= static_cast<int64_t>(cx + rx) + 1; ++x) {
                double dy = (static_cast<double>(y) - cy) / ry;
                double dx = (static_cast<double>(x) - cx) / rx;
                if (dy * dy + dx * dx <= 1.0) set(y, x, r, g, b);
            }
    }

    void ring(double cy, double cx, double rad, double thickness, float r, float g, float b) {
        for (int64_t y = static_cast<int64_t>(cy - rad) - 2; y <= static_cast<int64_t>(cy + rad) + 2; ++y)
            for (int64_t x = static_cast<int64_t>(cx - rad) - 2; x <= static_cast<int64_t>(cx + rad) + 2; ++x) {
                double d = std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx);
                if (std::abs(d - rad) <= thickness) set(y, x, r, g, b);
            }
    }

    void hline(int64_t y, int64_t x0, int64_t x1, float r, float g, float b) {
        for (int64_t x = x0; x <= x1; ++x) set(y, x, r, g, b);
    }
};

}  // namespace

Tensor<float> render_face(const FaceAttributes& a, uint64_t seed, int64_t size) {
    check_arg(size >= 32, "render_face: size too small");
    RngStream rng(derive_seed(seed, "face-render"));
    Tensor<float> img(Shape{3, size, size});
    Canvas cv{img, size};
    double s = static_cast<double>(size) / 64.0;  // geometry is laid out on a 64x64 grid

    // pastel background
    float bg_r = static_cast<float>(rng.uniform(0.55, 0.85));
    float bg_g = static_cast<float>(rng.uniform(0.60, 0.90));
    float bg_b = static_cast<float>(rng.uniform(0.65, 0.95));
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) cv.set(y, x, bg_r, bg_g, bg_b);

    // skin and hair palette
    double tone = rng.uniform(0.0, 1.0);
    float sk_r = static_cast<float>(0.62 + 0.25 * tone);
    float sk_g = static_cast<float>(0.46 + 0.26 * tone);
    float sk_b = static_cast<float>(0.36 + 0.24 * tone);
    float hr_r, hr_g, hr_b;
    if (a.dark_hair) {
        hr_r = static_cast<float>(rng.uniform(0.05, 0.18));
        hr_g = static_cast<float>(rng.uniform(0.04, 0.15));
        hr_b = static_cast<float>(rng.uniform(0.04, 0.14));
    } else {
        hr_r = static_cast<float>(rng.uniform(0.55, 0.85));
        hr_g = static_cast<float>(rng.uniform(0.42, 0.70));
        hr_b = static_cast<float>(rng.uniform(0.20, 0.40));
    }

    double face_rx = (a.male ? 15.0 : 13.0) * s;
    double face_ry = 18.0 * s;
    double cx = 32.0 * s, cy = 34.0 * s;

    // long hair behind the face for women
    if (!a.male) cv.fill_ellipse(cy + 6.0 * s, cx, 18.0 * s, 17.0 * s, hr_r, hr_g, hr_b);

    cv.fill_ellipse(cy, cx, face_ry, face_rx, sk_r, sk_g, sk_b);

    // hair cap on top
    cv.fill_ellipse(cy - 12.0 * s, cx, 8.0 * s, face_rx * 0.98, hr_r, hr_g, hr_b);

    // beard band across the chin
    if (a.beard && a.male) {
        for (int64_t y = static_cast<int64_t>(cy + 6.0 * s); y <= static_cast<int64_t>(cy + face_ry); ++y)
            for (int64_t x = 0; x < size; ++x) {
                double dy = (static_cast<double>(y) - cy) / face_ry;
                double dx = (static_cast<double>(x) - cx) / face_rx;
                if (dy * dy + dx * dx <= 0.98) cv.set(y, x, hr_r * 0.8f, hr_g * 0.8f, hr_b * 0.8f);
            }
    }

    // eyes
    double ey = cy - 5.0 * s;
    for (double ex : {cx - 6.0 * s, cx + 6.0 * s}) {
        cv.fill_ellipse(ey, ex, 2.2 * s, 2.8 * s, 0.97f, 0.97f, 0.97f);
        cv.fill_ellipse(ey, ex, 1.2 * s, 1.2 * s, 0.10f, 0.08f, 0.08f);
    }
    // brows
    for (double ex : {cx - 6.0 * s, cx + 6.0 * s}) {
        cv.hline(static_cast<int64_t>(ey - 4.0 * s), static_cast<int64_t>(ex - 3.0 * s),
                 static_cast<int64_t>(ex + 3.0 * s), hr_r * 0.7f, hr_g * 0.7f, hr_b * 0.7f);
    }

    // nose
    for (int64_t y = static_cast<int64_t>(cy); y <= static_cast<int64_t>(cy + 4.0 * s); ++y)
        cv.set(y, static_cast<int64_t>(cx), sk_r * 0.82f, sk_g * 0.82f, sk_b * 0.82f);

    // mouth: arc when smiling, straight line otherwise
    double my = cy + 9.0 * s;
    double mw = 6.0 * s;
    for (double x = -mw; x <= mw; x += 0.5) {
        double y = a.smiling ? my + 2.5 * s * (1.0 - (x * x) / (mw * mw)) - 1.5 * s : my;
        cv.set(static_cast<int64_t>(std::lround(y)), static_cast<int64_t>(std::lround(cx + x)), 0.55f,
               0.15f, 0.15f);
        cv.set(static_cast<int64_t>(std::lround(y)) + 1, static_cast<int64_t>(std::lround(cx + x)), 0.55f,
               0.15f, 0.15f);
    }

    // glasses on top of everything near the eyes
    if (a.glasses) {
        for (double ex : {cx - 6.0 * s, cx + 6.0 * s})
            cv.ring(ey, ex, 4.2 * s, 0.7 * s, 0.15f, 0.15f, 0.18f);
        cv.hline(static_cast<int64_t>(ey), static_cast<int64_t>(cx - 2.0 * s),
                 static_cast<int64_t>(cx + 2.0 * s), 0.15f, 0.15f, 0.18f);
    }

    // mild sensor noise so images are not piecewise constant
    for (auto& v : img.vec()) {
        v += static_cast<float>(rng.uniform(-0.015, 0.015));
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    }
    return img;
}

void generate_dataset(const std::string& root, int64_t count, uint64_t seed, int64_t size) {
    check_arg(count > 0, "generate_dataset: count must be positive");
    fs::create_directories(fs::path(root) / "images");
    RngStream attr_rng(derive_seed(seed, "dataset-attrs"));

    json manifest;
    manifest["seed"] = seed;
    manifest["image_size"] = size;
    manifest["images"] = json::array();
    for (int64_t i = 0; i < count; ++i) {
        FaceAttributes a = random_attributes(attr_rng);
        char name[32];
        std::snprintf(name, sizeof(name), "images/%05d.png", static_cast<int>(i));
        Tensor<float> img = render_face(a, derive_seed(seed, "face-" + std::to_string(i)), size);
        write_png((fs::path(root) / name).string(), img);
        manifest["images"].push_back({{"file", name},
                                      {"male", a.male},
                                      {"smiling", a.smiling},
                                      {"glasses", a.glasses},
                                      {"beard", a.beard},
                                      {"dark_hair", a.dark_hair}});
    }
    std::ofstream out(fs::path(root) / "attributes.json");
    check_data(out.good(), "cannot write attributes.json under " + root);
    out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& root) {
    std::ifstream in(fs::path(root) / "attributes.json");
    check_data(in.good(), "missing attributes.json under " + root);
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::data, std::string("bad attributes.json: ") + e.what());
    }
    check_data(manifest.contains("images") && manifest["images"].is_array(),
               "attributes.json has no image list");
    Dataset ds;
    ds.root = root;
    for (const auto& item : manifest["images"]) {
        DatasetItem di;
        di.file = item.at("file").get<std::string>();
        di.attrs.male = item.at("male").get<bool>();
        di.attrs.smiling = item.at("smiling").get<bool>();
        di.attrs.glasses = item.at("glasses").get<bool>();
        di.attrs.beard = item.at("beard").get<bool>();
        di.attrs.dark_hair = item.at("dark_hair").get<bool>();
        ds.items.push_back(std::move(di));
    }
    check_data(!ds.items.empty(), "dataset is empty: " + root);
    return ds;
}

Tensor<float> Dataset::load_image(size_t index) const {
    check_arg(index < items.size(), "dataset index out of range");
    return load_png((fs::path(root) / items[index].file).string());
}

}  // namespace fasdiff::media
