#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "media/dataset.hpp"
#include "media/image.hpp"
#include "media/plot.hpp"

using fasdiff::RngStream;
using fasdiff::Shape;
using fasdiff::Tensor;
namespace media = fasdiff::media;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("fasdiff_test_" + tag + "_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("png round trip preserves 8-bit pixel values") {
    TempDir tmp("png");
    RngStream rng(41);
    Tensor<float> img(Shape{3, 16, 20});
    // snap to representable 8-bit levels so the round trip is exact
    for (auto& v : img.vec())
        v = static_cast<float>(rng.uniform_int(0, 255)) / 255.0f;

    auto file = (tmp.path / "x.png").string();
    media::write_png(file, img);
    auto back = media::load_png(file);
    REQUIRE(back.shape() == img.shape());
    for (int64_t i = 0; i < img.numel(); ++i) CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-6));
}

TEST_CASE("png loader rejects garbage") {
    TempDir tmp("badpng");
    auto file = (tmp.path / "junk.png").string();
    FILE* f = fopen(file.c_str(), "wb");
    fwrite("this is not a png", 1, 17, f);
    fclose(f);
    CHECK_THROWS_AS(media::load_png(file), fasdiff::Error);
    CHECK_THROWS_AS(media::load_png((tmp.path / "missing.png").string()), fasdiff::Error);
}

TEST_CASE("psnr closed-form oracle") {
    // a constant offset of 0.5 everywhere gives mse 0.25 -> 6.0206 dB
    Tensor<float> a(Shape{3, 8, 8}, 0.25f);
    Tensor<float> b(Shape{3, 8, 8}, 0.75f);
    CHECK(media::psnr(a, b) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-9));
    CHECK(std::isinf(media::psnr(a, a)));
}

TEST_CASE("captions follow the attribute template") {
    media::FaceAttributes a;
    CHECK(media::caption_for(a) == "a woman");
    a.smiling = true;
    CHECK(media::caption_for(a) == "a smiling woman");
    a.male = true;
    a.glasses = true;
    CHECK(media::caption_for(a) == "a smiling man with glasses");
    a.beard = true;
    a.dark_hair = true;
    CHECK(media::caption_for(a) == "a smiling man with glasses and beard and dark hair");
    // beard is ignored on female faces
    a.male = false;
    CHECK(media::caption_for(a) == "a smiling woman with glasses and dark hair");
}

TEST_CASE("renderer is deterministic and attribute-sensitive") {
    media::FaceAttributes a;
    a.male = true;
    auto i1 = media::render_face(a, 99);
    auto i2 = media::render_face(a, 99);
    REQUIRE(i1.shape() == Shape{3, 64, 64});
    for (int64_t i = 0; i < i1.numel(); ++i) CHECK(i1[i] == i2[i]);

    auto i3 = media::render_face(a, 100);
    media::FaceAttributes b = a;
    b.glasses = true;
    auto i4 = media::render_face(b, 99);
    double d_seed = 0.0, d_attr = 0.0;
    for (int64_t i = 0; i < i1.numel(); ++i) {
        d_seed += std::abs(i1[i] - i3[i]);
        d_attr += std::abs(i1[i] - i4[i]);
    }
    CHECK(d_seed > 1.0);  // different seed changes the palette
    CHECK(d_attr > 1.0);  // glasses actually draw something
    CHECK(i1.all_finite());
    for (auto v : i1.vec()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("dataset generation and reload") {
    TempDir tmp("dataset");
    media::generate_dataset(tmp.path.string(), 12, 777);
    auto ds = media::load_dataset(tmp.path.string());
    REQUIRE(ds.items.size() == 12);
    auto img = ds.load_image(0);
    CHECK(img.shape() == Shape{3, 64, 64});
    CHECK(!ds.caption(0).empty());

    // regeneration with the same seed reproduces the same labels
    TempDir tmp2("dataset2");
    media::generate_dataset(tmp2.path.string(), 12, 777);
    auto ds2 = media::load_dataset(tmp2.path.string());
    for (size_t i = 0; i < ds.items.size(); ++i) {
        CHECK(ds.items[i].attrs.male == ds2.items[i].attrs.male);
        CHECK(ds.items[i].attrs.smiling == ds2.items[i].attrs.smiling);
        auto a = ds.load_image(i);
        auto b = ds2.load_image(i);
        for (int64_t j = 0; j < a.numel(); ++j) CHECK(a[j] == b[j]);
    }

    CHECK_THROWS_AS(media::load_dataset((tmp.path / "nope").string()), fasdiff::Error);
}

TEST_CASE("plot rasterizer writes a readable png") {
    TempDir tmp("plot");
    media::PlotSeries s1{"ours", {0.1, 0.2, 0.4, 0.8}, {28.0, 30.5, 33.0, 36.0}};
    media::PlotSeries s2{"base", {0.1, 0.2, 0.4, 0.8}, {27.0, 29.0, 31.5, 34.0}};
    auto file = (tmp.path / "rd.png").string();
    media::write_plot_png(file, {s1, s2}, "bpp", "psnr");
    auto img = media::load_png(file);
    CHECK(img.shape()[1] == 400);
    CHECK(img.shape()[2] == 560);
    // something other than the white background got drawn
    int64_t colored = 0;
    for (int64_t y = 0; y < 400; ++y)
        for (int64_t x = 0; x < 560; ++x)
            if (img.at3(0, y, x) < 0.9f || img.at3(1, y, x) < 0.9f) ++colored;
    CHECK(colored > 500);
}
