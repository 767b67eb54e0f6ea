#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "models/autoencoder.hpp"
#include "models/classifier.hpp"
#include "models/compressor.hpp"
#include "models/fcg.hpp"
#include "models/feature_net.hpp"
#include "models/hlfe.hpp"
#include "models/unet.hpp"

using fasdiff::RngStream;
using fasdiff::Shape;
using fasdiff::Tensor;
namespace ag = fasdiff::ag;
namespace nn = fasdiff::nn;
namespace models = fasdiff::models;
namespace media = fasdiff::media;

namespace {

models::AutoencoderConfig micro_ae() {
    models::AutoencoderConfig c;
    c.w1 = 8;
    c.w2 = 16;
    c.w3 = 16;
    return c;
}

models::UNetConfig micro_unet() {
    models::UNetConfig c;
    c.w0 = 8;
    c.w1 = 16;
    c.w2 = 16;
    c.cond_dim = 8;
    return c;
}

Tensor<float> rand_batch(Shape s, uint64_t seed, double lo = 0.0, double hi = 1.0) {
    RngStream rng(seed);
    Tensor<float> t(std::move(s));
    rng.fill_uniform(t, lo, hi);
    return t;
}

}  // namespace

TEST_CASE("autoencoder shape contract and output range") {
    nn::ParamStore<float> ps;
    RngStream rng(51);
    models::Autoencoder<float> ae(ps, "ae.", micro_ae(), rng);

    auto x = ag::constant(rand_batch({2, 3, 64, 64}, 1));
    auto enc = ae.encode(x);
    CHECK(enc.z.shape() == Shape{2, 4, 8, 8});
    CHECK(enc.e1.shape() == Shape{2, 8, 32, 32});
    CHECK(enc.e2.shape() == Shape{2, 16, 16, 16});

    auto rec = ae.decode(enc.z);
    CHECK(rec.shape() == Shape{2, 3, 64, 64});
    for (int64_t i = 0; i < rec.numel(); ++i) {
        CHECK(rec.value()[i] >= 0.0f);
        CHECK(rec.value()[i] <= 1.0f);
    }
    CHECK_THROWS_AS(ae.encode(ag::constant(rand_batch({1, 3, 63, 64}, 2))), fasdiff::Error);
}

TEST_CASE("autoencoder learns on a tiny batch") {
    nn::ParamStore<float> ps;
    RngStream rng(52);
    models::Autoencoder<float> ae(ps, "ae.", micro_ae(), rng);
    auto x = rand_batch({2, 3, 64, 64}, 3);
    nn::Adam<float> opt(3e-3);
    auto names = ps.names("ae.");
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 20; ++step) {
        ps.zero_grad();
        auto rec = ae.decode(ae.encode(ag::constant(x)).z);
        auto loss = ag::mse(rec, ag::constant(x));
        ag::backward(loss);
        opt.step(ps, names);
        if (step == 0) first = loss.value()[0];
        last = loss.value()[0];
    }
    CHECK(last < first * 0.9);
}

TEST_CASE("compressor shape contract and quantization modes") {
    nn::ParamStore<float> ps;
    RngStream rng(53);
    models::CompressorConfig cc;
    cc.e1_channels = 8;
    cc.e2_channels = 16;
    cc.width = 16;
    models::Compressor<float> comp(ps, "h.", cc, rng);

    auto z = ag::constant(rand_batch({2, 4, 8, 8}, 4, -2.0, 2.0));
    auto e1 = ag::constant(rand_batch({2, 8, 32, 32}, 5));
    auto e2 = ag::constant(rand_batch({2, 16, 16, 16}, 6));
    auto code = comp.analyze(z, e1, e2);
    CHECK(code.shape() == Shape{2, 8, 8, 8});

    auto hard = comp.quantize_ste(code);
    for (int64_t i = 0; i < hard.numel(); ++i)
        CHECK(hard.value()[i] == std::round(code.value()[i]));

    RngStream nrng(7);
    auto noisy = comp.quantize_noise(code, nrng);
    for (int64_t i = 0; i < noisy.numel(); ++i)
        CHECK(std::abs(noisy.value()[i] - code.value()[i]) <= 0.5f);

    auto zr = comp.synthesize(hard);
    CHECK(zr.shape() == z.shape());

    auto bits = comp.rate_bits(noisy);
    CHECK(bits.numel() == 1);
    CHECK(bits.value()[0] > 0.0f);

    auto tables = comp.freq_tables();
    CHECK(tables.size() == 8);
    for (const auto& t : tables) {
        uint32_t sum = 0;
        for (auto f : t) sum += f;
        CHECK(sum == fasdiff::codec::kFreqTotal);
    }
}

TEST_CASE("variance weights: known two-channel example") {
    // channel 0 holds {0,2} repeated (population variance 1), channel 1
    // holds {0,4} repeated (population variance 4); inverse-variance
    // weights normalized to mean one give 1.6 and 0.4
    Tensor<double> y(Shape{1, 2, 2, 2});
    y.at4(0, 0, 0, 0) = 0.0;
    y.at4(0, 0, 0, 1) = 2.0;
    y.at4(0, 0, 1, 0) = 0.0;
    y.at4(0, 0, 1, 1) = 2.0;
    y.at4(0, 1, 0, 0) = 0.0;
    y.at4(0, 1, 0, 1) = 4.0;
    y.at4(0, 1, 1, 0) = 0.0;
    y.at4(0, 1, 1, 1) = 4.0;
    auto w = models::variance_weight_map(y);
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(w[i] == doctest::Approx(1.6).epsilon(1e-5));
        CHECK(w[4 + i] == doctest::Approx(0.4).epsilon(1e-5));
    }
    // weights average to one over the sample regardless of scale
    double mean = 0.0;
    for (int64_t i = 0; i < w.numel(); ++i) mean += w[i];
    CHECK(mean / static_cast<double>(w.numel()) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("weighted latent distance vanishes only at equality") {
    auto y = rand_batch({1, 4, 8, 8}, 8, -1.0, 1.0);
    Tensor<float> wmap = models::variance_weight_map(y);
    auto vy = ag::constant(y);
    auto d0 = models::weighted_latent_distance(vy, vy, wmap);
    CHECK(d0.value()[0] == 0.0f);
    auto z = rand_batch({1, 4, 8, 8}, 9, -1.0, 1.0);
    auto d1 = models::weighted_latent_distance(vy, ag::constant(z), wmap);
    CHECK(d1.value()[0] > 0.0f);
    auto d1_l1 = models::weighted_latent_distance(vy, ag::constant(z), wmap, models::LatentDistance::l1);
    CHECK(d1_l1.value()[0] > 0.0f);
}

TEST_CASE("classifier shapes and learnability") {
    nn::ParamStore<float> ps;
    RngStream rng(54);
    models::ClassifierConfig cc;
    models::Classifier<float> cls(ps, "cls.", cc, rng);

    // eight rendered faces with alternating gender
    std::vector<Tensor<float>> imgs;
    Tensor<float> batch(Shape{8, 3, 64, 64});
    Tensor<float> targets(Shape{8, 5});
    RngStream arng(99);
    for (int i = 0; i < 8; ++i) {
        media::FaceAttributes a;
        a.male = (i % 2) == 1;
        a.smiling = (i % 4) < 2;
        auto img = media::render_face(a, 1000 + static_cast<uint64_t>(i));
        std::copy(img.vec().begin(), img.vec().end(), batch.data() + i * 3 * 64 * 64);
        auto t = models::attribute_targets(a);
        for (int j = 0; j < 5; ++j) targets.at2(i, j) = t[static_cast<size_t>(j)];
    }

    auto feats = cls.features(ag::constant(batch));
    CHECK(feats.shape() == Shape{8, 64});
    auto lg = cls.logits(ag::constant(batch));
    CHECK(lg.shape() == Shape{8, 5});

    nn::Adam<float> opt(3e-3);
    auto names = ps.names("cls.");
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 80; ++step) {
        ps.zero_grad();
        auto loss = models::bce_with_logits(cls.logits(ag::constant(batch)), targets);
        ag::backward(loss);
        opt.step(ps, names);
        if (step == 0) first = loss.value()[0];
        last = loss.value()[0];
    }
    CHECK(last < first * 0.8);
    auto final_logits = cls.logits(ag::constant(batch));
    CHECK(models::attribute_accuracy(final_logits.value(), targets, 0) >= 0.75);
}

TEST_CASE("frozen feature nets are deterministic and discriminative") {
    models::FrozenFeatureNet<float> f1(models::kLowLevelFeatureSeed);
    models::FrozenFeatureNet<float> f2(models::kLowLevelFeatureSeed);
    CHECK(f1.digest() == f2.digest());
    models::FrozenFeatureNet<float> g(models::kPerceptualFeatureSeed);
    CHECK(f1.digest() != g.digest());

    auto a = ag::constant(rand_batch({1, 3, 64, 64}, 10));
    auto b = ag::constant(rand_batch({1, 3, 64, 64}, 11));
    auto e1 = f1.embed(a);
    CHECK(e1.shape() == Shape{1, 128});

    CHECK(models::perceptual_distance(f1, a, a).value()[0] == 0.0f);
    CHECK(models::perceptual_distance(f1, a, b).value()[0] > 0.0f);
    CHECK(models::embedding_distance(f1, a, a).value()[0] == doctest::Approx(0.0).epsilon(2e-6));
    CHECK(models::embedding_distance(f1, a, b).value()[0] > 0.0f);
}

TEST_CASE("vocabulary and tokenizer") {
    models::Vocabulary v;
    auto ids = v.tokenize("a smiling woman with glasses", 8);
    REQUIRE(ids.size() == 8);
    CHECK(ids[0] == v.id_of("a"));
    CHECK(ids[1] == v.id_of("smiling"));
    CHECK(ids[4] == v.id_of("glasses"));
    CHECK(ids[5] == v.pad_id());
    CHECK(ids[7] == v.pad_id());

    auto unk = v.tokenize("A SPARKLING unicorn", 4);
    CHECK(unk[0] == v.id_of("a"));
    CHECK(unk[1] == v.unk_id());
    CHECK(unk[2] == v.unk_id());
    CHECK(unk[3] == v.pad_id());

    // truncation
    auto tr = v.tokenize("a man with glasses and beard and dark hair", 3);
    REQUIRE(tr.size() == 3);
    CHECK(tr[2] == v.id_of("with"));
}

TEST_CASE("text encoder and face projector produce conditioning tokens") {
    nn::ParamStore<float> ps;
    RngStream rng(56);
    models::HlfeConfig hc;
    hc.cond_dim = 8;
    models::TextEncoder<float> te(ps, "te.", hc, rng);
    auto tok = te.encode({"a smiling woman", "a man with beard"});
    CHECK(tok.shape() == Shape{2, 8, 8});
    auto tok2 = te.encode({"a smiling woman", "a man with beard"});
    for (int64_t i = 0; i < tok.numel(); ++i) CHECK(tok.value()[i] == tok2.value()[i]);
    // different captions change the tokens
    auto tok3 = te.encode({"a woman", "a man with beard"});
    double diff = 0.0;
    for (int64_t i = 0; i < tok.numel(); ++i) diff += std::abs(tok.value()[i] - tok3.value()[i]);
    CHECK(diff > 1e-3);

    models::FaceProjector<float> proj(ps, "proj.", hc, rng);
    auto f = proj.project(ag::constant(rand_batch({2, 64}, 12)));
    CHECK(f.shape() == Shape{2, 4, 8});
}

TEST_CASE("decoupled attention identities") {
    RngStream rng(57);
    Tensor<double> qt(Shape{1, 4, 8}), kt(Shape{1, 3, 8}), vt(Shape{1, 3, 8});
    rng.fill_normal(qt);
    rng.fill_normal(kt);
    rng.fill_normal(vt);
    auto q = ag::constant(qt), k = ag::constant(kt), v = ag::constant(vt);

    auto text_only = models::attention(q, k, v);
    // face branch identical to the text branch at mu=1 doubles the output
    auto both = models::decoupled_attention(q, k, v, std::optional(k), std::optional(v), 1.0);
    for (int64_t i = 0; i < text_only.numel(); ++i)
        CHECK(both.value()[i] == 2.0 * text_only.value()[i]);

    // mu=0 or missing face tokens reduce to the text branch exactly
    auto mu0 = models::decoupled_attention(q, k, v, std::optional(k), std::optional(v), 0.0);
    auto nof = models::decoupled_attention<double>(q, k, v, std::nullopt, std::nullopt, 1.0);
    for (int64_t i = 0; i < text_only.numel(); ++i) {
        CHECK(mu0.value()[i] == text_only.value()[i]);
        CHECK(nof.value()[i] == text_only.value()[i]);
    }

    // attention rows are convex combinations of value rows: with constant
    // values the output is that constant
    Tensor<double> vc(Shape{1, 3, 8}, 2.5);
    auto constant_v = models::attention(q, k, ag::constant(vc));
    for (int64_t i = 0; i < constant_v.numel(); ++i)
        CHECK(constant_v.value()[i] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("cross attention block: face projections start as text copies, output affine in mu") {
    nn::ParamStore<float> ps;
    RngStream rng(58);
    models::CrossAttnBlock<float> blk(ps, "unet.dec1.xattn", 16, 8, rng);
    CHECK(ps.get("unet.dec1.xattn.kf.w").value().vec() == ps.get("unet.dec1.xattn.kt.w").value().vec());
    CHECK(ps.get("unet.dec1.xattn.vf.w").value().vec() == ps.get("unet.dec1.xattn.vt.w").value().vec());

    // specialize the face branch so the two branches differ
    RngStream wrng(59);
    wrng.fill_normal(ps.get("unet.dec1.xattn.kf.w").value(), 0.3);
    wrng.fill_normal(ps.get("unet.dec1.xattn.vf.w").value(), 0.3);

    auto h = ag::constant(rand_batch({2, 16, 4, 4}, 13, -1.0, 1.0));
    auto text = ag::constant(rand_batch({2, 8, 8}, 14, -1.0, 1.0));
    auto face = ag::constant(rand_batch({2, 4, 8}, 15, -1.0, 1.0));

    auto at0 = blk(h, text, std::optional(face), 0.0);
    auto at1 = blk(h, text, std::optional(face), 1.0);
    auto at2 = blk(h, text, std::optional(face), 2.0);
    for (int64_t i = 0; i < at0.numel(); ++i) {
        float lhs = at2.value()[i] - at0.value()[i];
        float rhs = 2.0f * (at1.value()[i] - at0.value()[i]);
        CHECK(lhs == doctest::Approx(rhs).epsilon(5e-3));
    }
}

TEST_CASE("denoiser: shape, determinism, zero-initialized control is a no-op") {
    nn::ParamStore<float> ps;
    RngStream rng(60);
    auto cfg = micro_unet();
    models::UNet<float> unet(ps, "unet.", cfg, rng);
    models::ControlModule<float> cm(ps, "cm.", cfg, rng, "unet.");

    // the control encoder starts as an exact copy of the denoiser encoder
    for (const auto& name : ps.names("unet.enc.")) {
        auto twin = "cm." + name.substr(5);
        REQUIRE(ps.has(twin));
        CHECK(ps.get(twin).value().vec() == ps.get(name).value().vec());
    }

    auto zt = ag::constant(rand_batch({2, 4, 8, 8}, 16, -1.0, 1.0));
    auto zc = ag::constant(rand_batch({2, 4, 8, 8}, 17, -1.0, 1.0));
    auto temb = unet.time_embedding({500, 500});
    models::Conditioning<float> cond;
    cond.text_tokens = ag::constant(rand_batch({2, 8, 8}, 18, -1.0, 1.0));

    auto eps_plain = unet.forward(zt, temb, cond, std::nullopt);
    CHECK(eps_plain.shape() == zt.shape());

    auto eps_again = unet.forward(zt, temb, cond, std::nullopt);
    for (int64_t i = 0; i < eps_plain.numel(); ++i) CHECK(eps_plain.value()[i] == eps_again.value()[i]);

    auto ctrl = cm.forward(zc, temb);
    auto eps_ctrl = unet.forward(zt, temb, cond, std::optional(ctrl));
    for (int64_t i = 0; i < eps_plain.numel(); ++i) CHECK(eps_ctrl.value()[i] == eps_plain.value()[i]);

    // once the projections move off zero the branch becomes active
    RngStream wrng(61);
    wrng.fill_normal(ps.get("cm.zero1.w").value(), 0.1);
    auto ctrl2 = cm.forward(zc, temb);
    auto eps_ctrl2 = unet.forward(zt, temb, cond, std::optional(ctrl2));
    double diff = 0.0;
    for (int64_t i = 0; i < eps_plain.numel(); ++i)
        diff += std::abs(eps_ctrl2.value()[i] - eps_plain.value()[i]);
    CHECK(diff > 1e-3);
}

TEST_CASE("denoiser: skip filtering with unit gain matches the disabled path") {
    auto build = [](models::SpectralSkipConfig sc, uint64_t seed) {
        auto cfg = micro_unet();
        cfg.spectral = sc;
        auto ps = std::make_shared<nn::ParamStore<float>>();
        RngStream rng(seed);
        auto unet = std::make_shared<models::UNet<float>>(*ps, "unet.", cfg, rng);
        return std::make_pair(ps, unet);
    };

    models::SpectralSkipConfig off;
    off.enabled = false;
    models::SpectralSkipConfig unit;
    unit.enabled = true;
    unit.gain = 1.0;
    models::SpectralSkipConfig damp;  // defaults: gain 0.6, radius 0.5

    auto [ps_off, unet_off] = build(off, 62);
    auto [ps_unit, unet_unit] = build(unit, 62);
    auto [ps_damp, unet_damp] = build(damp, 62);

    auto zt = ag::constant(rand_batch({1, 4, 8, 8}, 19, -1.0, 1.0));
    models::Conditioning<float> cond;
    cond.text_tokens = ag::constant(rand_batch({1, 8, 8}, 20, -1.0, 1.0));

    auto a = unet_off->forward(zt, unet_off->time_embedding({100}), cond, std::nullopt);
    auto b = unet_unit->forward(zt, unet_unit->time_embedding({100}), cond, std::nullopt);
    auto c = unet_damp->forward(zt, unet_damp->time_embedding({100}), cond, std::nullopt);

    double diff_unit = 0.0, diff_damp = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        diff_unit = std::max(diff_unit, static_cast<double>(std::abs(a.value()[i] - b.value()[i])));
        diff_damp += std::abs(a.value()[i] - c.value()[i]);
    }
    CHECK(diff_unit < 1e-4);  // identity filter, up to float round trip
    CHECK(diff_damp > 1e-3);  // attenuation actually does something
}

TEST_CASE("denoiser gradients reach every trainable group") {
    nn::ParamStore<float> ps;
    RngStream rng(63);
    auto cfg = micro_unet();
    models::UNet<float> unet(ps, "unet.", cfg, rng);
    models::ControlModule<float> cm(ps, "cm.", cfg, rng, "unet.");
    // move the zero projections off their init so gradients flow into cm
    RngStream wrng(64);
    wrng.fill_normal(ps.get("cm.zero0.w").value(), 0.05);
    wrng.fill_normal(ps.get("cm.zero1.w").value(), 0.05);
    wrng.fill_normal(ps.get("cm.zero2.w").value(), 0.05);
    // same for the zero-initialized attention output projections, which
    // otherwise block gradients to q/k/v on the very first step
    wrng.fill_normal(ps.get("unet.dec0.xattn.out.w").value(), 0.05);
    wrng.fill_normal(ps.get("unet.dec1.xattn.out.w").value(), 0.05);

    auto zt = ag::constant(rand_batch({1, 4, 8, 8}, 21, -1.0, 1.0));
    auto zc = ag::constant(rand_batch({1, 4, 8, 8}, 22, -1.0, 1.0));
    models::Conditioning<float> cond;
    cond.text_tokens = ag::constant(rand_batch({1, 8, 8}, 23, -1.0, 1.0));
    cond.face_tokens = ag::constant(rand_batch({1, 4, 8}, 24, -1.0, 1.0));

    auto temb = unet.time_embedding({250});
    auto eps = unet.forward(zt, temb, cond, std::optional(cm.forward(zc, temb)));
    ag::backward(ag::mean_all(ag::square(eps)));

    auto grad_norm = [&](const std::string& name) {
        auto g = ps.get(name).grad();
        if (g.numel() == 0) return 0.0;
        double s = 0.0;
        for (int64_t i = 0; i < g.numel(); ++i) s += std::abs(static_cast<double>(g[i]));
        return s;
    };
    CHECK(grad_norm("unet.enc.conv_in.w") > 0.0);
    CHECK(grad_norm("unet.mid.rb1.conv1.w") > 0.0);
    CHECK(grad_norm("unet.dec0.xattn.kt.w") > 0.0);
    CHECK(grad_norm("unet.dec0.xattn.kf.w") > 0.0);
    CHECK(grad_norm("unet.temb.l1.w") > 0.0);
    CHECK(grad_norm("cm.enc.conv_in.w") > 0.0);
    CHECK(grad_norm("cm.zero2.w") > 0.0);
}
