#include "pipeline/codec.hpp"

#include <fstream>
#include <sstream>

#include "codec/entropy.hpp"
#include "media/image.hpp"

namespace fasdiff::pipeline {

namespace {

using ag::Var;

Var<float> as_batch1(const Tensor<float>& rgb) {
    check_arg(rgb.shape().size() == 3 && rgb.shape()[0] == 3, "expected an rgb image tensor [3,H,W]");
    Tensor<float> t(Shape{1, 3, rgb.shape()[1], rgb.shape()[2]});
    std::copy(rgb.vec().begin(), rgb.vec().end(), t.vec().begin());
    return ag::constant(std::move(t));
}

Tensor<float> drop_batch(const Tensor<float>& t) {
    Tensor<float> out(Shape{t.shape()[1], t.shape()[2], t.shape()[3]});
    std::copy(t.vec().begin(), t.vec().end(), out.vec().begin());
    return out;
}

void check_caption_in_vocabulary(const std::string& caption) {
    models::Vocabulary vocab;
    std::istringstream iss(caption);
    std::string word;
    while (iss >> word) {
        std::string lower = word;
        for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        check_arg(vocab.id_of(lower) != vocab.unk_id() || lower == "<unk>",
                  "caption word '" + word + "' is outside the model vocabulary");
    }
}

models::Conditioning<float> decode_conditioning(const Bundle& b, const std::string& caption,
                                                const Var<float>& preliminary, double mu) {
    models::Conditioning<float> cond;
    if (b.cfg.train.fused_conditioning) {
        cond.text_tokens = b.te.encode({caption});
        cond.face_tokens = b.proj.project(b.cls.features(preliminary));
        cond.mu = mu;
    } else {
        cond.text_tokens = b.te.encode({std::string(media::kNeutralCaption)});
        cond.mu = 0.0;
    }
    return cond;
}

}  // namespace

ModelHandle load_model(const std::string& ckpt_path) {
    check_data(checkpoint_exists(ckpt_path), "checkpoint not found: " + ckpt_path);
    ModelHandle h;
    auto meta = peek_checkpoint(ckpt_path);
    auto cfg = config_from_json(meta.config);
    h.meta = std::move(meta);
    h.bundle = std::make_unique<Bundle>(
        cfg, [&](nn::ParamStore<float>& ps) { load_checkpoint(ckpt_path, ps, nullptr); });
    h.bundle->ps.set_trainable("", false);
    return h;
}

EncodeResult encode_image(const Bundle& b, const Tensor<float>& rgb, const std::string& caption) {
    std::string cap = caption.empty() ? media::kNeutralCaption : caption;
    check_caption_in_vocabulary(cap);

    auto x = as_batch1(rgb);
    auto enc = b.ae.encode(x);
    auto code = b.comp.analyze(enc.z, enc.e1, enc.e2).value();
    int64_t C = code.shape()[1], ch = code.shape()[2], cw = code.shape()[3];

    std::vector<std::vector<int>> symbols(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c) {
        auto& col = symbols[static_cast<size_t>(c)];
        col.reserve(static_cast<size_t>(ch * cw));
        const float* p = code.data() + c * ch * cw;
        for (int64_t i = 0; i < ch * cw; ++i) col.push_back(codec::value_to_symbol(p[i]));
    }

    auto tables = b.comp.freq_tables();
    auto payload = codec::encode_symbols(tables, symbols);

    codec::StreamHeader header;
    header.img_w = static_cast<uint16_t>(rgb.shape()[2]);
    header.img_h = static_cast<uint16_t>(rgb.shape()[1]);
    header.code_channels = static_cast<uint8_t>(C);
    header.code_h = static_cast<uint16_t>(ch);
    header.code_w = static_cast<uint16_t>(cw);
    header.lambda_id = static_cast<uint8_t>(lambda_index(b.cfg.train.lambda_rate));
    header.caption = cap;

    EncodeResult out;
    out.bytes = codec::write_stream(header, payload, codec::tables_crc(tables));
    out.bpp = 8.0 * static_cast<double>(out.bytes.size()) /
              static_cast<double>(rgb.shape()[1] * rgb.shape()[2]);
    return out;
}

DecodeResult decode_stream(const Bundle& b, const std::vector<uint8_t>& bytes, int64_t steps,
                           uint64_t seed, double mu) {
    auto tables = b.comp.freq_tables();
    auto parsed = codec::parse_stream(bytes, codec::tables_crc(tables));
    const auto& h = parsed.header;

    check_data(h.lambda_id == static_cast<uint8_t>(lambda_index(b.cfg.train.lambda_rate)),
               "stream was encoded at a different ladder point than this checkpoint");
    check_data(h.code_channels == static_cast<uint8_t>(b.comp.config().code_channels),
               "stream code layout does not match the checkpoint");
    check_data(h.img_h == h.code_h * 8 && h.img_w == h.code_w * 8,
               "stream header image/code dimensions are inconsistent");

    size_t per_channel = static_cast<size_t>(h.code_h) * h.code_w;
    auto symbols = codec::decode_symbols(tables, parsed.payload, per_channel);

    Tensor<float> code(Shape{1, static_cast<int64_t>(h.code_channels), h.code_h, h.code_w});
    for (size_t c = 0; c < symbols.size(); ++c) {
        float* p = code.data() + static_cast<int64_t>(c * per_channel);
        for (size_t i = 0; i < per_channel; ++i)
            p[i] = static_cast<float>(codec::symbol_to_value(symbols[c][i]));
    }

    auto z_y = b.comp.synthesize(ag::constant(std::move(code)));
    auto preliminary = b.ae.decode(z_y);
    auto cond = decode_conditioning(b, h.caption, preliminary, mu);

    // start from the decoded latent pushed to the top of the noise schedule,
    // with the noise draw fixed by the stream-level seed
    Tensor<float> eps_t(z_y.shape());
    RngStream rng(derive_seed(seed, "decode"));
    rng.fill_normal(eps_t);
    auto z_start = diffusion::forward_noise(b.sched, z_y, ag::constant(std::move(eps_t)), b.sched.steps());

    auto denoise_at = [&](const Var<float>& z, int64_t t) {
        auto temb = b.unet.time_embedding({t});
        return b.unet.forward(z, temb, cond, b.cm.forward(z_y, temb));
    };
    auto y_hat = diffusion::ddim_sample<float>(b.sched, denoise_at, z_start, steps);

    DecodeResult out;
    out.image = drop_batch(b.ae.decode(y_hat).value());
    out.preliminary = drop_batch(preliminary.value());
    out.caption = h.caption;
    return out;
}

EncodeResult encode_file(const Bundle& b, const Config& cfg, const std::string& image_path,
                         const std::string& out_path, const std::string& caption) {
    auto rgb = media::load_png(image_path);
    auto res = encode_image(b, rgb, caption);
    write_binary_file(out_path, res.bytes);
    write_sidecar(out_path, cfg,
                  {{"kind", "bitstream"}, {"source", image_path}, {"bpp", res.bpp}});
    return res;
}

DecodeResult decode_file(const Bundle& b, const std::string& stream_path,
                         const std::string& out_image_path, const std::string& preliminary_path,
                         int64_t steps, uint64_t seed, double mu) {
    auto res = decode_stream(b, read_binary_file(stream_path), steps, seed, mu);
    paths::ensure_parent_dir(out_image_path);
    media::write_png(out_image_path, res.image);
    if (!preliminary_path.empty()) {
        paths::ensure_parent_dir(preliminary_path);
        media::write_png(preliminary_path, res.preliminary);
    }
    return res;
}

std::vector<uint8_t> read_binary_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check_data(is.good(), "cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_binary_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    paths::ensure_parent_dir(path);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    check_data(os.good(), "cannot write " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    check_data(os.good(), "short write to " + path);
}

}  // namespace fasdiff::pipeline
