#include "pipeline/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

namespace fasdiff::pipeline {

namespace {

constexpr char kCkptMagic[4] = {'F', 'S', 'C', 'K'};
constexpr uint32_t kCkptVersion = 1;

// raw little-endian serialization; this is an internal artifact and every
// supported target is little-endian
struct Writer {
    std::vector<uint8_t> bytes;

    void u8(uint8_t v) { bytes.push_back(v); }
    void u16(uint16_t v) { raw(&v, 2); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void i64(int64_t v) { raw(&v, 8); }
    void raw(const void* p, size_t n) {
        const uint8_t* b = static_cast<const uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    void str(const std::string& s) {
        check_arg(s.size() <= 0xFFFF, "checkpoint: string too long");
        u16(static_cast<uint16_t>(s.size()));
        raw(s.data(), s.size());
    }
    void tensor(const std::string& name, const Tensor<float>& t) {
        str(name);
        u8(0);  // dtype f32
        check_arg(t.shape().size() <= 0xFF, "checkpoint: tensor rank too large");
        u8(static_cast<uint8_t>(t.shape().size()));
        for (int64_t d : t.shape()) i64(d);
        raw(t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
    }
};

struct Reader {
    std::vector<uint8_t> bytes;
    size_t pos = 0;

    void need(size_t n) { check_data(pos + n <= bytes.size(), "checkpoint truncated"); }
    uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    uint16_t u16() {
        uint16_t v;
        raw(&v, 2);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, 8);
        return v;
    }
    int64_t i64() {
        int64_t v;
        raw(&v, 8);
        return v;
    }
    void raw(void* p, size_t n) {
        need(n);
        std::memcpy(p, bytes.data() + pos, n);
        pos += n;
    }
    std::string str() {
        uint16_t n = u16();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
    std::pair<std::string, Tensor<float>> tensor() {
        std::string name = str();
        uint8_t dtype = u8();
        check_data(dtype == 0, "checkpoint: unsupported tensor dtype");
        uint8_t ndim = u8();
        Shape shape;
        for (int i = 0; i < ndim; ++i) {
            int64_t d = i64();
            check_data(d > 0 && d < (int64_t(1) << 32), "checkpoint: bad tensor dim");
            shape.push_back(d);
        }
        Tensor<float> t(shape);
        raw(t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
        return {std::move(name), std::move(t)};
    }
};

nlohmann::json meta_to_json(const CheckpointMeta& m) {
    nlohmann::json j;
    j["kind"] = m.kind;
    j["stage"] = m.stage;
    j["seed"] = m.seed;
    j["lambda_rate"] = m.lambda_rate;
    j["variant"] = m.variant;
    j["step"] = m.step;
    j["optimizer_step"] = m.optimizer_step;
    j["rng_state"] = m.rng_state;
    j["recon_psnr_floor"] = m.recon_psnr_floor;
    j["classifier_val_accuracy"] = m.classifier_val_accuracy;
    j["config"] = m.config;
    j["digests"] = m.digests;
    return j;
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
    CheckpointMeta m;
    m.kind = j.value("kind", "");
    m.stage = j.value("stage", int64_t(0));
    m.seed = j.value("seed", uint64_t(0));
    m.lambda_rate = j.value("lambda_rate", 0.0);
    m.variant = j.value("variant", "full");
    m.step = j.value("step", int64_t(0));
    m.optimizer_step = j.value("optimizer_step", int64_t(0));
    m.rng_state = j.value("rng_state", "");
    m.recon_psnr_floor = j.value("recon_psnr_floor", 0.0);
    m.classifier_val_accuracy = j.value("classifier_val_accuracy", 0.0);
    if (j.contains("config")) m.config = j.at("config");
    if (j.contains("digests")) m.digests = j.at("digests");
    return m;
}

Reader read_and_verify(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check_data(is.good(), "cannot open checkpoint " + path);
    Reader r;
    r.bytes.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    check_data(r.bytes.size() >= 12, "checkpoint too short: " + path);
    check_data(std::memcmp(r.bytes.data(), kCkptMagic, 4) == 0, "not a checkpoint file: " + path);

    uint32_t stored_crc;
    std::memcpy(&stored_crc, r.bytes.data() + r.bytes.size() - 4, 4);
    uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, r.bytes.data(), static_cast<uInt>(r.bytes.size() - 4)));
    check_data(crc == stored_crc, "checkpoint crc mismatch (corrupt file): " + path);
    r.bytes.resize(r.bytes.size() - 4);

    r.pos = 4;
    uint32_t version = r.u32();
    check_data(version == kCkptVersion, "unsupported checkpoint version in " + path);
    return r;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const nn::ParamStore<float>& ps, const nn::Adam<float>* opt) {
    Writer w;
    w.raw(kCkptMagic, 4);
    w.u32(kCkptVersion);

    std::string meta_str = meta_to_json(meta).dump();
    w.u64(meta_str.size());
    w.raw(meta_str.data(), meta_str.size());

    const auto& params = ps.all();
    w.u64(params.size());
    for (const auto& [name, var] : params) w.tensor(name, var.value());

    // optimizer moments, first-order then second-order
    auto write_moments = [&w](const std::map<std::string, Tensor<float>>& m) {
        w.u64(m.size());
        for (const auto& [name, t] : m) w.tensor(name, t);
    };
    if (opt != nullptr) {
        auto* mut = const_cast<nn::Adam<float>*>(opt);
        write_moments(mut->moments1());
        write_moments(mut->moments2());
    } else {
        w.u64(0);
        w.u64(0);
    }

    uint32_t crc = static_cast<uint32_t>(::crc32(0L, w.bytes.data(), static_cast<uInt>(w.bytes.size())));
    w.u32(crc);

    std::filesystem::path p(path);
    if (!p.parent_path().empty()) std::filesystem::create_directories(p.parent_path());
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        check_data(os.good(), "cannot write checkpoint " + tmp);
        os.write(reinterpret_cast<const char*>(w.bytes.data()),
                 static_cast<std::streamsize>(w.bytes.size()));
        check_data(os.good(), "write failed for checkpoint " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

CheckpointMeta load_checkpoint(const std::string& path, nn::ParamStore<float>& ps,
                               nn::Adam<float>* opt) {
    Reader r = read_and_verify(path);

    uint64_t meta_len = r.u64();
    r.need(meta_len);
    std::string meta_str(reinterpret_cast<const char*>(r.bytes.data() + r.pos), meta_len);
    r.pos += meta_len;
    CheckpointMeta meta;
    try {
        meta = meta_from_json(nlohmann::json::parse(meta_str));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::data, "checkpoint metadata parse error: " + std::string(e.what()));
    }

    uint64_t n_params = r.u64();
    for (uint64_t i = 0; i < n_params; ++i) {
        auto [name, t] = r.tensor();
        ps.put(name, std::move(t));
    }

    auto read_moments = [&r](std::map<std::string, Tensor<float>>* out) {
        uint64_t n = r.u64();
        for (uint64_t i = 0; i < n; ++i) {
            auto [name, t] = r.tensor();
            if (out != nullptr) out->insert_or_assign(name, std::move(t));
        }
    };
    if (opt != nullptr) {
        opt->moments1().clear();
        opt->moments2().clear();
        read_moments(&opt->moments1());
        read_moments(&opt->moments2());
        opt->set_step_count(meta.optimizer_step);
    } else {
        read_moments(nullptr);
        read_moments(nullptr);
    }
    return meta;
}

CheckpointMeta peek_checkpoint(const std::string& path) {
    Reader r = read_and_verify(path);
    uint64_t meta_len = r.u64();
    r.need(meta_len);
    std::string meta_str(reinterpret_cast<const char*>(r.bytes.data() + r.pos), meta_len);
    try {
        return meta_from_json(nlohmann::json::parse(meta_str));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::data, "checkpoint metadata parse error: " + std::string(e.what()));
    }
}

bool checkpoint_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::is_regular_file(path, ec);
}

}  // namespace fasdiff::pipeline
