#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "core/nn.hpp"

// High-level guidance: a tiny text side and a face-embedding side, both
// projected into a shared conditioning token space. The text encoder is
// deliberately small and frozen from a pinned seed; the caption vocabulary
// is closed over the attribute template, with <unk> absorbing anything
// else.
namespace fasdiff::models {

using ag::Var;

class Vocabulary {
public:
    Vocabulary() {
        // index-bound: embedding tables are keyed by position in this list,
        // so the order is frozen and shipped alongside checkpoints. The
        // caption template only uses the first 13 entries; the rest keep
        // room for richer attribute sets without re-indexing.
        static const char* words[] = {
            "<pad>", "<unk>", "a",      "face",     "woman",    "man",      "smiling", "with",
            "and",   "glasses", "beard", "dark",    "hair",     "neutral",  "serious", "young",
            "old",   "happy", "light",  "blonde",   "brown",    "black",    "red",     "short",
            "long",  "curly", "straight", "round",  "square",   "thin",     "wide",    "eyes",
            "nose",  "mouth", "ears",   "pale",     "tanned",   "freckles", "earrings", "hat"};
        for (const char* w : words) words_.emplace_back(w);
    }

    // one token per line, in index order
    void write_file(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        check_data(os.good(), "cannot write vocabulary file " + path);
        for (const auto& w : words_) os << w << "\n";
    }

    // verifies a released vocabulary file matches this build
    bool matches_file(const std::string& path) const {
        std::ifstream is(path, std::ios::binary);
        if (!is.good()) return false;
        std::string line;
        size_t i = 0;
        while (std::getline(is, line)) {
            if (i >= words_.size() || line != words_[i]) return false;
            ++i;
        }
        return i == words_.size();
    }

    int32_t pad_id() const { return 0; }
    int32_t unk_id() const { return 1; }
    int64_t size() const { return static_cast<int64_t>(words_.size()); }

    int32_t id_of(const std::string& word) const {
        for (size_t i = 0; i < words_.size(); ++i)
            if (words_[i] == word) return static_cast<int32_t>(i);
        return unk_id();
    }

    // lowercase whitespace tokenization, padded / truncated to max_tokens
    std::vector<int32_t> tokenize(const std::string& text, int64_t max_tokens) const {
        std::vector<int32_t> ids;
        std::istringstream iss(text);
        std::string word;
        while (iss >> word && static_cast<int64_t>(ids.size()) < max_tokens) {
            std::transform(word.begin(), word.end(), word.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            word.erase(std::remove_if(word.begin(), word.end(),
                                      [](unsigned char c) { return !std::isalnum(c) && c != '<' && c != '>'; }),
                       word.end());
            if (!word.empty()) ids.push_back(id_of(word));
        }
        while (static_cast<int64_t>(ids.size()) < max_tokens) ids.push_back(pad_id());
        return ids;
    }

private:
    std::vector<std::string> words_;
};

struct HlfeConfig {
    int64_t cond_dim = 64;
    int64_t text_tokens = 8;
    int64_t face_tokens = 4;
    int64_t face_feature_dim = 64;  // classifier penultimate width
};

// Token + position embedding followed by a two-layer mixer, producing
// [N, text_tokens, cond_dim].
template <typename T>
class TextEncoder {
public:
    TextEncoder() = default;

    TextEncoder(nn::ParamStore<T>& ps, const std::string& prefix, const HlfeConfig& cfg, RngStream& rng)
        : cfg_(cfg) {
        auto p = [&prefix](const std::string& s) { return prefix + s; };
        tok_ = nn::Embedding<T>(ps, p("tok"), vocab_.size(), cfg.cond_dim, rng);
        pos_ = ps.create(p("pos.w"), Shape{cfg.text_tokens, cfg.cond_dim},
                         nn::init_scaled_normal<T>(rng, static_cast<double>(cfg.cond_dim)));
        mix1_ = nn::Linear<T>(ps, p("mix1"), cfg.cond_dim, cfg.cond_dim, rng);
        mix2_ = nn::Linear<T>(ps, p("mix2"), cfg.cond_dim, cfg.cond_dim, rng);
    }

    const Vocabulary& vocab() const { return vocab_; }

    Var<T> encode(const std::vector<std::string>& captions) const {
        int64_t n = static_cast<int64_t>(captions.size());
        check_arg(n > 0, "text encoder: empty batch");
        std::vector<int32_t> ids;
        ids.reserve(static_cast<size_t>(n * cfg_.text_tokens));
        for (const auto& c : captions) {
            auto t = vocab_.tokenize(c, cfg_.text_tokens);
            ids.insert(ids.end(), t.begin(), t.end());
        }
        auto emb = ag::reshape(tok_(ids), Shape{n, cfg_.text_tokens, cfg_.cond_dim});
        // add the learned position table to every sample
        Tensor<T> pos_rep(Shape{n, cfg_.text_tokens, cfg_.cond_dim});
        for (int64_t i = 0; i < n; ++i)
            std::copy(pos_.value().data(), pos_.value().data() + cfg_.text_tokens * cfg_.cond_dim,
                      pos_rep.data() + i * cfg_.text_tokens * cfg_.cond_dim);
        auto h = ag::add_const(emb, pos_rep);
        h = mix1_.tokens(h);
        h = ag::silu(h);
        return mix2_.tokens(h);
    }

private:
    HlfeConfig cfg_;
    Vocabulary vocab_;
    nn::Embedding<T> tok_;
    Var<T> pos_;
    nn::Linear<T> mix1_, mix2_;
};

// Maps the classifier's face embedding to face_tokens conditioning tokens.
template <typename T>
class FaceProjector {
public:
    FaceProjector() = default;

    FaceProjector(nn::ParamStore<T>& ps, const std::string& prefix, const HlfeConfig& cfg, RngStream& rng)
        : cfg_(cfg) {
        auto p = [&prefix](const std::string& s) { return prefix + s; };
        l1_ = nn::Linear<T>(ps, p("l1"), cfg.face_feature_dim, 2 * cfg.cond_dim, rng);
        l2_ = nn::Linear<T>(ps, p("l2"), 2 * cfg.cond_dim, cfg.face_tokens * cfg.cond_dim, rng);
    }

    // [N, face_feature_dim] -> [N, face_tokens, cond_dim]
    Var<T> project(const Var<T>& features) const {
        check_arg(features.shape().size() == 2 && features.shape()[1] == cfg_.face_feature_dim,
                  "face projector: wrong feature shape");
        auto h = ag::silu(l1_(features));
        auto out = l2_(h);
        return ag::reshape(out, Shape{features.shape()[0], cfg_.face_tokens, cfg_.cond_dim});
    }

private:
    HlfeConfig cfg_;
    nn::Linear<T> l1_, l2_;
};

}  // namespace fasdiff::models
