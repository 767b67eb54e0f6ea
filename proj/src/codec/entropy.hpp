#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "codec/rangecoder.hpp"
#include "core/autograd.hpp"

// Per-channel logistic entropy model over the quantized code. The same
// (mu, scale) parameters drive three views that must agree with each
// other: the differentiable rate term used in training, the discrete pmf,
// and the integer frequency tables handed to the range coder.
namespace fasdiff::codec {

constexpr int kSymMin = -127;
constexpr int kSymMax = 128;
constexpr int kSymCount = kSymMax - kSymMin + 1;  // 256
constexpr double kPmfFloor = 1e-9;

// Differentiable total rate in bits for a batch of continuous code values
// (additive-noise or straight-through relaxation of rounding).
// code: [N,C,h,w], mu/log_s: [C].
template <typename T>
ag::Var<T> rate_bits(const ag::Var<T>& code, const ag::Var<T>& mu, const ag::Var<T>& log_s) {
    check_arg(code.shape().size() == 4, "rate_bits: code must be 4-d");
    auto inv_s = ag::exp_op(ag::scale(log_s, -1.0));
    auto centered = ag::sub_channel_bias(code, mu);
    Tensor<T> half(code.shape(), T(0.5));
    auto hi = ag::sigmoid(ag::mul_channel(ag::add_const(centered, half), inv_s));
    Tensor<T> neg_half(code.shape(), T(-0.5));
    auto lo = ag::sigmoid(ag::mul_channel(ag::add_const(centered, neg_half), inv_s));
    auto p = ag::clamp_min(ag::sub(hi, lo), 1e-12);
    return ag::scale(ag::sum_all(ag::log_op(p)), -1.0 / std::log(2.0));
}

inline double logistic_cdf(double v, double mu, double s) { return 1.0 / (1.0 + std::exp(-(v - mu) / s)); }

// Discrete pmf over the fixed symbol support with both tails folded into
// the edge symbols, so the exact sum telescopes to one.
inline std::vector<double> discrete_pmf(double mu, double s) {
    std::vector<double> p(kSymCount);
    double prev = 0.0;  // CDF at the left edge of the support, tail included
    for (int k = kSymMin; k <= kSymMax; ++k) {
        double hi = (k == kSymMax) ? 1.0 : logistic_cdf(k + 0.5, mu, s);
        p[static_cast<size_t>(k - kSymMin)] = hi - prev;
        prev = hi;
    }
    return p;
}

// Quantize a pmf to integer frequencies that sum to exactly 2^16 with
// every symbol kept codeable (freq >= 1). Remainder units go to the
// largest rounding residuals, ties broken by symbol index.
inline std::vector<uint16_t> quantize_pmf(std::vector<double> p) {
    check_arg(p.size() == static_cast<size_t>(kSymCount), "quantize_pmf: wrong support size");
    double total = 0.0;
    for (auto& v : p) {
        if (!(v > kPmfFloor)) v = kPmfFloor;
        total += v;
    }
    const uint32_t budget = kFreqTotal - static_cast<uint32_t>(kSymCount);
    std::vector<uint16_t> f(p.size());
    std::vector<std::pair<double, int>> residual(p.size());
    uint32_t assigned = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        double ideal = p[i] / total * static_cast<double>(budget);
        double fl = std::floor(ideal);
        f[i] = static_cast<uint16_t>(fl) + 1;
        assigned += f[i];
        residual[i] = {ideal - fl, static_cast<int>(i)};
    }
    uint32_t leftover = kFreqTotal - assigned;
    std::sort(residual.begin(), residual.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (uint32_t i = 0; i < leftover; ++i) f[static_cast<size_t>(residual[i].second)] += 1;
    return f;
}

inline std::vector<std::vector<uint16_t>> build_freq_tables(const std::vector<double>& mu,
                                                            const std::vector<double>& scale) {
    check_arg(mu.size() == scale.size(), "build_freq_tables: size mismatch");
    std::vector<std::vector<uint16_t>> tables(mu.size());
    for (size_t c = 0; c < mu.size(); ++c) tables[c] = quantize_pmf(discrete_pmf(mu[c], scale[c]));
    return tables;
}

inline int value_to_symbol(double v) {
    double r = std::round(v);
    if (r < kSymMin) r = kSymMin;
    if (r > kSymMax) r = kSymMax;
    return static_cast<int>(r) - kSymMin;
}

inline double symbol_to_value(int sym) { return static_cast<double>(sym + kSymMin); }

// Information content of a symbol sequence under the quantized tables;
// this is the rate the range coder is expected to realize, up to its
// few-byte flush overhead.
inline double table_bits(const std::vector<std::vector<uint16_t>>& tables,
                         const std::vector<std::vector<int>>& channel_symbols) {
    check_arg(tables.size() == channel_symbols.size(), "table_bits: channel mismatch");
    double bits = 0.0;
    for (size_t c = 0; c < tables.size(); ++c)
        for (int sym : channel_symbols[c]) {
            check_arg(sym >= 0 && sym < kSymCount, "table_bits: symbol out of support");
            bits -= std::log2(static_cast<double>(tables[c][static_cast<size_t>(sym)]) /
                              static_cast<double>(kFreqTotal));
        }
    return bits;
}

inline std::vector<uint8_t> encode_symbols(const std::vector<std::vector<uint16_t>>& tables,
                                           const std::vector<std::vector<int>>& channel_symbols) {
    check_arg(tables.size() == channel_symbols.size(), "encode_symbols: channel mismatch");
    std::vector<uint8_t> out;
    RangeEncoder enc(out);
    for (size_t c = 0; c < tables.size(); ++c) {
        SymbolTable t(tables[c]);
        for (int sym : channel_symbols[c]) encode_symbol(enc, t, static_cast<size_t>(sym));
    }
    enc.finish();
    return out;
}

inline std::vector<std::vector<int>> decode_symbols(const std::vector<std::vector<uint16_t>>& tables,
                                                    const std::vector<uint8_t>& payload,
                                                    size_t symbols_per_channel) {
    RangeDecoder dec(payload.data(), payload.size());
    std::vector<std::vector<int>> out(tables.size());
    for (size_t c = 0; c < tables.size(); ++c) {
        SymbolTable t(tables[c]);
        out[c].resize(symbols_per_channel);
        for (size_t i = 0; i < symbols_per_channel; ++i)
            out[c][i] = static_cast<int>(decode_symbol(dec, t));
    }
    return out;
}

}  // namespace fasdiff::codec
