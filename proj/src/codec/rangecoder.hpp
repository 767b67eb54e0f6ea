#pragma once

#include <cstdint>
#include <vector>

#include "core/error.hpp"

// Byte-oriented range coder with 64-bit low / 32-bit range and the classic
// carry-resolving cache. Frequencies come from cumulative tables whose
// total must not exceed 2^16 so range / total never degenerates.
namespace fasdiff::codec {

constexpr uint32_t kRangeTop = 1u << 24;
constexpr uint32_t kFreqTotalBits = 16;
constexpr uint32_t kFreqTotal = 1u << kFreqTotalBits;

class RangeEncoder {
public:
    explicit RangeEncoder(std::vector<uint8_t>& out) : out_(out) {}

    void encode(uint32_t cum, uint32_t freq, uint32_t total) {
        check_arg(freq > 0 && cum + freq <= total && total <= kFreqTotal, "range encode: bad interval");
        range_ /= total;
        low_ += static_cast<uint64_t>(cum) * range_;
        range_ *= freq;
        while (range_ < kRangeTop) {
            range_ <<= 8;
            shift_low();
        }
    }

    // pushes the remaining state; the encoder is spent afterwards
    void finish() {
        for (int i = 0; i < 5; ++i) shift_low();
    }

private:
    void shift_low() {
        if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
            uint8_t carry = static_cast<uint8_t>(low_ >> 32);
            uint8_t b = cache_;
            do {
                out_.push_back(static_cast<uint8_t>(b + carry));
                b = 0xFF;
            } while (--cache_size_ != 0);
            cache_ = static_cast<uint8_t>(low_ >> 24);
        }
        ++cache_size_;
        low_ = (low_ & 0x00FFFFFFull) << 8;
    }

    std::vector<uint8_t>& out_;
    uint64_t low_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
    uint8_t cache_ = 0;
    int64_t cache_size_ = 1;
};

class RangeDecoder {
public:
    RangeDecoder(const uint8_t* data, size_t size) : data_(data), size_(size) {
        for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
    }

    // cumulative frequency of the next symbol, in [0, total)
    uint32_t decode_freq(uint32_t total) {
        range_ /= total;
        uint32_t v = static_cast<uint32_t>(code_ / range_);
        return v < total ? v : total - 1;
    }

    // commit to the symbol occupying [cum, cum + freq)
    void decode_update(uint32_t cum, uint32_t freq) {
        code_ -= static_cast<uint64_t>(cum) * range_;
        range_ *= freq;
        while (range_ < kRangeTop) {
            code_ = (code_ << 8) | next_byte();
            range_ <<= 8;
        }
    }

    size_t consumed() const { return pos_; }

private:
    // reads past the end return zero; corruption is caught by the
    // container checksum, not here
    uint8_t next_byte() { return pos_ < size_ ? data_[pos_++] : 0; }

    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
    uint64_t code_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
};

// Cumulative view over a frequency table, shared by both directions.
class SymbolTable {
public:
    explicit SymbolTable(const std::vector<uint16_t>& freqs) {
        cum_.resize(freqs.size() + 1, 0);
        uint32_t acc = 0;
        for (size_t i = 0; i < freqs.size(); ++i) {
            check_arg(freqs[i] > 0, "symbol table: zero frequency");
            cum_[i] = acc;
            acc += freqs[i];
        }
        cum_[freqs.size()] = acc;
        check_arg(acc == kFreqTotal, "symbol table: frequencies must sum to 2^16");
    }

    uint32_t total() const { return cum_.back(); }
    uint32_t cum(size_t sym) const { return cum_[sym]; }
    uint32_t freq(size_t sym) const { return cum_[sym + 1] - cum_[sym]; }
    size_t symbol_count() const { return cum_.size() - 1; }

    // binary search for the symbol whose interval contains f
    size_t find(uint32_t f) const {
        size_t lo = 0, hi = cum_.size() - 1;
        while (hi - lo > 1) {
            size_t mid = (lo + hi) / 2;
            if (cum_[mid] <= f)
                lo = mid;
            else
                hi = mid;
        }
        return lo;
    }

private:
    std::vector<uint32_t> cum_;
};

inline void encode_symbol(RangeEncoder& enc, const SymbolTable& t, size_t sym) {
    check_arg(sym < t.symbol_count(), "encode: symbol out of range");
    enc.encode(t.cum(sym), t.freq(sym), t.total());
}

inline size_t decode_symbol(RangeDecoder& dec, const SymbolTable& t) {
    uint32_t f = dec.decode_freq(t.total());
    size_t sym = t.find(f);
    dec.decode_update(t.cum(sym), t.freq(sym));
    return sym;
}

}  // namespace fasdiff::codec
