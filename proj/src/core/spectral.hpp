#pragma once

#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <vector>

#include "core/autograd.hpp"
#include "core/tensor.hpp"

// 2-d DFT-based low-frequency scaling for feature maps. Feature maps here
// are tiny (<= 32x32) so a dense matrix DFT is plenty fast and keeps the
// whole thing dependency-free and bit-reproducible.
namespace fasdiff::spectral {

namespace detail {

struct DftPlan {
    // F[k][n] = exp(-2*pi*i*k*n / N); inverse uses the conjugate / N.
    std::vector<std::complex<double>> fwd;  // [N*N]
    std::vector<std::complex<double>> inv;  // [N*N], includes 1/N factor
    int64_t n = 0;
};

inline const DftPlan& plan_for(int64_t n) {
    static std::map<int64_t, DftPlan> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    DftPlan p;
    p.n = n;
    p.fwd.resize(static_cast<size_t>(n * n));
    p.inv.resize(static_cast<size_t>(n * n));
    for (int64_t k = 0; k < n; ++k)
        for (int64_t j = 0; j < n; ++j) {
            double ang = -2.0 * std::numbers::pi * static_cast<double>(k * j) / static_cast<double>(n);
            p.fwd[static_cast<size_t>(k * n + j)] = {std::cos(ang), std::sin(ang)};
            p.inv[static_cast<size_t>(k * n + j)] = {std::cos(ang) / static_cast<double>(n),
                                                     -std::sin(ang) / static_cast<double>(n)};
        }
    return cache.emplace(n, std::move(p)).first->second;
}

// out = M * in for row-major [n x m] complex blocks (applies DFT along rows)
inline void mat_apply(const std::complex<double>* M, const std::complex<double>* in, int64_t n, int64_t m,
                      std::complex<double>* out) {
    for (int64_t i = 0; i < n; ++i) {
        const std::complex<double>* mr = M + i * n;
        for (int64_t j = 0; j < m; ++j) {
            std::complex<double> acc{0.0, 0.0};
            for (int64_t k = 0; k < n; ++k) acc += mr[k] * in[k * m + j];
            out[i * m + j] = acc;
        }
    }
}

}  // namespace detail

// Fractional frequency coordinate of DFT bin k for size n: the signed
// frequency divided by the Nyquist frequency, in (-1, 1].
inline double frequency_fraction(int64_t k, int64_t n) {
    int64_t signed_k = (k <= n / 2) ? k : k - n;
    return 2.0 * static_cast<double>(signed_k) / static_cast<double>(n);
}

// Per-bin gain mask: bins with normalized radius < radius get `gain`,
// everything else passes through unchanged. radius is relative to Nyquist
// so radius=1 covers the axis-aligned band edge and sqrt(2) covers all.
inline std::vector<double> lowpass_gain_mask(int64_t h, int64_t w, double radius, double gain) {
    std::vector<double> mask(static_cast<size_t>(h * w), 1.0);
    for (int64_t fy = 0; fy < h; ++fy)
        for (int64_t fx = 0; fx < w; ++fx) {
            double ry = frequency_fraction(fy, h);
            double rx = frequency_fraction(fx, w);
            double r = std::sqrt(ry * ry + rx * rx);
            if (r < radius) mask[static_cast<size_t>(fy * w + fx)] = gain;
        }
    return mask;
}

// Apply a real-valued symmetric spectral gain to each HxW slice of a real
// tensor: ifft2(fft2(x) .* mask). Because the mask is radially defined it
// satisfies mask[k] == mask[-k], so the result is real (imag parts are
// numerical dust and get dropped).
template <typename T>
Tensor<T> apply_spectral_gain(const Tensor<T>& x, const std::vector<double>& mask) {
    check_arg(x.shape().size() == 4, "apply_spectral_gain: expected 4-d");
    int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    check_arg(static_cast<int64_t>(mask.size()) == H * W, "apply_spectral_gain: mask size mismatch");
    const auto& ph = detail::plan_for(H);
    const auto& pw = detail::plan_for(W);

    Tensor<T> out(x.shape());
    std::vector<std::complex<double>> buf(static_cast<size_t>(H * W));
    std::vector<std::complex<double>> tmp(static_cast<size_t>(H * W));
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* src = x.data() + nc * H * W;
        for (int64_t i = 0; i < H * W; ++i) buf[static_cast<size_t>(i)] = {static_cast<double>(src[i]), 0.0};
        // fft2 = row DFT then column DFT
        detail::mat_apply(ph.fwd.data(), buf.data(), H, W, tmp.data());  // along rows (y)
        // transpose-free column pass: apply W-point DFT to each row of tmp
        for (int64_t i = 0; i < H; ++i) {
            for (int64_t j = 0; j < W; ++j) {
                std::complex<double> acc{0.0, 0.0};
                const std::complex<double>* mr = pw.fwd.data() + j * W;
                for (int64_t k = 0; k < W; ++k) acc += mr[k] * tmp[static_cast<size_t>(i * W + k)];
                buf[static_cast<size_t>(i * W + j)] = acc;
            }
        }
        for (int64_t i = 0; i < H * W; ++i) buf[static_cast<size_t>(i)] *= mask[static_cast<size_t>(i)];
        // inverse: columns then rows
        for (int64_t i = 0; i < H; ++i) {
            for (int64_t j = 0; j < W; ++j) {
                std::complex<double> acc{0.0, 0.0};
                const std::complex<double>* mr = pw.inv.data() + j * W;
                for (int64_t k = 0; k < W; ++k) acc += mr[k] * buf[static_cast<size_t>(i * W + k)];
                tmp[static_cast<size_t>(i * W + j)] = acc;
            }
        }
        detail::mat_apply(ph.inv.data(), tmp.data(), H, W, buf.data());
        T* dst = out.data() + nc * H * W;
        for (int64_t i = 0; i < H * W; ++i) dst[i] = static_cast<T>(buf[static_cast<size_t>(i)].real());
    }
    return out;
}

// Autograd wrapper. The operator is linear and self-adjoint (real diagonal
// gain in the Fourier basis), so the backward pass is the same operator
// applied to the incoming gradient.
template <typename T>
ag::Var<T> spectral_lowpass(const ag::Var<T>& x, double radius, double gain) {
    int64_t H = x.shape()[2], W = x.shape()[3];
    auto mask = lowpass_gain_mask(H, W, radius, gain);
    Tensor<T> out = apply_spectral_gain(x.value(), mask);
    auto nx = x.node();
    return ag::detail::make_result<T>(std::move(out), {x}, [nx, mask = std::move(mask)](ag::Node<T>& self) {
        nx->ensure_grad();
        Tensor<T> gx = apply_spectral_gain(self.grad, mask);
        for (int64_t i = 0; i < gx.numel(); ++i) nx->grad[i] += gx[i];
    });
}

}  // namespace fasdiff::spectral
