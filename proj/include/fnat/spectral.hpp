#pragma once

#include <utility>

#include "fnat/tensor.hpp"

namespace fnat {

// Paired real/imaginary parts of a sequence-dimension spectrum, T x d each.
struct ComplexSpectrum {
  Tensor real;
  Tensor imag;

  int64_t length() const { return real.rows(); }
  int64_t channels() const { return real.cols(); }
};

// Learned per-frequency-bin, per-channel multipliers for the real and
// imaginary spectrum halves. Both parameters are T_max x d.
struct GatePair {
  Parameter* g_real = nullptr;
  Parameter* g_imag = nullptr;
};

// Unnormalized forward DFT of each channel along the sequence dimension:
// X[k,c] = sum_t x[t,c] * exp(-2*pi*i*k*t/T). Power-of-two lengths take the
// radix-2 fast path; everything else falls through to the direct sum.
ComplexSpectrum dft_seq(const Tensor& x);

// Direct O(T^2) transform. Kept permanently: it is the oracle the fast path
// is tested against and the fallback for non-power-of-two lengths.
ComplexSpectrum dft_seq_naive(const Tensor& x);

// Inverse transform with 1/T normalization; returns both output parts so the
// caller decides what to do with the imaginary half.
std::pair<Tensor, Tensor> idft_seq(const ComplexSpectrum& spec);
std::pair<Tensor, Tensor> idft_seq_naive(const ComplexSpectrum& spec);

// Elementwise spectrum gating. seq_len must equal the gate length (gates are
// allocated at the padded sequence length, one row per frequency bin).
ComplexSpectrum apply_gates(const ComplexSpectrum& spec, const Tensor& g_real, const Tensor& g_imag);
ComplexSpectrum apply_gates(const ComplexSpectrum& spec, const GatePair& gates, int64_t seq_len);

// Re(iDFT(gate(DFT(x)))): the FourierMixing map with the imaginary output
// discarded.
Tensor fourier_mix(const Tensor& x, const Tensor& g_real, const Tensor& g_imag);

// Same map before truncation; first = real part, second = imaginary part.
std::pair<Tensor, Tensor> fourier_mix_full(const Tensor& x, const Tensor& g_real, const Tensor& g_imag);

struct FourierMixGrads {
  Tensor dx;
  Tensor dg_real;
  Tensor dg_imag;
};

// Exact VJP of fourier_mix. The map is linear in x given the gates, so dx is
// the same gated transform applied to the upstream cotangent; gate gradients
// are per-bin products of the input spectrum with the upstream spectrum.
FourierMixGrads fourier_mix_vjp(const Tensor& x, const Tensor& g_real, const Tensor& g_imag,
                                const Tensor& upstream);

// VJP of fourier_mix_full given cotangents for both output parts.
FourierMixGrads fourier_mix_full_vjp(const Tensor& x, const Tensor& g_real, const Tensor& g_imag,
                                     const Tensor& up_real, const Tensor& up_imag);

bool is_power_of_two(int64_t n);

}  // namespace fnat
