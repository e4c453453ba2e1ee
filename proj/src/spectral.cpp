#include "fnat/spectral.hpp"

#include <cmath>
#include <complex>
#include <vector>

namespace fnat {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Iterative radix-2 with bit-reversal reordering. sign = -1 forward, +1
// inverse; both directions unnormalized. Twiddles are indexed off a single
// per-call table so rounding does not accumulate across stages.
void fft_pow2(std::vector<std::complex<double>>& a, int sign) {
  const size_t n = a.size();
  if (n < 2) return;
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  std::vector<std::complex<double>> tw(n / 2);
  for (size_t i = 0; i < n / 2; ++i) {
    const double ang = sign * kTwoPi * static_cast<double>(i) / static_cast<double>(n);
    tw[i] = {std::cos(ang), std::sin(ang)};
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const size_t step = n / len;
    for (size_t base = 0; base < n; base += len) {
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> w = tw[j * step];
        const std::complex<double> u = a[base + j];
        const std::complex<double> v = a[base + j + len / 2] * w;
        a[base + j] = u + v;
        a[base + j + len / 2] = u - v;
      }
    }
  }
}

void require_spectrum_shapes(const ComplexSpectrum& s) {
  if (!s.real.same_shape(s.imag))
    throw DimError("spectrum real/imag shape mismatch: " + shape_pair_str(s.real, s.imag));
}

}  // namespace

bool is_power_of_two(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

ComplexSpectrum dft_seq_naive(const Tensor& x) {
  const int64_t t_len = x.rows(), d = x.cols();
  ComplexSpectrum out{Tensor({t_len, d}), Tensor({t_len, d})};
  for (int64_t c = 0; c < d; ++c) {
    for (int64_t k = 0; k < t_len; ++k) {
      double re = 0, im = 0;
      for (int64_t t = 0; t < t_len; ++t) {
        const double ang = kTwoPi * static_cast<double>(k) * static_cast<double>(t) / static_cast<double>(t_len);
        const double v = static_cast<double>(x.at(t, c));
        re += v * std::cos(ang);
        im -= v * std::sin(ang);
      }
      out.real.at(k, c) = static_cast<real_t>(re);
      out.imag.at(k, c) = static_cast<real_t>(im);
    }
  }
  return out;
}

ComplexSpectrum dft_seq(const Tensor& x) {
  const int64_t t_len = x.rows(), d = x.cols();
  if (t_len < 1) throw DimError("dft_seq needs at least one row, got " + x.shape_str());
  if (!is_power_of_two(t_len)) return dft_seq_naive(x);
  ComplexSpectrum out{Tensor({t_len, d}), Tensor({t_len, d})};
  std::vector<std::complex<double>> buf(static_cast<size_t>(t_len));
  for (int64_t c = 0; c < d; ++c) {
    for (int64_t t = 0; t < t_len; ++t) buf[static_cast<size_t>(t)] = {static_cast<double>(x.at(t, c)), 0.0};
    fft_pow2(buf, -1);
    for (int64_t k = 0; k < t_len; ++k) {
      out.real.at(k, c) = static_cast<real_t>(buf[static_cast<size_t>(k)].real());
      out.imag.at(k, c) = static_cast<real_t>(buf[static_cast<size_t>(k)].imag());
    }
  }
  return out;
}

std::pair<Tensor, Tensor> idft_seq_naive(const ComplexSpectrum& spec) {
  require_spectrum_shapes(spec);
  const int64_t t_len = spec.length(), d = spec.channels();
  Tensor re_out({t_len, d}), im_out({t_len, d});
  const double inv_t = 1.0 / static_cast<double>(t_len);
  for (int64_t c = 0; c < d; ++c) {
    for (int64_t t = 0; t < t_len; ++t) {
      double re = 0, im = 0;
      for (int64_t k = 0; k < t_len; ++k) {
        const double ang = kTwoPi * static_cast<double>(k) * static_cast<double>(t) / static_cast<double>(t_len);
        const double cr = std::cos(ang), si = std::sin(ang);
        const double sr = static_cast<double>(spec.real.at(k, c));
        const double sim = static_cast<double>(spec.imag.at(k, c));
        re += sr * cr - sim * si;
        im += sr * si + sim * cr;
      }
      re_out.at(t, c) = static_cast<real_t>(re * inv_t);
      im_out.at(t, c) = static_cast<real_t>(im * inv_t);
    }
  }
  return {std::move(re_out), std::move(im_out)};
}

std::pair<Tensor, Tensor> idft_seq(const ComplexSpectrum& spec) {
  require_spectrum_shapes(spec);
  const int64_t t_len = spec.length(), d = spec.channels();
  if (!is_power_of_two(t_len)) return idft_seq_naive(spec);
  Tensor re_out({t_len, d}), im_out({t_len, d});
  const double inv_t = 1.0 / static_cast<double>(t_len);
  std::vector<std::complex<double>> buf(static_cast<size_t>(t_len));
  for (int64_t c = 0; c < d; ++c) {
    for (int64_t k = 0; k < t_len; ++k)
      buf[static_cast<size_t>(k)] = {static_cast<double>(spec.real.at(k, c)),
                                     static_cast<double>(spec.imag.at(k, c))};
    fft_pow2(buf, +1);
    for (int64_t t = 0; t < t_len; ++t) {
      re_out.at(t, c) = static_cast<real_t>(buf[static_cast<size_t>(t)].real() * inv_t);
      im_out.at(t, c) = static_cast<real_t>(buf[static_cast<size_t>(t)].imag() * inv_t);
    }
  }
  return {std::move(re_out), std::move(im_out)};
}

ComplexSpectrum apply_gates(const ComplexSpectrum& spec, const Tensor& g_real, const Tensor& g_imag) {
  require_spectrum_shapes(spec);
  if (g_real.rows() != spec.length() || g_real.cols() != spec.channels() || !g_real.same_shape(g_imag))
    throw ConfigError("gate shape " + g_real.shape_str() + " does not match spectrum " +
                      spec.real.shape_str() + "; sequences must be padded to the gate length");
  return {hadamard(spec.real, g_real), hadamard(spec.imag, g_imag)};
}

ComplexSpectrum apply_gates(const ComplexSpectrum& spec, const GatePair& gates, int64_t seq_len) {
  if (seq_len != gates.g_real->value.rows())
    throw ConfigError("apply_gates: sequence length " + std::to_string(seq_len) +
                      " != gate length " + std::to_string(gates.g_real->value.rows()));
  return apply_gates(spec, gates.g_real->value, gates.g_imag->value);
}

std::pair<Tensor, Tensor> fourier_mix_full(const Tensor& x, const Tensor& g_real, const Tensor& g_imag) {
  return idft_seq(apply_gates(dft_seq(x), g_real, g_imag));
}

Tensor fourier_mix(const Tensor& x, const Tensor& g_real, const Tensor& g_imag) {
  return fourier_mix_full(x, g_real, g_imag).first;
}

FourierMixGrads fourier_mix_full_vjp(const Tensor& x, const Tensor& g_real, const Tensor& g_imag,
                                     const Tensor& up_real, const Tensor& up_imag) {
  const int64_t t_len = x.rows();
  const real_t inv_t = real_t(1) / static_cast<real_t>(t_len);

  const ComplexSpectrum xs = dft_seq(x);
  const ComplexSpectrum u1 = dft_seq(up_real);
  const ComplexSpectrum u2 = dft_seq(up_imag);

  // Cotangents of the gated spectrum halves.
  Tensor d_rp = scale(sub(u1.real, u2.imag), inv_t);
  Tensor d_ip = scale(add(u1.imag, u2.real), inv_t);

  FourierMixGrads g;
  g.dg_real = hadamard(xs.real, d_rp);
  g.dg_imag = hadamard(xs.imag, d_ip);
  // dx is the gated inverse transform of the cotangent spectrum scaled back up
  // by T (the 1/T of the inverse cancels the 1/T already folded into d_rp/d_ip).
  ComplexSpectrum back{hadamard(g_real, scale(d_rp, static_cast<real_t>(t_len))),
                       hadamard(g_imag, scale(d_ip, static_cast<real_t>(t_len)))};
  g.dx = idft_seq(back).first;
  return g;
}

FourierMixGrads fourier_mix_vjp(const Tensor& x, const Tensor& g_real, const Tensor& g_imag,
                                const Tensor& upstream) {
  return fourier_mix_full_vjp(x, g_real, g_imag, upstream, zeros_like(upstream));
}

}  // namespace fnat
