#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "xmodal/errors.hpp"

namespace xmodal::numkit {

using Complex = std::complex<double>;

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT. inverse=true computes the unscaled inverse.
inline void fft_pow2(std::vector<Complex>& a, bool inverse = false) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) throw Error("fft_pow2 needs a power-of-two length, got " + std::to_string(n));
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = 2.0 * std::numbers::pi / double(len) * (inverse ? 1.0 : -1.0);
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const Complex w = std::polar(1.0, angle * double(k));
        const Complex u = a[start + k];
        const Complex v = a[start + k + len / 2] * w;
        a[start + k] = u + v;
        a[start + k + len / 2] = u - v;
      }
    }
  }
}

// DFT of arbitrary length: radix-2 directly, Bluestein's chirp-z otherwise.
inline std::vector<Complex> dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<Complex> out(x.begin(), x.end());
  if (n <= 1) return out;
  if (is_power_of_two(n)) {
    fft_pow2(out);
    return out;
  }
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  std::vector<Complex> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k² mod 2n keeps the angle argument small for long inputs.
    const std::size_t k2 = (k * k) % (2 * n);
    chirp[k] = std::polar(1.0, -std::numbers::pi * double(k2) / double(n));
  }
  std::vector<Complex> a(m), b(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
  b[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);
  fft_pow2(a);
  fft_pow2(b);
  for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
  fft_pow2(a, true);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] / double(m) * chirp[k];
  return out;
}

}  // namespace xmodal::numkit
