#include "cohft/resample.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace cohft {

Real cubic_kernel(Real t, Real a) {
  t = std::abs(t);
  if (t <= 1) return ((a + 2) * t - (a + 3)) * t * t + 1;
  if (t < 2) return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a;
  return 0;
}

long reflect_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

namespace {

struct Taps {
  std::vector<long> index;
  std::vector<Real> weight;
};

// One set of taps per output coordinate along an axis of length n_in.
std::vector<Taps> upsample_taps(std::size_t n_in, std::size_t r) {
  std::vector<Taps> taps(n_in * r);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    const Real u = (static_cast<Real>(o) + 0.5) / static_cast<Real>(r) - 0.5;
    const long base = static_cast<long>(std::floor(u));
    const Real t = u - static_cast<Real>(base);
    for (long k = -1; k <= 2; ++k) {
      taps[o].index.push_back(reflect_index(base + k, static_cast<long>(n_in)));
      taps[o].weight.push_back(cubic_kernel(t - static_cast<Real>(k)));
    }
  }
  return taps;
}

std::vector<Taps> downsample_taps(std::size_t n_in, std::size_t r) {
  const std::size_t n_out = n_in / r;
  const Real rr = static_cast<Real>(r);
  std::vector<Taps> taps(n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    const Real c = (static_cast<Real>(o) + 0.5) * rr - 0.5;
    const long lo = static_cast<long>(std::ceil(c - 2 * rr));
    const long hi = static_cast<long>(std::floor(c + 2 * rr));
    Real total = 0;
    for (long j = lo; j <= hi; ++j) {
      const Real wgt = cubic_kernel((c - static_cast<Real>(j)) / rr);
      if (wgt == 0) continue;
      taps[o].index.push_back(reflect_index(j, static_cast<long>(n_in)));
      taps[o].weight.push_back(wgt);
      total += wgt;
    }
    for (auto& wgt : taps[o].weight) wgt /= total;
  }
  return taps;
}

void check_map(const Tensor& x, const char* op) {
  if (x.rank() != 3) throw ShapeError(std::string(op) + ": expected [h,w,c], got " + to_string(x.shape()));
}

Tensor separable(const Tensor& x, const std::vector<Taps>& rows, const std::vector<Taps>& cols) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t oh = rows.size(), ow = cols.size();
  // Horizontal pass, then vertical.
  Tensor tmp({h, ow, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t k = 0; k < cols[ox].index.size(); ++k) {
        const Real wgt = cols[ox].weight[k];
        const Real* src = x.raw() + (y * w + static_cast<std::size_t>(cols[ox].index[k])) * c;
        Real* dst = tmp.raw() + (y * ow + ox) * c;
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += wgt * src[ch];
      }
  Tensor out({oh, ow, c});
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t k = 0; k < rows[oy].index.size(); ++k) {
      const Real wgt = rows[oy].weight[k];
      const Real* src = tmp.raw() + static_cast<std::size_t>(rows[oy].index[k]) * ow * c;
      Real* dst = out.raw() + oy * ow * c;
      for (std::size_t i = 0; i < ow * c; ++i) dst[i] += wgt * src[i];
    }
  for (auto& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace

Tensor bicubic_upsample(const Tensor& lr, std::size_t r) {
  check_map(lr, "bicubic_upsample");
  if (r == 0) throw ShapeError("bicubic_upsample: ratio must be >= 1");
  if (r == 1) return lr;
  return separable(lr, upsample_taps(lr.dim(0), r), upsample_taps(lr.dim(1), r));
}

Tensor bicubic_downsample(const Tensor& hr, std::size_t r) {
  check_map(hr, "bicubic_downsample");
  if (r == 0 || hr.dim(0) % r != 0 || hr.dim(1) % r != 0) {
    throw ShapeError("bicubic_downsample: extents " + to_string(hr.shape()) + " not divisible by r=" + std::to_string(r));
  }
  if (r == 1) return hr;
  return separable(hr, downsample_taps(hr.dim(0), r), downsample_taps(hr.dim(1), r));
}

}  // namespace cohft
