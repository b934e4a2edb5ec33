#pragma once

#include "cohft/tensor.hpp"

namespace cohft {

// Keys cubic convolution kernel; a = -0.5 is Catmull-Rom.
Real cubic_kernel(Real t, Real a = -0.5);

// Half-sample symmetric reflection of an index into [0, n).
long reflect_index(long i, long n);

// Integer-ratio bicubic resize of a [h,w,c] map with pixel-centre alignment,
// reflected borders and outputs clamped to [0, 1]. r = 1 is the identity.
Tensor bicubic_upsample(const Tensor& lr, std::size_t r);
// Antialiased: the kernel is stretched by r.
Tensor bicubic_downsample(const Tensor& hr, std::size_t r);

}  // namespace cohft
