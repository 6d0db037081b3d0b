#pragma once

#include <cmath>
#include <vector>

#include "eatr/errors.hpp"

namespace eatr::geom {

// Temporal span as normalized (center, width), both fractions of the video.
struct Span {
  double c = 0.0;
  double w = 0.0;
};

struct IouResult {
  double iou = 0.0;
  double giou = 0.0;
};

// [max(0, c-w/2), min(1, c+w/2)]. Throws ValidationError on spans outside
// the (c in [0,1], w in (0,1]) domain or spans that clamp to empty.
std::pair<double, double> span_to_interval(const Span& s);

// Plain and generalized temporal IoU over the clamped intervals.
// giou = iou - (enclosure - union) / enclosure.
IouResult iou_giou(const Span& a, const Span& b);

// Interleaved sinusoidal features: out[2i] = sin(x*tau / w_i),
// out[2i+1] = cos(x*tau / w_i), w_i = 10000^(2i/d). Normalized coordinates
// use tau = 1000 so [0,1] inputs spread across the first period; frame
// indices are passed raw with tau = 1. Odd d is rejected.
template <class T>
std::vector<T> sinusoidal_encode(T x, int d, T tau) {
  if (d <= 0 || d % 2 != 0)
    throw ConfigError("sinusoidal_encode: dimension must be even and positive");
  std::vector<T> out(size_t(d), T(0));
  for (int i = 0; i < d / 2; ++i) {
    const double omega = std::pow(10000.0, 2.0 * i / double(d));
    const double arg = double(x) * double(tau) / omega;
    out[size_t(2 * i)] = T(std::sin(arg));
    out[size_t(2 * i) + 1] = T(std::cos(arg));
  }
  return out;
}

inline constexpr double kCoordTau = 1000.0;  // for normalized (c, w) inputs
inline constexpr double kFrameTau = 1.0;     // for raw frame indices

}  // namespace eatr::geom
