#include "eatr/geometry.hpp"

#include <algorithm>
#include <string>

namespace eatr::geom {

std::pair<double, double> span_to_interval(const Span& s) {
  if (!(s.c >= 0.0 && s.c <= 1.0) || !(s.w > 0.0 && s.w <= 1.0))
    throw ValidationError("invalid span: center=" + std::to_string(s.c) +
                          " width=" + std::to_string(s.w));
  const double start = std::max(0.0, s.c - s.w / 2.0);
  const double end = std::min(1.0, s.c + s.w / 2.0);
  if (!(end > start))
    throw ValidationError("span clamps to empty interval: center=" +
                          std::to_string(s.c) + " width=" + std::to_string(s.w));
  return {start, end};
}

IouResult iou_giou(const Span& a, const Span& b) {
  const auto [as, ae] = span_to_interval(a);
  const auto [bs, be] = span_to_interval(b);
  const double inter = std::max(0.0, std::min(ae, be) - std::max(as, bs));
  const double uni = (ae - as) + (be - bs) - inter;
  const double enc = std::max(ae, be) - std::min(as, bs);
  IouResult r;
  r.iou = inter / uni;  // uni > 0 since both intervals are non-empty
  r.giou = r.iou - (enc - uni) / enc;
  return r;
}

}  // namespace eatr::geom
