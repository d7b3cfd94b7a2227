#pragma once

#include <cmath>

#include "transcp/common.hpp"

namespace transcp {

// Axis-aligned box in normalized image coordinates, anchored at the top-left
// corner. Valid boxes satisfy 0 <= x,y <= 1, 0 < w,h <= 1 and stay inside the
// unit square up to a small numeric slack.
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;

  static constexpr double kSlack = 1e-6;

  BBox() = default;
  BBox(double x_, double y_, double w_, double h_) : x(x_), y(y_), w(w_), h(h_) {
    validate();
  }

  void validate() const {
    TCP_CHECK(std::isfinite(x) && std::isfinite(y) && std::isfinite(w) &&
                  std::isfinite(h),
              "box has non-finite coordinates");
    TCP_CHECK(x >= 0 && x <= 1 && y >= 0 && y <= 1, "box corner (", x, ",", y,
              ") outside [0,1]");
    TCP_CHECK(w > 0 && w <= 1 && h > 0 && h <= 1, "box extent (", w, ",", h,
              ") outside (0,1]");
    TCP_CHECK(x + w <= 1 + kSlack && y + h <= 1 + kSlack, "box exceeds canvas: x+w=",
              x + w, ", y+h=", y + h);
  }

  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double area() const { return w * h; }
};

inline double iou(const BBox& a, const BBox& b) {
  double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
  double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni <= 0 ? 0.0 : inter / uni;
}

}  // namespace transcp
