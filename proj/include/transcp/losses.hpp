#pragma once

#include <vector>

#include "transcp/bbox.hpp"
#include "transcp/config.hpp"
#include "transcp/head.hpp"

// Box regression objectives (L1 + generalized-IoU complement) and the
// evaluation metric. Value-level functions serve metrics and tests; the
// graph-level twins drive training and are held to the same oracles.

namespace transcp {

inline double l1_loss(const BBox& pred, const BBox& gt) {
  return std::abs(pred.x - gt.x) + std::abs(pred.y - gt.y) +
         std::abs(pred.w - gt.w) + std::abs(pred.h - gt.h);
}

namespace loss_detail {
inline void check_nondegenerate(const BBox& b, const char* who) {
  TCP_CHECK(b.w > 0 && b.h > 0, who, ": degenerate zero-area box (w=", b.w,
            ", h=", b.h, ")");
}
}  // namespace loss_detail

// Generalized IoU in (-1, 1]: IoU minus the fraction of the smallest
// enclosing box not covered by the union.
inline double giou(const BBox& a, const BBox& b) {
  loss_detail::check_nondegenerate(a, "giou");
  loss_detail::check_nondegenerate(b, "giou");
  double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
  double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  double ex = std::max(a.x2(), b.x2()) - std::min(a.x, b.x);
  double ey = std::max(a.y2(), b.y2()) - std::min(a.y, b.y);
  double enc = ex * ey;
  return inter / uni - (enc - uni) / enc;
}

inline double giou_loss(const BBox& pred, const BBox& gt) {
  return 1.0 - giou(pred, gt);
}

inline double total_loss(const BBox& pred, const BBox& gt,
                         const LossConfig& cfg) {
  return cfg.lambda_l1 * l1_loss(pred, gt) +
         cfg.lambda_giou * giou_loss(pred, gt);
}

// Top-1 accuracy: a prediction counts only if IoU is strictly above 0.5.
inline double accuracy_at_0p5(const std::vector<BBox>& preds,
                              const std::vector<BBox>& gts) {
  TCP_CHECK(!preds.empty(), "accuracy: empty prediction list");
  TCP_CHECK(preds.size() == gts.size(), "accuracy: ", preds.size(),
            " predictions vs ", gts.size(), " ground truths");
  size_t correct = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    if (iou(preds[i], gts[i]) > 0.5) ++correct;
  return double(correct) / double(preds.size());
}

inline double mean_iou(const std::vector<BBox>& preds,
                       const std::vector<BBox>& gts) {
  TCP_CHECK(!preds.empty() && preds.size() == gts.size(),
            "mean_iou: size mismatch");
  double acc = 0;
  for (size_t i = 0; i < preds.size(); ++i) acc += iou(preds[i], gts[i]);
  return acc / double(preds.size());
}

// ---- graph-level losses ----

namespace loss_detail {
template <typename T>
Var<T> abs_diff(const Var<T>& a, T b) {
  Var<T> d = sub(a, scalar_const<T>(b));
  return max_op(d, scale(d, T(-1)));
}
}  // namespace loss_detail

template <typename T>
Var<T> l1_loss_g(const BoxVar<T>& pred, const BBox& gt) {
  using loss_detail::abs_diff;
  return add(add(abs_diff(pred.x, T(gt.x)), abs_diff(pred.y, T(gt.y))),
             add(abs_diff(pred.w, T(gt.w)), abs_diff(pred.h, T(gt.h))));
}

template <typename T>
Var<T> giou_loss_g(const BoxVar<T>& pred, const BBox& gt) {
  loss_detail::check_nondegenerate(gt, "giou");
  Var<T> zero = scalar_const<T>(T(0));
  Var<T> px1 = pred.x, py1 = pred.y;
  Var<T> px2 = add(pred.x, pred.w), py2 = add(pred.y, pred.h);
  Var<T> gx1 = scalar_const<T>(T(gt.x)), gy1 = scalar_const<T>(T(gt.y));
  Var<T> gx2 = scalar_const<T>(T(gt.x2())), gy2 = scalar_const<T>(T(gt.y2()));
  Var<T> iw = max_op(zero, sub(min_op(px2, gx2), max_op(px1, gx1)));
  Var<T> ih = max_op(zero, sub(min_op(py2, gy2), max_op(py1, gy1)));
  Var<T> inter = mul(iw, ih);
  Var<T> uni = sub(add(mul(pred.w, pred.h), scalar_const<T>(T(gt.area()))),
                   inter);
  Var<T> ew = sub(max_op(px2, gx2), min_op(px1, gx1));
  Var<T> eh = sub(max_op(py2, gy2), min_op(py1, gy1));
  Var<T> enc = mul(ew, eh);
  Var<T> g = sub(divide(inter, uni), divide(sub(enc, uni), enc));
  return sub(scalar_const<T>(T(1)), g);
}

template <typename T>
Var<T> total_loss_g(const BoxVar<T>& pred, const BBox& gt,
                    const LossConfig& cfg) {
  return add(scale(l1_loss_g(pred, gt), T(cfg.lambda_l1)),
             scale(giou_loss_g(pred, gt), T(cfg.lambda_giou)));
}

}  // namespace transcp
