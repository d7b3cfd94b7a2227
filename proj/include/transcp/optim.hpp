#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "transcp/params.hpp"

namespace transcp {

// Adaptive-moment optimizer with decoupled weight decay and two learning-rate
// groups (feature encoders vs everything else). Weight decay applies to
// matrices and convolution kernels only; biases, norms, and scalars are left
// undecayed. Skipped (frozen) parameters keep their moment state and step
// counters untouched.
template <typename T>
class AdamW {
 public:
  struct Settings {
    double lr_main = 1e-4;
    double lr_encoder = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  AdamW() = default;
  AdamW(ParamStore<T>& store, Settings s) : store_(&store), s_(s) {
    m_.reserve(store.size());
    v_.reserve(store.size());
    for (size_t i = 0; i < store.size(); ++i) {
      m_.emplace_back(store.value(int(i)).shape());
      v_.emplace_back(store.value(int(i)).shape());
    }
    t_.assign(store.size(), 0);
  }

  double lr_for(ParamGroup g) const {
    return g == ParamGroup::encoder ? s_.lr_encoder : s_.lr_main;
  }

  // grads must align with parameter ids; `skip` marks frozen parameters.
  void step(const std::vector<Tensor<T>>& grads, double lr_scale,
            const std::function<bool(int)>& skip = nullptr) {
    TCP_CHECK(grads.size() == store_->size(),
              "optimizer step: gradient count mismatch");
    for (size_t i = 0; i < grads.size(); ++i) {
      int id = int(i);
      if (skip && skip(id)) continue;
      auto& entry = store_->entry(id);
      Tensor<T>& p = entry.value;
      const Tensor<T>& g = grads[i];
      TCP_CHECK(g.same_shape(p), "optimizer step: grad shape mismatch for ",
                entry.name);
      ++t_[i];
      double b1 = s_.beta1, b2 = s_.beta2;
      double bc1 = 1.0 - std::pow(b1, double(t_[i]));
      double bc2 = 1.0 - std::pow(b2, double(t_[i]));
      double lr = lr_for(entry.group) * lr_scale;
      bool decay = p.ndim() >= 2 && s_.weight_decay > 0;
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (size_t e = 0; e < p.numel(); ++e) {
        double ge = double(g[e]);
        double me = b1 * double(m[e]) + (1 - b1) * ge;
        double ve = b2 * double(v[e]) + (1 - b2) * ge * ge;
        m[e] = T(me);
        v[e] = T(ve);
        double update = (me / bc1) / (std::sqrt(ve / bc2) + s_.eps);
        double pe = double(p[e]) - lr * update;
        if (decay) pe -= lr * s_.weight_decay * double(p[e]);
        p[e] = T(pe);
      }
    }
  }

  const Settings& settings() const { return s_; }

 private:
  ParamStore<T>* store_ = nullptr;
  Settings s_;
  std::vector<Tensor<T>> m_, v_;
  std::vector<long> t_;
};

// Global-norm gradient clipping; returns the pre-clip norm.
template <typename T>
double clip_global_norm(std::vector<Tensor<T>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads)
    for (size_t e = 0; e < g.numel(); ++e) sq += double(g[e]) * double(g[e]);
  double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    T scale = T(max_norm / norm);
    for (auto& g : grads)
      for (size_t e = 0; e < g.numel(); ++e) g[e] *= scale;
  }
  return norm;
}

}  // namespace transcp
