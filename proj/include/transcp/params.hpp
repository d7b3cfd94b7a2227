#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "transcp/autodiff.hpp"
#include "transcp/rng.hpp"
#include "transcp/tensor.hpp"

namespace transcp {

// Optimizer grouping: the two-branch feature encoders train at a lower
// learning rate than the rest of the model.
enum class ParamGroup { encoder, main };

template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    ParamGroup group;
  };

  int add(const std::string& name, Tensor<T> value, ParamGroup group) {
    TCP_CHECK(!by_name_.count(name), "duplicate parameter name: ", name);
    int id = int(entries_.size());
    entries_.push_back({name, std::move(value), group});
    by_name_[name] = id;
    return id;
  }

  size_t size() const { return entries_.size(); }
  Entry& entry(int id) { return entries_.at(size_t(id)); }
  const Entry& entry(int id) const { return entries_.at(size_t(id)); }
  Tensor<T>& value(int id) { return entries_.at(size_t(id)).value; }
  const Tensor<T>& value(int id) const { return entries_.at(size_t(id)).value; }

  int find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? -1 : it->second;
  }

  size_t total_scalars() const {
    size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> by_name_;
};

// Per-forward-pass context: memoizes one leaf per parameter so a sample's
// graph shares leaves across modules, and carries the training flags.
template <typename T>
struct Workspace {
  ParamStore<T>* store = nullptr;
  bool training = false;  // enables dropout
  bool grads = false;     // parameter leaves require grad
  Rng* rng = nullptr;     // dropout mask source

  std::unordered_map<int, Var<T>> leaves;

  explicit Workspace(ParamStore<T>& s, bool training_ = false,
                     Rng* rng_ = nullptr)
      : store(&s), training(training_), grads(training_), rng(rng_) {}

  Var<T> param(int id) {
    auto it = leaves.find(id);
    if (it != leaves.end()) return it->second;
    Var<T> v = leaf(store->value(id), grads);
    leaves.emplace(id, v);
    return v;
  }

  // Gradient of a parameter after backward(); zeros if the parameter did not
  // participate in the graph.
  Tensor<T> grad_of(int id) const {
    auto it = leaves.find(id);
    if (it == leaves.end() || it->second->grad.empty())
      return Tensor<T>(store->value(id).shape());
    return it->second->grad;
  }
};

// ---- initializers ----

template <typename T>
Tensor<T> xavier_uniform(Rng& rng, std::vector<size_t> shape, size_t fan_in,
                         size_t fan_out) {
  Tensor<T> t(shape);
  double a = std::sqrt(6.0 / double(fan_in + fan_out));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = T(rng.uniform(-a, a));
  return t;
}

template <typename T>
Tensor<T> normal_init(Rng& rng, std::vector<size_t> shape, double stddev) {
  Tensor<T> t(shape);
  for (size_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal() * stddev);
  return t;
}

}  // namespace transcp
