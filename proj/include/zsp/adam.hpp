#pragma once

#include <map>
#include <string>
#include <vector>

#include "zsp/tensor.hpp"

namespace zsp {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;

  void validate() const {
    if (!(learning_rate > 0)) throw ContractError("adam: learning_rate must be positive");
    if (!(beta1 > 0 && beta1 < 1)) throw ContractError("adam: beta1 must lie in (0,1)");
    if (!(beta2 > 0 && beta2 < 1)) throw ContractError("adam: beta2 must lie in (0,1)");
    if (!(epsilon > 0)) throw ContractError("adam: epsilon must be positive");
    if (!(weight_decay >= 0)) throw ContractError("adam: weight_decay must be non-negative");
  }
};

/// Named trainable tensors plus Adam moment state. Iteration order is the
/// insertion order, which fixes the checkpoint layout and update order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool decay = true;  // biases and layer-norm parameters opt out
    std::vector<double> m, v;
  };

  ParamStore() = default;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  /// Copies are deep: the copy owns fresh parameter tensors.
  ParamStore(const ParamStore& o) : step_count(o.step_count), index_(o.index_) {
    entries_.reserve(o.entries_.size());
    for (const auto& e : o.entries_) {
      Tensor t(e.tensor.shape(), std::vector<double>(e.tensor.values().begin(), e.tensor.values().end()), true);
      entries_.push_back(Entry{e.name, std::move(t), e.decay, e.m, e.v});
    }
  }
  ParamStore& operator=(const ParamStore& o) {
    if (this != &o) *this = ParamStore(o);
    return *this;
  }

  Tensor& add(const std::string& name, Tensor t, bool decay = true) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    if (!t.requires_grad()) t = Tensor(t.shape(), std::vector<double>(t.values().begin(), t.values().end()), true);
    index_[name] = entries_.size();
    const std::size_t n = t.size();
    entries_.push_back(Entry{name, std::move(t), decay, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
  }
  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.clear_grad();
  }

  /// FNV-1a over every parameter value in order.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : entries_) h = fnv1a(e.tensor.values().data(), e.tensor.size() * sizeof(double), h);
    return h;
  }

  std::uint64_t step_count = 0;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// One bias-corrected Adam update with decoupled weight decay
/// (p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)). Clears gradients.
inline void adam_step(ParamStore& params, const AdamConfig& cfg) {
  cfg.validate();
  for (const auto& e : params.entries())
    if (!e.tensor.has_grad())
      throw ContractError("adam_step: parameter '" + e.name + "' has no gradient");
  ++params.step_count;
  const double t = static_cast<double>(params.step_count);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& e : params.entries()) {
    auto p = e.tensor.mutable_values();
    auto g = e.tensor.grad();
    const double wd = e.decay ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
      e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = e.m[i] / c1;
      const double vhat = e.v[i] / c2;
      p[i] -= cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.epsilon) + wd * p[i]);
    }
    e.tensor.clear_grad();
  }
}

}  // namespace zsp
