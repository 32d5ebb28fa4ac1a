#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sdrgnn/autodiff.hpp"
#include "sdrgnn/errors.hpp"
#include "sdrgnn/rng.hpp"
#include "sdrgnn/tensor.hpp"

namespace sdrgnn {

struct Parameter {
  std::string name;
  Var node;
  bool trainable = true;

  Tensor& value() { return node->value; }
  const Tensor& value() const { return node->value; }
  Tensor& grad() { return node->ensure_grad(); }
};

// Owns every trainable tensor, in creation order. Creation order is what
// makes initialization and optimizer sweeps reproducible, so it never
// changes once a parameter exists.
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed) : init_rng_(seed) {}

  Var create(const std::string& name, Tensor init, bool trainable = true) {
    if (index_.count(name)) throw ConfigError("parameter already exists: " + name);
    auto p = std::make_shared<Parameter>();
    p->name = name;
    p->node = trainable ? leaf(std::move(init)) : constant(std::move(init));
    p->trainable = trainable;
    index_[name] = params_.size();
    params_.push_back(p);
    return p->node;
  }

  // Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  Var create_uniform(const std::string& name, std::vector<int64_t> shape, int64_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = init_rng_.uniform(-bound, bound);
    return create(name, std::move(t));
  }

  Var create_zeros(const std::string& name, std::vector<int64_t> shape) {
    return create(name, Tensor(std::move(shape)));
  }

  std::shared_ptr<Parameter> find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second];
  }

  Var get_or_create(const std::string& name, const std::function<Tensor()>& init) {
    if (auto p = find(name)) return p->node;
    return create(name, init());
  }

  const std::vector<std::shared_ptr<Parameter>>& all() const { return params_; }

  void zero_grads() {
    for (auto& p : params_) {
      if (p->node->grad_live) p->node->grad.fill(0.0);
    }
  }

  int64_t count_trainable_elements() const {
    int64_t n = 0;
    for (const auto& p : params_)
      if (p->trainable) n += p->node->value.numel();
    return n;
  }

  // Raw value snapshot, keyed by name.
  std::unordered_map<std::string, Tensor> snapshot() const {
    std::unordered_map<std::string, Tensor> out;
    for (const auto& p : params_) out[p->name] = p->node->value;
    return out;
  }

  // Writes snapshot values back; parameters absent from the snapshot keep
  // their current values.
  void restore(const std::unordered_map<std::string, Tensor>& snap) {
    for (auto& p : params_) {
      auto it = snap.find(p->name);
      if (it == snap.end()) continue;
      if (!it->second.same_shape(p->node->value))
        throw ShapeError("restore: shape mismatch for " + p->name + ", expected " +
                         p->node->value.shape_str() + ", found " + it->second.shape_str());
      p->node->value = it->second;
    }
  }

 private:
  std::vector<std::shared_ptr<Parameter>> params_;
  std::unordered_map<std::string, size_t> index_;
  Rng init_rng_;
};

struct AdamConfig {
  double lr = 0.001;
  double weight_decay = 0.00001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam with decoupled weight decay. One step updates every
// trainable parameter and zeroes all gradients afterwards.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_; }

  void step(ParamStore& store) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& p : store.all()) {
      if (!p->trainable) continue;
      auto& value = p->node->value;
      auto& m_v = moments_[p->name];
      if (!m_v.first.same_shape(value)) {
        m_v.first = Tensor::zeros(value.shape());
        m_v.second = Tensor::zeros(value.shape());
      }
      const bool has_grad = p->node->grad_live;
      for (int64_t i = 0; i < value.numel(); ++i) {
        const double g = has_grad ? p->node->grad[i] : 0.0;
        double& m = m_v.first[i];
        double& v = m_v.second[i];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        value[i] *= 1.0 - cfg_.lr * cfg_.weight_decay;
        value[i] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps));
      }
    }
    store.zero_grads();
  }

  // Moment access for tests.
  const Tensor* first_moment(const std::string& name) const {
    auto it = moments_.find(name);
    return it == moments_.end() ? nullptr : &it->second.first;
  }
  const Tensor* second_moment(const std::string& name) const {
    auto it = moments_.find(name);
    return it == moments_.end() ? nullptr : &it->second.second;
  }

 private:
  AdamConfig cfg_;
  int64_t step_ = 0;
  std::unordered_map<std::string, std::pair<Tensor, Tensor>> moments_;
};

// Global L2-norm clip over all live gradients; returns the pre-clip norm.
inline double clip_gradients(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.all()) {
    if (!p->trainable || !p->node->grad_live) continue;
    for (int64_t i = 0; i < p->node->grad.numel(); ++i) sq += p->node->grad[i] * p->node->grad[i];
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : store.all()) {
      if (!p->trainable || !p->node->grad_live) continue;
      for (int64_t i = 0; i < p->node->grad.numel(); ++i) p->node->grad[i] *= s;
    }
  }
  return norm;
}

}  // namespace sdrgnn
