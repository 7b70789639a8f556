#pragma once
// Named trainable parameters with deterministic registration order.

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mer/rng.hpp"
#include "mer/tensor.hpp"

namespace mer {

template <class T>
class ParamStoreT {
 public:
  using value_type = T;

  TensorT<T>& add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    index_[name] = params_.size();
    names_.push_back(name);
    params_.push_back(TensorT<T>::zeros(std::move(shape), /*requires_grad=*/true));
    return params_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  TensorT<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return params_[it->second];
  }
  const TensorT<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return params_[it->second];
  }

  size_t size() const { return params_.size(); }
  const std::string& name(size_t i) const { return names_[i]; }
  TensorT<T>& param(size_t i) { return params_[i]; }
  const TensorT<T>& param(size_t i) const { return params_[i]; }

  int64_t total_scalars() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  // deep copy (fresh storage, values preserved, grads dropped)
  ParamStoreT clone() const {
    ParamStoreT out;
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& t = out.add(names_[i], params_[i].shape());
      t.values() = params_[i].values();
    }
    return out;
  }

  template <class U>
  ParamStoreT<U> cast() const {
    ParamStoreT<U> out;
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& t = out.add(names_[i], params_[i].shape());
      for (size_t j = 0; j < params_[i].values().size(); ++j)
        t.values()[j] = U(params_[i].values()[j]);
    }
    return out;
  }

 private:
  std::vector<TensorT<T>> params_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, size_t> index_;
};

using ParamStore = ParamStoreT<float>;

// uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
template <class T>
void init_uniform_fanin(TensorT<T>& t, int64_t fan_in, Rng& rng) {
  const float a = 1.0f / std::sqrt(float(fan_in));
  for (auto& v : t.values()) v = T(rng.symmetric(a));
}

template <class T>
void init_constant(TensorT<T>& t, T v) {
  std::fill(t.values().begin(), t.values().end(), v);
}

}  // namespace mer
