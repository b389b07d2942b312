#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "progan/tensor.hpp"

namespace progan {

/// Named parameters with their Adam moment buffers.
template <class T>
class ParameterStore {
 public:
  /// Registers a parameter and returns its index. Names must be unique.
  std::size_t add(std::string name, BasicTensor<T> value);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::optional<std::size_t> find(const std::string& name) const;

  const BasicTensor<T>& value(std::size_t i) const { return values_.at(i); }
  std::span<const BasicTensor<T>> values() const { return values_; }
  /// Replaces a value; the shape must not change.
  void set_value(std::size_t i, BasicTensor<T> value);

  const BasicTensor<T>& first_moment(std::size_t i) const { return m_.at(i); }
  const BasicTensor<T>& second_moment(std::size_t i) const { return v_.at(i); }
  void set_moments(std::size_t i, BasicTensor<T> m, BasicTensor<T> v);

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t step);

  /// Watched copies of every parameter, in index order.
  std::vector<BasicTensor<T>> bind(Tape<T>& tape) const;

  template <class U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (std::size_t i = 0; i < size(); ++i) {
      out.add(names_[i], values_[i].template cast<U>());
      out.set_moments(i, m_[i].template cast<U>(), v_[i].template cast<U>());
    }
    out.set_step(step_);
    return out;
  }

 private:
  template <class U>
  friend void adam_step_impl(ParameterStore<U>&, std::span<const BasicTensor<U>>, double, double, double, double);

  std::vector<std::string> names_;
  std::vector<BasicTensor<T>> values_;
  std::vector<BasicTensor<T>> m_;
  std::vector<BasicTensor<T>> v_;
  std::int64_t step_ = 0;
};

struct AdamConfig {
  double learning_rate = 0.0015;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over every parameter in the store.
/// `grads` must be aligned with the store's indices.
template <class T>
void adam_step(ParameterStore<T>& store, std::span<const BasicTensor<T>> grads, const AdamConfig& config);

}  // namespace progan
