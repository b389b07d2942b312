#include "progan/optim.hpp"

#include <cmath>

namespace progan {

template <class T>
std::size_t ParameterStore<T>::add(std::string name, BasicTensor<T> value) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  m_.push_back(BasicTensor<T>::zeros(value.shape()));
  v_.push_back(BasicTensor<T>::zeros(value.shape()));
  values_.push_back(value.detach());
  return values_.size() - 1;
}

template <class T>
std::optional<std::size_t> ParameterStore<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

template <class T>
void ParameterStore<T>::set_value(std::size_t i, BasicTensor<T> value) {
  if (value.shape() != values_.at(i).shape()) {
    throw ShapeError("parameter " + names_[i] + " expects shape " + to_string(values_[i].shape()) + ", got " +
                     to_string(value.shape()));
  }
  values_[i] = value.detach();
}

template <class T>
void ParameterStore<T>::set_moments(std::size_t i, BasicTensor<T> m, BasicTensor<T> v) {
  const auto& shape = values_.at(i).shape();
  if (m.shape() != shape || v.shape() != shape) {
    throw ShapeError("moment buffers for " + names_[i] + " must have shape " + to_string(shape));
  }
  m_[i] = m.detach();
  v_[i] = v.detach();
}

template <class T>
void ParameterStore<T>::set_step(std::int64_t step) {
  if (step < 0) throw DomainError("optimizer step counter must be non-negative");
  step_ = step;
}

template <class T>
std::vector<BasicTensor<T>> ParameterStore<T>::bind(Tape<T>& tape) const {
  std::vector<BasicTensor<T>> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(tape.watch(v));
  return out;
}

template <class T>
void adam_step_impl(ParameterStore<T>& store, std::span<const BasicTensor<T>> grads, double lr, double beta1,
                    double beta2, double eps) {
  if (grads.size() != store.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(store.size()) + " parameters");
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (grads[i].shape() != store.values_[i].shape()) {
      throw ShapeError("adam_step: gradient for " + store.names_[i] + " has shape " +
                       to_string(grads[i].shape()) + ", expected " + to_string(store.values_[i].shape()));
    }
  }
  const std::int64_t t = store.step_ + 1;
  const double correction1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto g = grads[i].data();
    const auto p = store.values_[i].data();
    const auto m = store.m_[i].data();
    const auto v = store.v_[i].data();
    std::vector<T> np(p.size()), nm(p.size()), nv(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = beta1 * m[j] + (1.0 - beta1) * gj;
      const double vj = beta2 * v[j] + (1.0 - beta2) * gj * gj;
      const double update = lr * (mj / correction1) / (std::sqrt(vj / correction2) + eps);
      nm[j] = static_cast<T>(mj);
      nv[j] = static_cast<T>(vj);
      np[j] = static_cast<T>(p[j] - update);
    }
    const auto& shape = store.values_[i].shape();
    store.values_[i] = BasicTensor<T>(shape, std::move(np));
    store.m_[i] = BasicTensor<T>(shape, std::move(nm));
    store.v_[i] = BasicTensor<T>(shape, std::move(nv));
  }
  store.step_ = t;
}

template <class T>
void adam_step(ParameterStore<T>& store, std::span<const BasicTensor<T>> grads, const AdamConfig& config) {
  adam_step_impl(store, grads, config.learning_rate, config.beta1, config.beta2, config.eps);
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void adam_step(ParameterStore<float>&, std::span<const BasicTensor<float>>, const AdamConfig&);
template void adam_step(ParameterStore<double>&, std::span<const BasicTensor<double>>, const AdamConfig&);

}  // namespace progan
