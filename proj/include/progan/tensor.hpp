#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "progan/errors.hpp"

namespace progan {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <class T>
class Tape;

namespace detail {
template <class T>
struct TapeState;
}

/// Dense row-major array with an optional link into a Tape.
///
/// The buffer is immutable once constructed and shared between copies, so
/// copying a tensor is cheap. A tensor produced by an operation on a
/// recording tape carries the index of the node that produced it; the tape
/// is referenced weakly, and a tensor that outlives its tape simply behaves
/// as a constant.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor();
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor zeros(Shape shape);
  static BasicTensor full(Shape shape, T value);
  static BasicTensor scalar(T value);

  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(data_->size()); }
  std::span<const T> data() const { return {data_->data(), data_->size()}; }
  std::vector<T> to_vector() const { return *data_; }

  /// Value of a single-element tensor.
  T item() const;

  bool requires_grad() const;
  /// Same values, no graph link.
  BasicTensor detach() const;

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_->begin(), data_->end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  // Graph plumbing used by ops and Tape.
  std::shared_ptr<detail::TapeState<T>> tape_state() const { return tape_.lock(); }
  std::int64_t node() const { return node_; }
  void attach(const std::shared_ptr<detail::TapeState<T>>& tape, std::int64_t node) {
    tape_ = tape;
    node_ = node;
  }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  std::weak_ptr<detail::TapeState<T>> tape_;
  std::int64_t node_ = -1;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

namespace detail {

/// Returns one gradient per recorded input. `needs[i]` is false for inputs
/// that do not require a gradient; the function may return an empty tensor
/// for them.
template <class T>
using BackwardFn = std::function<std::vector<BasicTensor<T>>(const BasicTensor<T>& grad,
                                                             std::span<const bool> needs)>;

template <class T>
struct Node {
  const char* op = "leaf";
  std::vector<std::int64_t> parents;
  BackwardFn<T> backward;
  bool double_backward = true;
  Shape shape;
};

template <class T>
struct TapeState {
  // deque keeps node references stable while a create_graph backward appends
  std::deque<Node<T>> nodes;
  bool recording = true;
};

/// Appends a node for `out` if any input is attached to a recording tape.
/// Inputs attached to different live tapes are rejected.
template <class T>
BasicTensor<T> record(BasicTensor<T> out, const char* op,
                      std::initializer_list<const BasicTensor<T>*> inputs, BackwardFn<T> backward,
                      bool double_backward = true);

}  // namespace detail

/// Append-only record of the operations applied to watched tensors.
///
/// Nodes only ever refer to earlier nodes, so a reverse sweep over indices
/// is a valid topological order. With `create_graph` the sweep records its
/// own operations onto the same tape, which makes the returned gradients
/// differentiable.
template <class T>
class Tape {
 public:
  Tape();

  /// A handle on the tape that `value` is recorded on. Throws Error if the
  /// tensor is not attached to a live tape.
  static Tape attached_to(const BasicTensor<T>& value);

  /// Returns a copy of `value` registered as a differentiable leaf.
  BasicTensor<T> watch(const BasicTensor<T>& value);

  /// Gradients of the single-element `output` with respect to each tensor in
  /// `wrt`. Unreachable inputs get zeros of matching shape.
  std::vector<BasicTensor<T>> gradient(const BasicTensor<T>& output,
                                       std::span<const BasicTensor<T>> wrt,
                                       bool create_graph = false);

  std::size_t size() const { return state_->nodes.size(); }
  const detail::Node<T>& node(std::size_t index) const { return state_->nodes.at(index); }

 private:
  explicit Tape(std::shared_ptr<detail::TapeState<T>> state) : state_(std::move(state)) {}

  std::shared_ptr<detail::TapeState<T>> state_;
};

}  // namespace progan
