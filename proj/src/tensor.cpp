#include "progan/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "progan/ops.hpp"

namespace progan {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
BasicTensor<T>::BasicTensor() : shape_{}, data_(std::make_shared<const std::vector<T>>(1, T(0))) {}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
  if (progan::numel(shape_) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("buffer of " + std::to_string(data.size()) + " values does not match shape " +
                     to_string(shape_));
  }
  data_ = std::make_shared<const std::vector<T>>(std::move(data));
}

template <class T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <class T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value) {
  const auto n = progan::numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value));
}

template <class T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return BasicTensor(Shape{}, std::vector<T>{value});
}

template <class T>
std::int64_t BasicTensor<T>::dim(std::int64_t axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

template <class T>
T BasicTensor<T>::item() const {
  if (data_->size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return (*data_)[0];
}

template <class T>
bool BasicTensor<T>::requires_grad() const {
  return node_ >= 0 && !tape_.expired();
}

template <class T>
BasicTensor<T> BasicTensor<T>::detach() const {
  BasicTensor out;
  out.shape_ = shape_;
  out.data_ = data_;
  return out;
}

namespace detail {

template <class T>
BasicTensor<T> record(BasicTensor<T> out, const char* op,
                      std::initializer_list<const BasicTensor<T>*> inputs, BackwardFn<T> backward,
                      bool double_backward) {
  std::shared_ptr<TapeState<T>> tape;
  std::vector<std::int64_t> parents;
  parents.reserve(inputs.size());
  for (const auto* in : inputs) {
    auto state = in->node() >= 0 ? in->tape_state() : nullptr;
    if (!state) {
      parents.push_back(-1);
      continue;
    }
    if (!tape) {
      tape = state;
    } else if (tape != state) {
      throw Error(std::string(op) + ": inputs are recorded on different tapes");
    }
    parents.push_back(in->node());
  }
  if (!tape || !tape->recording) return out.detach();

  Node<T> node;
  node.op = op;
  node.parents = std::move(parents);
  node.backward = std::move(backward);
  node.double_backward = double_backward;
  node.shape = out.shape();
  tape->nodes.push_back(std::move(node));
  out.attach(tape, static_cast<std::int64_t>(tape->nodes.size()) - 1);
  return out;
}

}  // namespace detail

template <class T>
Tape<T>::Tape() : state_(std::make_shared<detail::TapeState<T>>()) {}

template <class T>
Tape<T> Tape<T>::attached_to(const BasicTensor<T>& value) {
  auto state = value.node() >= 0 ? value.tape_state() : nullptr;
  if (!state) throw Error("tensor is not recorded on a live tape");
  return Tape(std::move(state));
}

template <class T>
BasicTensor<T> Tape<T>::watch(const BasicTensor<T>& value) {
  detail::Node<T> node;
  node.shape = value.shape();
  state_->nodes.push_back(std::move(node));
  BasicTensor<T> out = value.detach();
  out.attach(state_, static_cast<std::int64_t>(state_->nodes.size()) - 1);
  return out;
}

namespace {

template <class T>
class RecordingScope {
 public:
  RecordingScope(detail::TapeState<T>& state, bool recording)
      : state_(state), previous_(state.recording) {
    state_.recording = recording;
  }
  ~RecordingScope() { state_.recording = previous_; }
  RecordingScope(const RecordingScope&) = delete;
  RecordingScope& operator=(const RecordingScope&) = delete;

 private:
  detail::TapeState<T>& state_;
  bool previous_;
};

}  // namespace

template <class T>
std::vector<BasicTensor<T>> Tape<T>::gradient(const BasicTensor<T>& output,
                                              std::span<const BasicTensor<T>> wrt,
                                              bool create_graph) {
  if (output.numel() != 1) {
    throw ShapeError("gradient() needs a single-element output, got shape " + to_string(output.shape()));
  }
  auto zeros_for_all = [&] {
    std::vector<BasicTensor<T>> out;
    out.reserve(wrt.size());
    for (const auto& w : wrt) out.push_back(BasicTensor<T>::zeros(w.shape()));
    return out;
  };
  if (output.tape_state() != state_ || output.node() < 0) return zeros_for_all();

  const auto root = static_cast<std::size_t>(output.node());
  std::unordered_set<std::int64_t> keep;
  for (const auto& w : wrt) {
    if (w.tape_state() == state_) keep.insert(w.node());
  }

  std::vector<BasicTensor<T>> grads(root + 1);
  std::vector<bool> has(root + 1, false);
  grads[root] = BasicTensor<T>::full(output.shape(), T(1));
  has[root] = true;

  RecordingScope<T> scope(*state_, create_graph);
  for (std::size_t i = root + 1; i-- > 0;) {
    if (!has[i]) continue;
    const detail::Node<T>& node = state_->nodes[i];
    if (!node.backward) continue;
    if (create_graph && !node.double_backward) {
      throw UnsupportedDoubleBackward(std::string("double backward is not implemented for ") + node.op);
    }
    const std::size_t arity = node.parents.size();
    auto needs = std::make_unique<bool[]>(arity);
    bool any = false;
    for (std::size_t p = 0; p < arity; ++p) {
      needs[p] = node.parents[p] >= 0;
      any = any || needs[p];
    }
    if (any) {
      auto backward = node.backward;
      auto parents = node.parents;
      auto in_grads = backward(grads[i], std::span<const bool>(needs.get(), arity));
      for (std::size_t p = 0; p < parents.size(); ++p) {
        if (parents[p] < 0) continue;
        const auto target = static_cast<std::size_t>(parents[p]);
        auto& g = in_grads.at(p);
        if (has[target]) {
          grads[target] = ops::add(grads[target], g);
        } else {
          grads[target] = std::move(g);
          has[target] = true;
        }
      }
    }
    if (!keep.contains(static_cast<std::int64_t>(i))) {
      grads[i] = BasicTensor<T>();
      has[i] = false;
    }
  }

  std::vector<BasicTensor<T>> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    const bool on_tape = w.tape_state() == state_ && w.node() >= 0 &&
                         static_cast<std::size_t>(w.node()) <= root && has[w.node()];
    result.push_back(on_tape ? grads[w.node()] : BasicTensor<T>::zeros(w.shape()));
  }
  return result;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class Tape<float>;
template class Tape<double>;
template BasicTensor<float> detail::record(BasicTensor<float>, const char*,
                                           std::initializer_list<const BasicTensor<float>*>,
                                           detail::BackwardFn<float>, bool);
template BasicTensor<double> detail::record(BasicTensor<double>, const char*,
                                            std::initializer_list<const BasicTensor<double>*>,
                                            detail::BackwardFn<double>, bool);

}  // namespace progan
