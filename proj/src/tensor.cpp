#include "mda/tensor.hpp"

#include <sstream>

namespace mda {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, ArrayType values, bool requires_grad)
    : data_(std::make_shared<Storage>()) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor values (" + std::to_string(values.size()) +
                     ") do not match shape " + shape_string(shape));
  }
  data_->shape = std::move(shape);
  data_->values = std::move(values);
  data_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), ArrayType::Zero(n), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value) {
  ArrayType v(1);
  v[0] = value;
  return Tensor(Shape{}, std::move(v));
}

template <typename Scalar>
const Shape& Tensor<Scalar>::shape() const {
  if (!data_) throw std::logic_error("use of undefined tensor");
  return data_->shape;
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  const Shape& s = shape();
  if (axis < 0) axis += static_cast<Index>(s.size());
  if (axis < 0 || axis >= static_cast<Index>(s.size())) {
    throw ShapeError("axis out of range for shape " + shape_string(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Index Tensor<Scalar>::rows() const {
  const Shape& s = shape();
  if (s.size() <= 1) return 1;
  if (s.size() == 2) return s[0];
  throw ShapeError("rank-2 view of " + shape_string(s));
}

template <typename Scalar>
Index Tensor<Scalar>::cols() const {
  const Shape& s = shape();
  if (s.empty()) return 1;
  if (s.size() == 1) return s[0];
  if (s.size() == 2) return s[1];
  throw ShapeError("rank-2 view of " + shape_string(s));
}

template <typename Scalar>
const typename Tensor<Scalar>::ArrayType& Tensor<Scalar>::values() const {
  if (!data_) throw std::logic_error("use of undefined tensor");
  return data_->values;
}

template <typename Scalar>
typename Tensor<Scalar>::ArrayType& Tensor<Scalar>::mutable_values() {
  if (!data_) throw std::logic_error("use of undefined tensor");
  if (!is_leaf()) throw AutodiffError("cannot mutate a recorded op result");
  return data_->values;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  }
  return values()[0];
}

template <typename Scalar>
bool Tensor<Scalar>::requires_grad() const {
  return data_ && data_->requires_grad;
}

template <typename Scalar>
void Tensor<Scalar>::set_requires_grad(bool flag) {
  if (!data_) throw std::logic_error("use of undefined tensor");
  data_->requires_grad = flag;
}

template <typename Scalar>
bool Tensor<Scalar>::has_grad() const {
  return data_ && data_->has_grad;
}

template <typename Scalar>
const typename Tensor<Scalar>::ArrayType& Tensor<Scalar>::grad() const {
  if (!has_grad()) throw AutodiffError("tensor has no gradient");
  return data_->grad;
}

template <typename Scalar>
void Tensor<Scalar>::accumulate_grad(const ArrayType& g) {
  if (g.size() != size()) throw ShapeError("gradient size mismatch");
  if (data_->has_grad) {
    data_->grad += g;
  } else {
    data_->grad = g;
    data_->has_grad = true;
  }
}

template <typename Scalar>
void Tensor<Scalar>::clear_grad() {
  if (!data_) return;
  data_->grad.resize(0);
  data_->has_grad = false;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  Tensor t;
  t.data_ = std::make_shared<Storage>();
  t.data_->shape = shape();
  t.data_->values = values();
  return t;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  return Tensor(shape(), values(), requires_grad());
}

template <typename Scalar>
int Tape<Scalar>::slot_for(const Tensor<Scalar>& t) {
  if (!t.is_leaf()) {
    if (t.tape_ != this || t.generation_ != generation_) {
      throw AutodiffError("operand recorded on a different or reset tape");
    }
    return t.node_;
  }
  if (!t.requires_grad()) return -1;
  auto [it, inserted] = leaf_slots_.try_emplace(t.storage_id(), slots_);
  if (inserted) {
    leaves_.resize(static_cast<std::size_t>(slots_) + 1);
    leaves_[static_cast<std::size_t>(slots_)] = t;
    ++slots_;
  }
  return it->second;
}

template <typename Scalar>
Tensor<Scalar> Tape<Scalar>::record(
    std::string_view kind, std::span<const Tensor<Scalar>* const> operands,
    Shape shape, ArrayType values, BackwardFn fn) {
  if (!values.allFinite()) {
    throw NonFiniteError(std::string(kind) + ": non-finite output");
  }
  Tensor<Scalar> out(std::move(shape), std::move(values));
  bool tracked = false;
  for (const Tensor<Scalar>* op : operands) {
    if (op->requires_grad()) tracked = true;
  }
  if (!tracked) return out;

  Entry entry;
  entry.kind = std::string(kind);
  entry.inputs.reserve(operands.size());
  for (const Tensor<Scalar>* op : operands) entry.inputs.push_back(slot_for(*op));
  entry.output = slots_++;
  leaves_.resize(static_cast<std::size_t>(slots_));

  out.data_->requires_grad = true;
  out.node_ = entry.output;
  out.tape_ = this;
  out.generation_ = generation_;

  entries_.push_back(std::move(entry));
  fns_.push_back(std::move(fn));
  outputs_.push_back(out);
  return out;
}

template <typename Scalar>
std::vector<LeafGradient<Scalar>> Tape<Scalar>::gradients(
    const Tensor<Scalar>& loss) {
  if (loss.size() != 1) {
    throw AutodiffError("backward: loss must be scalar, got " +
                        shape_string(loss.shape()));
  }
  std::vector<LeafGradient<Scalar>> result;
  if (loss.is_leaf()) {
    if (!loss.requires_grad()) throw AutodiffError("backward: loss not on tape");
    result.push_back({loss, ArrayType::Ones(1)});
    clear();
    return result;
  }
  if (loss.tape_ != this || loss.generation_ != generation_) {
    throw AutodiffError("backward: loss not on tape");
  }

  std::vector<ArrayType> grads(static_cast<std::size_t>(slots_));
  grads[static_cast<std::size_t>(loss.node_)] = ArrayType::Ones(1);
  GradientSink sink;
  sink.grads_ = &grads;
  for (std::size_t i = entries_.size(); i-- > 0;) {
    const Entry& e = entries_[i];
    ArrayType& g = grads[static_cast<std::size_t>(e.output)];
    if (g.size() == 0) continue;
    sink.inputs_ = &e.inputs;
    fns_[i](g, outputs_[i].values(), sink);
    g.resize(0);
  }
  for (std::size_t slot = 0; slot < leaves_.size(); ++slot) {
    if (!leaves_[slot].defined()) continue;
    if (grads[slot].size() == 0) {
      result.push_back({leaves_[slot], ArrayType::Zero(leaves_[slot].size())});
    } else {
      result.push_back({leaves_[slot], std::move(grads[slot])});
    }
  }
  clear();
  return result;
}

template <typename Scalar>
void Tape<Scalar>::clear() {
  entries_.clear();
  fns_.clear();
  outputs_.clear();
  leaves_.clear();
  leaf_slots_.clear();
  slots_ = 0;
  ++generation_;
}

template <typename Scalar>
void backward(Tape<Scalar>& tape, const Tensor<Scalar>& loss) {
  for (auto& lg : tape.gradients(loss)) lg.leaf.accumulate_grad(lg.grad);
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward(Tape<float>&, const Tensor<float>&);
template void backward(Tape<double>&, const Tensor<double>&);

}  // namespace mda
