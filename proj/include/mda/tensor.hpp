#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mda {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

Index numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename Scalar>
class Tape;

// Dense row-major tensor handle. Copies share storage; values of op results
// are never mutated after creation, only leaves are (by optimizers).
template <typename Scalar>
class Tensor {
 public:
  using ArrayType = Array<Scalar>;
  using MatrixType = RowMatrix<Scalar>;

  Tensor() = default;
  Tensor(Shape shape, ArrayType values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(Scalar value);
  template <typename Derived>
  static Tensor from_matrix(const Eigen::DenseBase<Derived>& m,
                            bool requires_grad = false) {
    MatrixType rm = m;
    ArrayType values = Eigen::Map<const ArrayType>(rm.data(), rm.size());
    return Tensor({rm.rows(), rm.cols()}, std::move(values), requires_grad);
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const;
  Index rank() const { return static_cast<Index>(shape().size()); }
  Index size() const { return values().size(); }
  Index dim(Index axis) const;
  // Rank-2 view; rank-1 tensors are read as a single row, scalars as 1x1.
  Index rows() const;
  Index cols() const;

  const ArrayType& values() const;
  ArrayType& mutable_values();
  Eigen::Map<const MatrixType> matrix() const {
    return {values().data(), rows(), cols()};
  }
  Scalar item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  const ArrayType& grad() const;
  void accumulate_grad(const ArrayType& g);
  void clear_grad();

  bool is_leaf() const { return node_ < 0; }
  // Same values, no recorded history.
  Tensor detach() const;
  // Deep copy of values into fresh storage (keeps requires_grad).
  Tensor clone() const;
  const void* storage_id() const { return data_.get(); }

 private:
  struct Storage {
    Shape shape;
    ArrayType values;
    bool requires_grad = false;
    ArrayType grad;
    bool has_grad = false;
  };

  std::shared_ptr<Storage> data_;
  int node_ = -1;
  const Tape<Scalar>* tape_ = nullptr;
  std::uint64_t generation_ = 0;

  friend class Tape<Scalar>;
};

// Per-leaf gradients extracted from a tape, keyed by leaf storage.
template <typename Scalar>
struct LeafGradient {
  Tensor<Scalar> leaf;
  Array<Scalar> grad;
};

// Ordered record of primitive applications for reverse-mode differentiation.
// A tape is confined to one thread; `TapeScope` makes it the thread's active
// tape so primitives record onto it.
template <typename Scalar>
class Tape {
 public:
  using ArrayType = Array<Scalar>;

  class GradientSink {
   public:
    bool wants(std::size_t operand) const {
      return (*inputs_)[operand] >= 0;
    }
    template <typename Expr>
    void add(std::size_t operand, const Expr& g) {
      const int slot = (*inputs_)[operand];
      if (slot < 0) return;
      ArrayType& buf = (*grads_)[slot];
      if (buf.size() == 0) {
        buf = g;
      } else {
        buf += g;
      }
    }

   private:
    friend class Tape;
    const std::vector<int>* inputs_ = nullptr;
    std::vector<ArrayType>* grads_ = nullptr;
  };

  // grad_out and the op's own output values are provided to the rule.
  using BackwardFn = std::function<void(const ArrayType& grad_out,
                                        const ArrayType& out, GradientSink&)>;

  struct Entry {
    std::string kind;
    std::vector<int> inputs;
    int output = -1;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  // Records `kind` when any operand requires grad; otherwise returns an
  // untracked tensor.
  Tensor<Scalar> record(std::string_view kind,
                        std::span<const Tensor<Scalar>* const> operands,
                        Shape shape, ArrayType values, BackwardFn fn);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  // Reverse sweep from a scalar loss. Returns gradients of every leaf with
  // requires_grad that the loss depends on, then resets the tape.
  std::vector<LeafGradient<Scalar>> gradients(const Tensor<Scalar>& loss);
  void clear();

 private:
  int slot_for(const Tensor<Scalar>& t);

  std::vector<Entry> entries_;
  std::vector<BackwardFn> fns_;
  std::vector<Tensor<Scalar>> outputs_;
  std::vector<Tensor<Scalar>> leaves_;  // slot -> leaf (undefined otherwise)
  std::unordered_map<const void*, int> leaf_slots_;
  int slots_ = 0;
  std::uint64_t generation_ = 1;

  static inline thread_local Tape* active_ = nullptr;
  template <typename>
  friend class TapeScope;
};

template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(Tape<Scalar>& tape) : previous_(Tape<Scalar>::active_) {
    Tape<Scalar>::active_ = &tape;
  }
  ~TapeScope() { Tape<Scalar>::active_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Scalar>* previous_;
};

// Backward pass that accumulates into each leaf's `grad`.
template <typename Scalar>
void backward(Tape<Scalar>& tape, const Tensor<Scalar>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mda
