#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgmlp {

using Shape = std::vector<std::size_t>;
using TensorId = std::uint64_t;

template <typename T>
class Tape;

// Error hierarchy shared by every module. Callers that only care about
// "something went wrong at runtime" catch cgmlp::Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class TapeError : public Error {
 public:
  using Error::Error;
};

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// When enabled (the default), every op scans its inputs and throws
// NonFiniteError on the first NaN/Inf it consumes.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// Worker threads used inside matrix kernels. Work is split by output rows, so
// results are bitwise identical for every thread count. Default 1.
void set_num_threads(int n);
int num_threads();

// Keeps large freed blocks in the heap instead of returning them to the OS,
// so per-step tensor buffers are reused without page faults. Process-wide;
// no effect outside glibc.
void retain_heap_memory();

// Dense row-major tensor. Copies share storage and identity (same id);
// clone() produces an independent tensor with a fresh id. Values are treated
// as immutable except through mutable_data(), which the optimizer and
// gradient checker use on parameters between forward passes.
template <typename T>
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value);
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
  static Tensor scalar(T value) { return full({}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_->size(); }
  bool empty() const { return data_->empty(); }

  std::span<const T> data() const { return *data_; }
  std::span<T> mutable_data() { return *data_; }
  const T* raw() const { return data_->data(); }

  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  TensorId id() const { return id_; }
  Tape<T>* tape() const { return tape_; }

  // Same values, fresh id, detached from any tape.
  Tensor clone() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_->begin(), data_->end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  friend class Tape<T>;

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  TensorId id_ = 0;
  Tape<T>* tape_ = nullptr;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cgmlp
