#include "cgmlp/tensor.hpp"

#include <atomic>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cgmlp {
namespace {

std::atomic<TensorId> g_next_id{1};
std::atomic<bool> g_finite_checks{true};
std::atomic<int> g_num_threads{1};

TensorId next_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

void set_num_threads(int n) { g_num_threads = n < 1 ? 1 : n; }
int num_threads() { return g_num_threads; }

void retain_heap_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

template <typename T>
Tensor<T>::Tensor() : data_(std::make_shared<std::vector<T>>()), id_(next_id()) {}

template <typename T>
Tensor<T>::Tensor(Shape shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<T>>(cgmlp::numel(shape_), T(0))),
      id_(next_id()) {
  for (std::size_t e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape_));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<T>>(std::move(values))),
      id_(next_id()) {
  for (std::size_t e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape_));
  }
  if (cgmlp::numel(shape_) != data_->size()) {
    throw ShapeError("shape " + to_string(shape_) + " needs " +
                     std::to_string(cgmlp::numel(shape_)) + " values, got " +
                     std::to_string(data_->size()));
  }
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.data_->begin(), t.data_->end(), value);
  return t;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
  }
  return shape_[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (data_->size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return (*data_)[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index rank mismatch for " + to_string(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw ShapeError("index out of range for " + to_string(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return (*data_)[flat];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(shape_, *data_);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace cgmlp
