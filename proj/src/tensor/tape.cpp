#include "cgmlp/tape.hpp"

#include <algorithm>

namespace cgmlp {

template <typename T>
const Tensor<T>& Gradients<T>::of(TensorId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) throw TapeError("no gradient recorded for tensor id " + std::to_string(id));
  return it->second;
}

template <typename T>
const Tensor<T>& Gradients<T>::of(const Tensor<T>& t) const {
  return of(t.id());
}

template <typename T>
void Gradients<T>::accumulate(TensorId id, const Tensor<T>& g) {
  auto it = grads_.find(id);
  if (it == grads_.end()) {
    grads_.emplace(id, g);
    return;
  }
  Tensor<T>& acc = it->second;
  if (acc.shape() != g.shape()) {
    throw ShapeError("gradient shape " + to_string(g.shape()) + " does not match " +
                     to_string(acc.shape()));
  }
  // Stored gradients may alias an op's saved buffer; copy before mutating.
  Tensor<T> sum = acc.clone();
  auto dst = sum.mutable_data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  acc = std::move(sum);
}

template <typename T>
Tensor<T> Tape<T>::watch(const Tensor<T>& t, bool is_parameter) {
  if (t.tape_ != nullptr && t.tape_ != this) {
    throw TapeError("tensor is already registered on another tape");
  }
  Tensor<T> watched = t;
  watched.tape_ = this;
  known_.insert(t.id());
  if (is_parameter &&
      std::none_of(parameters_.begin(), parameters_.end(),
                   [&](const Tensor<T>& p) { return p.id() == t.id(); })) {
    parameters_.push_back(watched);
  }
  return watched;
}

template <typename T>
Tensor<T> Tape<T>::record(Tensor<T> out, std::vector<TensorId> parents, std::string tag,
                          BackwardFn backward) {
  for (TensorId p : parents) {
    if (!known_.count(p)) {
      throw TapeError(tag + ": parent tensor " + std::to_string(p) + " is not on this tape");
    }
  }
  out.tape_ = this;
  known_.insert(out.id());
  nodes_.push_back(Node{out.id(), std::move(parents), std::move(tag), std::move(backward)});
  return out;
}

template <typename T>
Gradients<T> Tape<T>::backward(const Tensor<T>& loss) const {
  if (loss.tape() != this || !known_.count(loss.id())) {
    throw TapeError("backward: loss was not produced on this tape");
  }
  if (loss.rank() != 0) {
    throw TapeError("backward: loss must be scalar-shaped, got " + to_string(loss.shape()));
  }

  std::unordered_set<TensorId> keep;
  for (const auto& p : parameters_) keep.insert(p.id());

  Gradients<T> grads;
  grads.accumulate(loss.id(), Tensor<T>::ones({}));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!grads.contains(it->output)) continue;
    Tensor<T> g = grads.of(it->output);
    if (!keep.count(it->output)) grads.erase(it->output);
    it->backward(g, grads);
  }

  Gradients<T> out;
  for (const auto& p : parameters_) {
    if (grads.contains(p.id())) {
      out.accumulate(p.id(), grads.of(p.id()));
    } else {
      out.accumulate(p.id(), Tensor<T>::zeros(p.shape()));
    }
  }
  return out;
}

template class Gradients<float>;
template class Gradients<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace cgmlp
