#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cgmlp/tensor.hpp"

namespace cgmlp {

// Gradient map keyed by tensor id.
template <typename T>
class Gradients {
 public:
  bool contains(TensorId id) const { return grads_.count(id) != 0; }
  bool contains(const Tensor<T>& t) const { return contains(t.id()); }

  // Throws TapeError when no gradient exists for `t`.
  const Tensor<T>& of(const Tensor<T>& t) const;
  const Tensor<T>& of(TensorId id) const;

  void accumulate(TensorId id, const Tensor<T>& g);
  void erase(TensorId id) { grads_.erase(id); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<TensorId, Tensor<T>> grads_;
};

// Reverse-mode record. Ops append one node per produced tensor; nodes are
// appended in execution order, so the sequence is topologically sorted.
template <typename T>
class Tape {
 public:
  // Receives the gradient of the node output and pushes parent gradients
  // into the sink. Contributions to tensors not on this tape are dropped.
  using BackwardFn = std::function<void(const Tensor<T>& grad_out, Gradients<T>& sink)>;

  struct Node {
    TensorId output;
    std::vector<TensorId> parents;
    std::string tag;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers `t` as a leaf. Parameters always receive a gradient from
  // backward(), zero-filled when the loss does not depend on them.
  Tensor<T> watch(const Tensor<T>& t, bool is_parameter = true);

  // Attaches `out` to this tape with the given backward rule.
  Tensor<T> record(Tensor<T> out, std::vector<TensorId> parents, std::string tag,
                   BackwardFn backward);

  bool contains(TensorId id) const { return known_.count(id) != 0; }
  const std::vector<Node>& nodes() const { return nodes_; }

  Gradients<T> backward(const Tensor<T>& loss) const;

 private:
  std::vector<Node> nodes_;
  std::unordered_set<TensorId> known_;
  std::vector<Tensor<T>> parameters_;
};

extern template class Gradients<float>;
extern template class Gradients<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace cgmlp
