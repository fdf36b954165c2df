#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pldr/errors.hpp"

namespace pldr {

using Shape = std::vector<int>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first use
  bool requires_grad = false;
};

// Value-semantic handle onto a shared node. Copies alias the same storage,
// which is what the tape closures rely on.
template <typename T>
class Tensor {
 public:
  Tensor() : node_(std::make_shared<Node<T>>()) {}

  explicit Tensor(Shape shape) : node_(std::make_shared<Node<T>>()) {
    node_->shape = std::move(shape);
    node_->value.assign(numel(node_->shape), T(0));
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
    if (values.size() != numel(shape))
      throw shape_error("tensor: " + std::to_string(values.size()) +
                        " values for shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  size_t size() const { return node_->value.size(); }

  int rows() const {
    if (rank() != 2) throw shape_error("rows: tensor is not 2-d, shape " + shape_str(shape()));
    return node_->shape[0];
  }
  int cols() const {
    if (rank() != 2) throw shape_error("cols: tensor is not 2-d, shape " + shape_str(shape()));
    return node_->shape[1];
  }

  // handle semantics: const methods hand out mutable storage, like a shared_ptr
  T* data() const { return node_->value.data(); }
  std::vector<T>& values() const { return node_->value; }

  T item() const {
    if (size() != 1) throw shape_error("item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
  }

  T& at(int r, int c) const { return node_->value[static_cast<size_t>(r) * cols() + c]; }
  T& at(int i) const { return node_->value[static_cast<size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) const { node_->requires_grad = b; }

  std::vector<T>& grad() const {
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), T(0));
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() const {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Wengert list. Ops append a closure that scatters the output grad back to
// the inputs; backward() replays them in reverse.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> vjp) { ops_.push_back(std::move(vjp)); }

  size_t size() const { return ops_.size(); }

  void backward(Tensor<T> loss) {
    if (loss.size() != 1) throw shape_error("backward: loss must be scalar");
    loss.grad()[0] = T(1);
    for (size_t i = ops_.size(); i-- > 0;) ops_[i]();
  }

  void clear() { ops_.clear(); }

  static Tape*& active() {
    thread_local Tape* t = nullptr;
    return t;
  }

  // RAII activation; no tape active means inference mode, nothing is recorded.
  struct Scope {
    Tape tape;
    Tape* prev;
    Scope() : prev(active()) { active() = &tape; }
    ~Scope() { active() = prev; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
  };

 private:
  std::vector<std::function<void()>> ops_;
};

template <typename T>
inline bool tracing(const Tensor<T>& a) {
  return Tape<T>::active() != nullptr && a.requires_grad();
}

template <typename T>
inline bool tracing(const Tensor<T>& a, const Tensor<T>& b) {
  return Tape<T>::active() != nullptr && (a.requires_grad() || b.requires_grad());
}

template <typename T>
inline bool tracing(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
  return Tape<T>::active() != nullptr &&
         (a.requires_grad() || b.requires_grad() || c.requires_grad());
}

}  // namespace pldr
