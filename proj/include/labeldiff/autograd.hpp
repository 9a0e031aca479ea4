#pragma once

// Minimal reverse-mode differentiation over dense double tensors.
//
// Layout conventions: feature maps are NHWC ([B, H, W, C]); token sequences are
// [B, N, C]; matrices are row-major. Every forward product goes through
// `row_gemm`, whose per-row accumulation order does not depend on the number of
// rows, so a sample produces bit-identical activations whether it is evaluated
// alone or inside a batch.

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace labeldiff::ag {

using Shape = std::vector<int>;

// 64-byte aligned storage: vectorized kernels then peel identically on every
// run, keeping results independent of where the allocator put a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};
using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Shape shape, std::vector<double> values);
  static Var zeros(Shape shape);
  static Var parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(i < 0 ? node_->shape.size() + i : i); }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> value() const { return node_->value; }
  std::span<double> mutable_value() { return node_->value; }
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad();

  double item() const;
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Backpropagates from a scalar, accumulating into every reachable leaf.
void backward(const Var& root);

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// C[m, n] = A[m, k] * B[k, n]; row-independent accumulation.
void row_gemm(int m, int n, int k, const double* a, const double* b, double* c);

// ---- ops -----------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var silu(const Var& x);

// x[..., K] * w[K, N] (+ bias[N]) -> [..., N]
Var matmul(const Var& x, const Var& w);
Var linear(const Var& x, const Var& w, const Var& bias);

// x[B, H, W, C] * w[k*k*C, O] (+ bias[O]); zero padding.
Var conv2d(const Var& x, const Var& w, const Var& bias, int kernel, int stride, int pad);

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// x[B, ..., C] + v[B, C], broadcast over the middle dimensions.
Var add_per_sample(const Var& x, const Var& v);

// Concatenation / slicing along the last axis (all leading dims equal).
Var concat_last(const Var& a, const Var& b);
Var slice_last(const Var& x, int start, int count);

// Concatenation / slicing along axis 1 of [B, N, C].
Var concat_tokens(const Var& a, const Var& b);
Var slice_tokens(const Var& x, int start, int count);

// Concatenation along axis 0 (trailing dims equal).
Var stack(const std::vector<Var>& parts);

Var reshape(const Var& x, Shape shape);
Var upsample_nearest2(const Var& x);

// a[B, R, K] * b[B, K, N] -> [B, R, N]
Var bmm(const Var& a, const Var& b);
// a[B, R, K] * b[B, N, K]^T -> [B, R, N]
Var bmm_nt(const Var& a, const Var& b);
Var softmax_last(const Var& x);

// Mean of table rows selected by ids -> [1, D].
Var embedding_mean(const Var& table, std::span<const int> ids);

// Mean squared difference over all elements -> scalar.
Var mse(const Var& pred, const Var& target);
// Mean binary cross-entropy with logits; targets in {0, 1}.
Var bce_with_logits(const Var& logits, const Var& target);

}  // namespace labeldiff::ag
