#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace virt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  // Empty until the first gradient contribution arrives.
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
};

}  // namespace detail

/// Dense row-major array of doubles.
///
/// A Tensor is a cheap handle: copies share storage, which is what lets the
/// tape route gradients back to parameters. Use clone() or detach() for an
/// independent copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl().data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return impl().data; }
  // In-place mutation; never use on a tensor that is already on a live tape.
  std::span<double> mutable_data() { return impl().data; }

  double operator()(std::size_t i) const { return impl().data[i]; }
  double operator()(std::size_t i, std::size_t j) const;
  double item() const;

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const double> grad() const { return impl().grad; }
  // Allocates a zero gradient buffer on first use.
  std::span<double> grad_buffer();
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const;

  std::uint64_t id() const { return impl().id; }
  bool same_as(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  detail::TensorImpl& impl() const;

  std::shared_ptr<detail::TensorImpl> impl_;
};

class Tape;

struct TapeOp {
  std::string name;
  std::string scope;
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void(const TapeOp&)> backward;
};

/// Ordered record of differentiable operations for one forward pass.
///
/// Ops append themselves while a TapeRecording for this tape is alive on the
/// current thread. backward() walks the record in reverse, once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string name, std::vector<Tensor> inputs, const Tensor& output,
              std::function<void(const TapeOp&)> backward);

  // Seeds d(root)/d(root) = 1 and propagates. Returns the number of ops
  // visited. A tape can be consumed only once.
  std::size_t backward(const Tensor& root);

  std::span<const TapeOp> ops() const { return ops_; }
  std::size_t size() const { return ops_.size(); }

  void push_scope(std::string label) { scopes_.push_back(std::move(label)); }
  void pop_scope() { scopes_.pop_back(); }

 private:
  std::vector<TapeOp> ops_;
  std::vector<std::string> scopes_;
  bool consumed_ = false;
};

// The tape currently recording on this thread, or nullptr.
Tape* active_tape() noexcept;

class TapeRecording {
 public:
  explicit TapeRecording(Tape& tape);
  ~TapeRecording();
  TapeRecording(const TapeRecording&) = delete;
  TapeRecording& operator=(const TapeRecording&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording for its lifetime (teacher queries, evaluation).
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  Tape* previous_;
};

// Labels every op recorded while alive; no effect without an active tape.
class TapeScope {
 public:
  explicit TapeScope(std::string label);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* tape_;
};

}  // namespace virt
