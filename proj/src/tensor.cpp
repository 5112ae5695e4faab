#include "virt/tensor.hpp"

#include <atomic>
#include <sstream>

#include "virt/error.hpp"

namespace virt {

namespace {

std::atomic<std::uint64_t> next_tensor_id{1};
thread_local Tape* current_tape = nullptr;

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, std::vector<double> data,
                                              bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  impl->id = next_tensor_id.fetch_add(1, std::memory_order_relaxed);
  return impl;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  impl_ = make_impl(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(values));
}

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows() on non-matrix " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols() on non-matrix " + shape_string(shape()));
  return shape()[1];
}

double Tensor::operator()(std::size_t i, std::size_t j) const {
  return impl().data[i * impl().shape[1] + j];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor " + shape_string(shape()));
  return impl().data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl().requires_grad = flag;
  return *this;
}

std::span<double> Tensor::grad_buffer() {
  auto& im = impl();
  if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0);
  return im.grad;
}

void Tensor::zero_grad() { impl().grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), impl().data); }

Tensor Tensor::clone() const {
  Tensor copy(shape(), impl().data, requires_grad());
  copy.impl().grad = impl().grad;
  return copy;
}

void Tape::record(std::string name, std::vector<Tensor> inputs, const Tensor& output,
                  std::function<void(const TapeOp&)> backward) {
  if (consumed_) throw ContractError("recording onto a tape that already ran backward");
  TapeOp op;
  op.name = std::move(name);
  op.scope = scopes_.empty() ? std::string{} : scopes_.back();
  op.inputs = std::move(inputs);
  op.output = output;
  op.backward = std::move(backward);
  ops_.push_back(std::move(op));
}

std::size_t Tape::backward(const Tensor& root) {
  if (consumed_) throw ContractError("tape backward called twice");
  if (root.numel() != 1) {
    throw ContractError("backward root must be a scalar, got " + shape_string(root.shape()));
  }
  consumed_ = true;
  Tensor seed = root;
  seed.grad_buffer()[0] += 1.0;
  std::size_t visited = 0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    ++visited;
    if (!it->output.has_grad()) continue;
    it->backward(*it);
  }
  return visited;
}

Tape* active_tape() noexcept { return current_tape; }

TapeRecording::TapeRecording(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeRecording::~TapeRecording() { current_tape = previous_; }

NoGrad::NoGrad() : previous_(current_tape) { current_tape = nullptr; }
NoGrad::~NoGrad() { current_tape = previous_; }

TapeScope::TapeScope(std::string label) : tape_(current_tape) {
  if (tape_) tape_->push_scope(std::move(label));
}

TapeScope::~TapeScope() {
  if (tape_) tape_->pop_scope();
}

}  // namespace virt
