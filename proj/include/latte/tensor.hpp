#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace latte {

// Numeric mode for the whole engine. f64 is the test mode used by all
// gradient and oracle checks; f32 rounds every op output (and all stored
// parameters) through float so checkpoints and resumed runs stay bit-exact.
enum class Precision { f64, f32 };

Precision precision();
void set_precision(Precision p);
Precision precision_from_env();  // LATTE_TEST_MODE=f64 selects f64, else f32

inline double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  NumericError(const std::string& op_name, const std::string& msg)
      : std::runtime_error("non-finite value in op '" + op_name + "': " + msg), op(op_name) {}
  std::string op;
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized on demand, zero-filled
  bool requires_grad = false;
};

// Value-semantics handle over shared dense storage. Ops never mutate their
// inputs; tests and optimizers may write leaf data through data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  std::span<double> grad();  // sizes and zero-fills on first use
  std::span<const double> grad_view() const;
  void zero_grad();

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape: a linear record of executed ops. backward() seeds the
// scalar loss gradient and replays the record once, in reverse.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backprop);
  void backward(const Tensor& loss);
  void clear();
  size_t size() const { return nodes_.size(); }

  static Tape* active();

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;
};

}  // namespace latte
