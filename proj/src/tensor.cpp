#include "jointdiff/tensor.hpp"

#include <cmath>
#include <sstream>

namespace jointdiff {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty()) throw ContractViolation("tensor shape must have at least one dimension");
  for (int d : shape)
    if (d <= 0) throw ContractViolation("tensor dimensions must be positive, got " + shape_str(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, float fill, bool requires_grad) : p_(std::make_shared<Storage>()) {
  check_shape(shape);
  p_->values.assign(numel(shape), fill);
  p_->shape = std::move(shape);
  p_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad)
    : p_(std::make_shared<Storage>()) {
  check_shape(shape);
  if (values.size() != numel(shape))
    throw ContractViolation("tensor data length " + std::to_string(values.size()) +
                            " does not match shape " + shape_str(shape));
  p_->values.assign(values.begin(), values.end());
  p_->shape = std::move(shape);
  p_->requires_grad = requires_grad;
}

const Shape& Tensor::shape() const {
  if (!p_) throw ContractViolation("use of undefined tensor");
  return p_->shape;
}

int Tensor::dim(int i) const {
  const auto& s = shape();
  if (i < 0) i += static_cast<int>(s.size());
  if (i < 0 || i >= static_cast<int>(s.size()))
    throw ContractViolation("dimension index out of range for shape " + shape_str(s));
  return s[static_cast<std::size_t>(i)];
}

std::size_t Tensor::size() const { return p_ ? p_->values.size() : 0; }

std::span<float> Tensor::data() {
  if (!p_) throw ContractViolation("use of undefined tensor");
  return p_->values;
}

std::span<const float> Tensor::data() const {
  if (!p_) throw ContractViolation("use of undefined tensor");
  return p_->values;
}

float Tensor::item() const {
  if (size() != 1)
    throw ContractViolation("item() requires a single-element tensor, got " + shape_str(shape()));
  return p_->values[0];
}

bool Tensor::requires_grad() const { return p_ && p_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!p_) throw ContractViolation("use of undefined tensor");
  p_->requires_grad = flag;
}

bool Tensor::has_grad() const { return p_ && !p_->grad.empty(); }

std::span<float> Tensor::grad() {
  if (!has_grad()) throw ContractViolation("tensor '" + name() + "' has no gradient");
  return p_->grad;
}

std::span<const float> Tensor::grad() const {
  if (!has_grad()) throw ContractViolation("tensor '" + name() + "' has no gradient");
  return p_->grad;
}

std::span<float> Tensor::ensure_grad() const {
  if (!p_) throw ContractViolation("use of undefined tensor");
  if (p_->grad.empty()) p_->grad.assign(p_->values.size(), 0.0f);
  return p_->grad;
}

void Tensor::zero_grad() {
  if (!p_) return;
  p_->grad.assign(p_->values.size(), 0.0f);
}

void Tensor::clear_grad() {
  if (!p_) return;
  p_->grad.clear();
  p_->grad.shrink_to_fit();
}

const std::string& Tensor::name() const {
  static const std::string kEmpty;
  return p_ ? p_->name : kEmpty;
}

void Tensor::set_name(std::string name) {
  if (!p_) throw ContractViolation("use of undefined tensor");
  p_->name = std::move(name);
}

Tensor Tensor::detach() const {
  Tensor t;
  t.p_ = std::make_shared<Storage>();
  t.p_->shape = p_->shape;
  t.p_->values = p_->values;
  t.p_->name = p_->name;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.p_->requires_grad = p_->requires_grad;
  return t;
}

void require_finite(const Tensor& t, std::string_view what) {
  for (float v : t.data()) {
    if (!std::isfinite(v))
      throw NumericError("non-finite value produced by " + std::string(what));
  }
}

}  // namespace jointdiff
