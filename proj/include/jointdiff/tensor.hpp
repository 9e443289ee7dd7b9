#pragma once

#include <cstddef>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace jointdiff {

/// Raised when a caller breaks a documented precondition (bad shape, out-of-range index, ...).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN/Inf or a matrix is numerically degenerate.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

/// Allocates on 64-byte boundaries.  Vectorized kernels split their loops by
/// address alignment, so a fixed alignment keeps float sums reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float32 array with optional gradient buffer.
///
/// A Tensor is a handle: copies share storage, which is what lets the tape and
/// the optimizer see the same parameter.  Use clone() or detach() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f, bool requires_grad = false);
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

  static Tensor scalar(float v) { return Tensor(Shape{1}, v); }

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int i) const;
  std::size_t size() const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;
  float operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<float> grad();
  std::span<const float> grad() const;
  /// Allocate the gradient buffer if absent (zero filled); leaves existing values intact.
  /// Const because a Tensor is a handle: adjoints write through captured copies.
  std::span<float> ensure_grad() const;
  void zero_grad();
  void clear_grad();

  const std::string& name() const;
  void set_name(std::string name);

  /// Deep copy of the values as a new leaf without gradient tracking.
  Tensor detach() const;
  /// Deep copy of values and the requires_grad flag (gradient not copied).
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return p_ == other.p_; }

 private:
  struct Storage {
    Shape shape;
    FloatBuffer values;
    FloatBuffer grad;
    bool requires_grad = false;
    std::string name;
  };
  std::shared_ptr<Storage> p_;
};

/// Throws NumericError if any value in the tensor is not finite.
void require_finite(const Tensor& t, std::string_view what);

}  // namespace jointdiff
