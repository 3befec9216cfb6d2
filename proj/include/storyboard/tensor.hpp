#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace storyboard {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major float32 array. Values are owned; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, float value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(std::initializer_list<std::size_t> index);
  float at(std::initializer_list<std::size_t> index) const;

  // Contiguous view of the index-th block along axis 0.
  std::span<float> sub(std::size_t index);
  std::span<const float> sub(std::size_t index) const;

  // Deep copy of the index-th block along axis 0, with axis 0 dropped.
  Tensor slice(std::size_t index) const;
  void set_slice(std::size_t index, const Tensor& block);

  Tensor reshaped(Shape shape) const;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<float> data_;
};

// Bitwise equality of shape and payload.
bool bit_equal(const Tensor& a, const Tensor& b);

float max_abs_diff(const Tensor& a, const Tensor& b);

// Matrix product of a [m×k] and b [k×n]; each output sums sequentially over k.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

// Row-wise softmax. -inf entries (and the large negative masking logit) map to 0.
Tensor softmax_rows(const Tensor& x);

double cosine_sim(std::span<const float> a, std::span<const float> b);
// Same value as cosine_sim when the norms are those returned by l2_norm.
double cosine_sim_with_norms(std::span<const float> a, std::span<const float> b, double norm_a,
                             double norm_b);
double l2_norm(std::span<const float> a);
double dot(std::span<const float> a, std::span<const float> b);

double sigmoid(double x);

// Large negative logit used in place of -inf for masked attention entries.
inline constexpr float kMaskedLogit = -1e30f;

}  // namespace storyboard
