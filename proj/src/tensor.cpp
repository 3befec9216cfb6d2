#include "storyboard/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "storyboard/errors.hpp"

namespace storyboard {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0f) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape_) + " needs " +
                         std::to_string(shape_numel(shape_)) + " values, got " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::filled(Shape shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " vs shape " +
                         shape_to_string(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) {
      throw RangeError("index " + std::to_string(i) + " out of range on axis " +
                       std::to_string(axis) + " of " + shape_to_string(shape_));
    }
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

float& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
float Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

std::span<float> Tensor::sub(std::size_t index) {
  const std::size_t block = data_.size() / dim(0);
  if (index >= shape_[0]) throw RangeError("sub index out of range");
  return std::span<float>(data_).subspan(index * block, block);
}

std::span<const float> Tensor::sub(std::size_t index) const {
  const std::size_t block = data_.size() / dim(0);
  if (index >= shape_[0]) throw RangeError("sub index out of range");
  return std::span<const float>(data_).subspan(index * block, block);
}

Tensor Tensor::slice(std::size_t index) const {
  auto view = sub(index);
  Shape inner(shape_.begin() + 1, shape_.end());
  return Tensor(std::move(inner), std::vector<float>(view.begin(), view.end()));
}

void Tensor::set_slice(std::size_t index, const Tensor& block) {
  auto view = sub(index);
  if (block.size() != view.size()) {
    throw DimensionError("set_slice: block " + shape_to_string(block.shape()) +
                         " does not fit into " + shape_to_string(shape_));
  }
  std::copy(block.data_.begin(), block.data_.end(), view.begin());
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " +
                         shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const float* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) po[i * n + j] = static_cast<float>(acc[j]);
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects rank 2, got " + shape_to_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("softmax_rows expects rank 2, got " + shape_to_string(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({m, n});
  auto masked = [](float v) { return v == -std::numeric_limits<float>::infinity() || v <= kMaskedLogit; };
  for (std::size_t i = 0; i < m; ++i) {
    const float* row = x.data().data() + i * n;
    float* dst = out.data().data() + i * n;
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(row[j]) || row[j] == std::numeric_limits<float>::infinity()) {
        throw Error("softmax_rows: non-finite logit in row " + std::to_string(i));
      }
      if (!masked(row[j])) row_max = std::max(row_max, static_cast<double>(row[j]));
    }
    if (row_max == -std::numeric_limits<double>::infinity()) {
      throw DegenerateRowError("softmax_rows: row " + std::to_string(i) + " is entirely masked");
    }
    double denom = 0.0;
    std::vector<double> e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (masked(row[j])) continue;
      e[j] = std::exp(static_cast<double>(row[j]) - row_max);
      denom += e[j];
    }
    for (std::size_t j = 0; j < n; ++j) dst[j] = static_cast<float>(e[j] / denom);
  }
  return out;
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

double l2_norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

double cosine_sim_with_norms(std::span<const float> a, std::span<const float> b, double norm_a,
                             double norm_b) {
  if (norm_a == 0.0 && norm_b == 0.0) {
    throw UndefinedSimilarityError("cosine_sim: both vectors are zero");
  }
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  return std::clamp(dot(a, b) / (norm_a * norm_b), -1.0, 1.0);
}

double cosine_sim(std::span<const float> a, std::span<const float> b) {
  if (a.empty()) throw DimensionError("cosine_sim: empty vectors");
  return cosine_sim_with_norms(a, b, l2_norm(a), l2_norm(b));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace storyboard
