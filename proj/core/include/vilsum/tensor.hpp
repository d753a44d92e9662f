#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace vilsum {

/// Dense float32 tensor in row-major order with an optional gradient buffer
/// of the same shape. The substrate for all model math.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<float> data);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, float value);
  static Tensor randn(std::vector<int> shape, std::mt19937& rng, float stddev);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  size_t size() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  float& operator[](size_t i) { return data_[i]; }
  float operator[](size_t i) const { return data_[i]; }
  // 2-D access; row-major.
  float& at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
  float at(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

  int rows() const { return shape_.empty() ? 0 : shape_[0]; }
  int cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  bool has_grad() const { return !grad_.empty(); }
  std::vector<float>& grad();
  const std::vector<float>& grad() const;
  void ensure_grad();
  void zero_grad();
  void drop_grad() { grad_.clear(); }

  bool all_finite() const;

  static std::string shape_str(const std::vector<int>& shape);
  std::string shape_str() const { return shape_str(shape_); }

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
  std::vector<float> grad_;
};

/// Checks product(shape) fits and every dimension is positive.
size_t checked_numel(const std::vector<int>& shape);

}  // namespace vilsum
