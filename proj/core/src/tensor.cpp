#include "vilsum/tensor.hpp"

#include <cmath>
#include <sstream>

#include "vilsum/errors.hpp"

namespace vilsum {

size_t checked_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) {
      throw ShapeError("non-positive dimension in shape " + Tensor::shape_str(shape));
    }
    n *= static_cast<size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(checked_numel(shape_), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_numel(shape_) != data_.size()) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, float value) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = value;
  return t;
}

Tensor Tensor::randn(std::vector<int> shape, std::mt19937& rng, float stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& x : t.data_) x = dist(rng);
  return t;
}

std::vector<float>& Tensor::grad() {
  if (grad_.empty()) {
    throw ContractError("gradient requested but not allocated (shape " + shape_str() + ")");
  }
  return grad_;
}

const std::vector<float>& Tensor::grad() const {
  if (grad_.empty()) {
    throw ContractError("gradient requested but not allocated (shape " + shape_str() + ")");
  }
  return grad_;
}

void Tensor::ensure_grad() {
  if (grad_.empty()) grad_.assign(data_.size(), 0.0f);
}

void Tensor::zero_grad() { grad_.assign(data_.size(), 0.0f); }

bool Tensor::all_finite() const {
  for (float x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace vilsum
