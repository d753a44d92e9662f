#pragma once

#include <deque>
#include <string>
#include <unordered_map>
#include <utility>

#include "vilsum/errors.hpp"
#include "vilsum/tensor.hpp"

namespace vilsum {

/// Named parameter tensors in fixed registration order. Backed by a deque so
/// references stay valid as parameters are added.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ContractError("parameter registered twice: " + name);
    items_.emplace_back(name, std::move(t));
    index_[name] = items_.size() - 1;
    return items_.back().second;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return items_[it->second].second;
  }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return items_[it->second].second;
  }

  std::deque<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::deque<std::pair<std::string, Tensor>>& items() const { return items_; }
  size_t count() const { return items_.size(); }

  /// Releases all gradient buffers (next step starts untouched).
  void drop_grads() {
    for (auto& [name, t] : items_) t.drop_grad();
  }

  size_t total_values() const {
    size_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, t] : items_) {
      if (!t.all_finite()) return false;
    }
    return true;
  }

 private:
  std::deque<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace vilsum
