#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "pathfinder/rng.hpp"
#include "pathfinder/tensor.hpp"

namespace pathfinder {

// Named tensors in registration order. Trainable entries receive gradient
// updates; buffers (running statistics) are written by the training loop
// outside the gradient path.
class ParamStore {
 public:
  Tensor& create(const std::string& name, std::vector<int> shape, bool trainable = true) {
    require(!index_.count(name), "ParamStore: duplicate name ", name);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{name, Tensor(std::move(shape)), trainable});
    return entries_.back().t;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore: unknown name ", name);
    return entries_[it->second].t;
  }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore: unknown name ", name);
    return entries_[it->second].t;
  }

  bool trainable(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore: unknown name ", name);
    return entries_[it->second].trainable;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) {
      if (e.trainable) out.push_back(e.name);
    }
    return out;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.t.size();
    return n;
  }

  std::size_t trainable_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (e.trainable) n += e.t.size();
    }
    return n;
  }

 private:
  struct Entry {
    std::string name;
    Tensor t;
    bool trainable;
  };
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Variance-scaled uniform fan-in init: U(-b, b) with b = sqrt(3 / fan_in),
// giving Var = 1 / fan_in.
inline void init_variance_scaled(Tensor& t, int fan_in, Rng& rng) {
  require(fan_in > 0, "init_variance_scaled: fan_in must be positive");
  const double b = std::sqrt(3.0 / double(fan_in));
  double* p = t.mut();
  for (std::size_t i = 0; i < t.size(); ++i) p[i] = rng.uniform(-b, b);
}

inline void fill_constant(Tensor& t, double v) {
  double* p = t.mut();
  for (std::size_t i = 0; i < t.size(); ++i) p[i] = v;
}

}  // namespace pathfinder
