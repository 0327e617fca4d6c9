#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pcadv/error.hpp"

namespace pcadv {

/// Dense row-major float array with an explicit shape.
struct Tensor {
  std::vector<std::uint32_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::uint32_t> s, float fill = 0.0f) : shape(std::move(s)) {
    data.assign(element_count(shape), fill);
  }

  static std::size_t element_count(std::span<const std::uint32_t> s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t b) { return a * b; });
  }

  std::size_t size() const noexcept { return data.size(); }
  bool same_shape(const Tensor& o) const noexcept { return shape == o.shape; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Named parameter tensors. Ordered by name so iteration (and therefore
/// checkpoint layout and gradient reduction order) is deterministic.
class TensorBundle {
 public:
  using Map = std::map<std::string, Tensor, std::less<>>;

  void add(std::string name, Tensor t) {
    for (float v : t.data)
      if (!std::isfinite(v)) throw InvalidInput("tensor '" + name + "' contains non-finite values");
    auto [it, inserted] = tensors_.emplace(std::move(name), std::move(t));
    if (!inserted) throw InvalidArgument("duplicate tensor name '" + it->first + "'");
  }

  bool contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

  const Tensor& at(std::string_view name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw InvalidArgument("no tensor named '" + std::string(name) + "'");
    return it->second;
  }
  Tensor& at(std::string_view name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw InvalidArgument("no tensor named '" + std::string(name) + "'");
    return it->second;
  }

  std::size_t size() const noexcept { return tensors_.size(); }
  auto begin() const noexcept { return tensors_.begin(); }
  auto end() const noexcept { return tensors_.end(); }
  auto begin() noexcept { return tensors_.begin(); }
  auto end() noexcept { return tensors_.end(); }

  /// Same names, all-zero data.
  TensorBundle zeros_like() const {
    TensorBundle out;
    for (const auto& [name, t] : tensors_) out.tensors_.emplace(name, Tensor(t.shape));
    return out;
  }

  bool same_layout(const TensorBundle& o) const {
    if (size() != o.size()) return false;
    auto a = begin();
    auto b = o.begin();
    for (; a != end(); ++a, ++b)
      if (a->first != b->first || a->second.shape != b->second.shape) return false;
    return true;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  friend bool operator==(const TensorBundle&, const TensorBundle&) = default;

 private:
  Map tensors_;
};

}  // namespace pcadv
