#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "mitoclass/error.hpp"

namespace mitoclass {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(Shape s, S fill = S(0)) : shape(std::move(s)), data(shape_size(shape), fill) {}

  std::size_t size() const noexcept { return data.size(); }
  bool operator==(const Tensor&) const = default;
};

/// Ordered collection of uniquely named tensors. The same layout is used for
/// model parameters, their gradients and optimizer moments.
template <typename S>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<S> tensor;
    bool operator==(const Entry&) const = default;
  };

  Tensor<S>& add(std::string name, Shape shape) {
    if (find(name)) throw Error(ErrorCode::ShapeMismatch, "duplicate parameter name '" + name + "'");
    entries_.push_back({std::move(name), Tensor<S>(std::move(shape))});
    return entries_.back().tensor;
  }

  const Tensor<S>* find(std::string_view name) const noexcept {
    for (const auto& e : entries_)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }
  Tensor<S>* find(std::string_view name) noexcept {
    for (auto& e : entries_)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }

  const Tensor<S>& at(std::string_view name) const {
    if (const auto* t = find(name)) return *t;
    throw Error(ErrorCode::ShapeMismatch, "no parameter named '" + std::string(name) + "'");
  }
  Tensor<S>& at(std::string_view name) {
    if (auto* t = find(name)) return *t;
    throw Error(ErrorCode::ShapeMismatch, "no parameter named '" + std::string(name) + "'");
  }

  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t num_scalars() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.shape);
    return out;
  }

  bool same_layout(const ParamSet& other) const noexcept {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name != other.entries_[i].name || entries_[i].tensor.shape != other.entries_[i].tensor.shape)
        return false;
    return true;
  }

  template <typename T>
  ParamSet<T> cast() const {
    ParamSet<T> out;
    for (const auto& e : entries_) {
      auto& t = out.add(e.name, e.tensor.shape);
      for (std::size_t i = 0; i < e.tensor.size(); ++i) t.data[i] = static_cast<T>(e.tensor.data[i]);
    }
    return out;
  }

  /// FNV-1a over names, shapes and raw bytes.
  std::uint64_t fingerprint() const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& e : entries_) {
      feed(e.name.data(), e.name.size());
      for (auto d : e.tensor.shape) feed(&d, sizeof d);
      feed(e.tensor.data.data(), e.tensor.data.size() * sizeof(S));
    }
    return h;
  }

  void scale(S factor) noexcept {
    for (auto& e : entries_)
      for (auto& v : e.tensor.data) v *= factor;
  }

  /// this += factor * other (layouts must match).
  void axpy(S factor, const ParamSet& other) {
    if (!same_layout(other)) throw Error(ErrorCode::ShapeMismatch, "axpy on different layouts");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto& a = entries_[i].tensor.data;
      const auto& b = other.entries_[i].tensor.data;
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += factor * b[j];
    }
  }

  bool all_finite() const noexcept {
    for (const auto& e : entries_)
      for (auto v : e.tensor.data)
        if (!(v == v) || v - v != S(0)) return false;
    return true;
  }

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<Entry> entries_;
};

}  // namespace mitoclass
