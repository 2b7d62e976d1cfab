#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace foamfed {

// A named float32 tensor. Shapes are explicit so serialized parameters can be
// validated structurally, not just by element count.
struct NamedTensor {
  std::string name;
  std::vector<uint32_t> shape;
  std::vector<float> data;

  NamedTensor() = default;
  NamedTensor(std::string n, std::vector<uint32_t> s)
      : name(std::move(n)), shape(std::move(s)) {
    data.assign(element_count(), 0.0f);
  }
  NamedTensor(std::string n, std::vector<uint32_t> s, std::vector<float> d)
      : name(std::move(n)), shape(std::move(s)), data(std::move(d)) {
    if (data.size() != element_count())
      throw std::invalid_argument("tensor '" + name + "': data size does not match shape");
  }

  size_t element_count() const {
    size_t n = 1;
    for (uint32_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
};

// An ordered collection of named tensors; order is part of the manifest so
// serialization and aggregation are deterministic.
struct ModelParams {
  std::vector<NamedTensor> tensors;

  NamedTensor* find(const std::string& name) {
    for (auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
  NamedTensor& at(const std::string& name) {
    if (auto* t = find(name)) return *t;
    throw std::out_of_range("no tensor named '" + name + "'");
  }
  const NamedTensor& at(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw std::out_of_range("no tensor named '" + name + "'");
  }

  size_t total_elements() const {
    size_t n = 0;
    for (const auto& t : tensors) n += t.element_count();
    return n;
  }
};

// True when both sides list the same tensor names, in the same order, with
// identical shapes. Values are not compared.
inline bool same_manifest(const ModelParams& a, const ModelParams& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (size_t i = 0; i < a.tensors.size(); ++i) {
    if (a.tensors[i].name != b.tensors[i].name) return false;
    if (a.tensors[i].shape != b.tensors[i].shape) return false;
  }
  return true;
}

}  // namespace foamfed
