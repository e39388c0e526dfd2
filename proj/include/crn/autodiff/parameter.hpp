#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "crn/autodiff/tensor.hpp"

namespace crn::ad {

/// A trainable tensor together with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

/// Ordered, name-addressable collection of parameters with stable addresses.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other) { *this = other; }
  ParameterSet& operator=(const ParameterSet& other) {
    if (this == &other) return *this;
    params_.clear();
    for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
    return *this;
  }
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(std::string name, Tensor value) {
    if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value)));
    return *params_.back();
  }

  Parameter* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const Parameter* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  Parameter& at(const std::string& name) {
    Parameter* p = find(name);
    if (p == nullptr) throw ConfigError("unknown parameter: " + name);
    return *p;
  }
  const Parameter& at(const std::string& name) const {
    const Parameter* p = find(name);
    if (p == nullptr) throw ConfigError("unknown parameter: " + name);
    return *p;
  }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  /// Pointers to every parameter whose name starts with `prefix`.
  std::vector<Parameter*> with_prefix(const std::string& prefix) {
    std::vector<Parameter*> out;
    for (auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
    return out;
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

}  // namespace crn::ad
