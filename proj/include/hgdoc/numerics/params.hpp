#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "hgdoc/numerics/graph.hpp"
#include "hgdoc/numerics/rng.hpp"

namespace hgdoc {

/// Owns every Parameter of a model. Addresses are stable for the store's
/// lifetime. Initial values depend only on (seed, parameter name).
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0, bool materialize = true)
      : seed_(seed), materialize_(materialize) {}

  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  bool materialized() const { return materialize_; }

  Parameter& normal(const std::string& name, Shape shape, double stddev) {
    auto& p = create(name, std::move(shape));
    if (materialize_) {
      Rng rng(hash_combine(seed_, fnv1a(name)));
      for (auto& v : p.value) v = stddev * rng.normal();
    }
    return p;
  }

  Parameter& constant(const std::string& name, Shape shape, double value) {
    auto& p = create(name, std::move(shape));
    if (materialize_) std::fill(p.value.begin(), p.value.end(), value);
    return p;
  }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  Parameter& create(const std::string& name, Shape shape) {
    if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
    for (auto s : shape) {
      if (s == 0) throw DimensionError("parameter '" + name + "' has a zero dimension");
    }
    Parameter p;
    p.name = name;
    p.shape = std::move(shape);
    if (materialize_) {
      p.value.assign(numel(p.shape), 0.0);
      p.grad.assign(numel(p.shape), 0.0);
    }
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back();
  }

  std::uint64_t seed_;
  bool materialize_;
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace hgdoc
