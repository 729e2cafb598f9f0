#pragma once

// Test-only helpers: random tensors and the central finite-difference oracle.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hgdoc/numerics/graph.hpp"
#include "hgdoc/numerics/params.hpp"
#include "hgdoc/numerics/rng.hpp"

namespace hgdoc::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.buffer()) v = scale * rng.normal();
  return t;
}

inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  // The floor keeps structurally-zero gradients from dividing FD noise by ~0.
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Builds a scalar loss from leaf vars; evaluated with fresh graphs.
using LossFn = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Central difference (h = 1e-5) against reverse-mode gradients for every
/// element of every tensor. Returns the maximum relative error.
inline double gradient_check(const LossFn& fn, std::vector<Tensor>& tensors, double h = 1e-5) {
  for (auto& t : tensors) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Graph g;
    std::vector<Var> leaves;
    for (auto& t : tensors) leaves.push_back(g.leaf(t));
    g.backward(fn(g, leaves));
  }
  auto eval = [&]() {
    Graph g({.track_grad = false});
    std::vector<Var> leaves;
    for (auto& t : tensors) leaves.push_back(g.leaf(t));
    return fn(g, leaves).item();
  };
  double worst = 0.0;
  for (auto& t : tensors) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      const double up = eval();
      t[i] = saved - h;
      const double down = eval();
      t[i] = saved;
      worst = std::max(worst, rel_error((*t.grad())[i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

struct ParamCheck {
  double worst = 0.0;
  std::string worst_name;
  std::size_t groups = 0;
  std::size_t elements = 0;
};

/// Finite-difference check over parameters of a store. Per parameter group
/// the largest-gradient element and `extra` random elements are perturbed.
/// Groups rejected by `keep` are skipped. The relative-error floor is
/// 1e-6 * max(1, |loss|): central-difference round-off grows with the loss
/// value, and the floor keeps the measure invariant to rescaling the loss.
inline ParamCheck parameter_gradient_check(ParameterStore& store, const std::function<Var(Graph&)>& fn,
                                           std::size_t extra, std::uint64_t seed, double h,
                                           const std::function<bool(const std::string&)>& keep) {
  store.zero_grad();
  double floor = 1e-6;
  {
    Graph g;
    auto loss = fn(g);
    floor *= std::max(1.0, std::abs(loss.item()));
    g.backward(loss);
  }
  auto eval = [&]() {
    Graph g({.track_grad = false, .record_ops = false});
    return fn(g).item();
  };
  Rng rng(seed);
  ParamCheck out;
  for (auto& p : store) {
    if (keep && !keep(p.name)) continue;
    std::vector<std::size_t> idx;
    if (p.size() <= extra + 1) {
      for (std::size_t i = 0; i < p.size(); ++i) idx.push_back(i);
    } else {
      std::size_t arg = 0;
      for (std::size_t i = 1; i < p.size(); ++i) {
        if (std::abs(p.grad[i]) > std::abs(p.grad[arg])) arg = i;
      }
      idx.push_back(arg);
      for (std::size_t e = 0; e < extra; ++e) idx.push_back(rng.below(p.size()));
    }
    ++out.groups;
    for (auto i : idx) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = eval();
      p.value[i] = saved - h;
      const double down = eval();
      p.value[i] = saved;
      const double err = rel_error(p.grad[i], (up - down) / (2.0 * h), floor);
      ++out.elements;
      if (err > out.worst) {
        out.worst = err;
        out.worst_name = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

/// Same, restricted to groups whose name contains `filter`.
inline ParamCheck parameter_gradient_check(ParameterStore& store, const std::function<Var(Graph&)>& fn,
                                           std::size_t extra = 2, std::uint64_t seed = 1, double h = 1e-5,
                                           const std::string& filter = "") {
  return parameter_gradient_check(store, fn, extra, seed, h, [&](const std::string& name) {
    return filter.empty() || name.find(filter) != std::string::npos;
  });
}

}  // namespace hgdoc::testing
