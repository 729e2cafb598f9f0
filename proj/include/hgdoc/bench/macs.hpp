#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hgdoc/hourglass/encoder.hpp"

namespace hgdoc {

/// layers * ((4 d^2 + 2 d d_ffn) L + 2 L^2 d): Q/K/V/output projections, both
/// FFN matmuls, attention scores and the weighted sum.
inline std::uint64_t count_macs_vanilla(std::uint64_t L, std::uint64_t d, std::uint64_t layers, std::uint64_t d_ffn) {
  if (L == 0 || d == 0 || layers == 0 || d_ffn == 0) throw ContractError("count_macs_vanilla: all sizes must be positive");
  return layers * ((4 * d * d + 2 * d * d_ffn) * L + 2 * L * L * d);
}

struct MacReport {
  // MACs per layer scope ("embed", "merge0.sa", "merge0.sca", ...), in
  // execution order. Every matmul of the dry run lands in exactly one entry.
  std::vector<std::pair<std::string, std::uint64_t>> per_layer;
  std::uint64_t total = 0;
  int d = 0;
  int k = 0;
  int layers = 0;
  std::vector<std::pair<std::size_t, std::size_t>> lengths;  // (text, visual) per block
  std::uint64_t vanilla_total = 0;
  double reduction_vs_vanilla = 0.0;

  std::uint64_t layer_macs(const std::string& name) const {
    for (const auto& [n, v] : per_layer) {
      if (n == name) return v;
    }
    return 0;
  }
};

/// Keeps the first two dotted components of an op scope.
inline std::string layer_of_scope(const std::string& scope) {
  if (scope.empty()) return "other";
  const auto a = scope.find('.');
  if (a == std::string::npos) return scope;
  const auto b = scope.find('.', a + 1);
  return b == std::string::npos ? scope : scope.substr(0, b);
}

/// Groups the op log of a finished graph into a report. Ops without MACs
/// are left out so that every entry is a layer that does matmul work.
inline MacReport mac_report(const Graph& g) {
  MacReport r;
  for (const auto& rec : g.records()) {
    if (rec.macs == 0) continue;
    const auto layer = layer_of_scope(rec.scope);
    if (r.per_layer.empty() || r.per_layer.back().first != layer) {
      bool found = false;
      for (auto& [n, v] : r.per_layer) {
        if (n == layer) {
          v += rec.macs;
          found = true;
          break;
        }
      }
      if (!found) r.per_layer.emplace_back(layer, rec.macs);
    } else {
      r.per_layer.back().second += rec.macs;
    }
    r.total += rec.macs;
  }
  return r;
}

inline void set_reference(MacReport& r, std::uint64_t vanilla_total) {
  r.vanilla_total = vanilla_total;
  r.reduction_vs_vanilla = 1.0 - static_cast<double>(r.total) / static_cast<double>(vanilla_total);
}

/// Shape-only forward of the encoder on fully active streams. The reference
/// is the closed-form single-stream count at the text length with the same
/// number of layers (two per block).
inline MacReport count_macs_graph(const ModelConfig& cfg, EncoderMode mode = EncoderMode::hourglass) {
  cfg.validate();
  ParameterStore store(cfg.seed, false);
  auto params = EncoderParams::create(store, cfg);
  Graph g({.track_grad = false, .shape_only = true});
  auto ts = dense_streams(cfg);
  auto res = encode(g, ts, params, cfg, {.mode = mode});
  auto r = mac_report(g);
  r.d = cfg.d;
  r.k = cfg.k;
  r.layers = 4 * cfg.n_stages;
  r.lengths = res.block_lengths;
  set_reference(r, count_macs_vanilla(static_cast<std::uint64_t>(cfg.text_len), static_cast<std::uint64_t>(cfg.d),
                                      static_cast<std::uint64_t>(r.layers), static_cast<std::uint64_t>(cfg.d_ffn)));
  return r;
}

/// Plain single-stream stack of pre-norm SA layers at length L, the
/// structure the closed form describes.
inline MacReport count_macs_sa_stack(std::size_t L, const ModelConfig& cfg, int layers) {
  ParameterStore store(cfg.seed, false);
  std::vector<SelfAttentionLayerParams> stack;
  for (int i = 0; i < layers; ++i) {
    const auto name = "stack" + std::to_string(i);
    const auto d = static_cast<std::size_t>(cfg.d);
    stack.push_back({LayerNorm::create(store, name + ".ln", d, cfg.ln_eps), AttentionParams::create(store, name + ".attn", cfg),
                     FeedForward::create(store, name + ".ffn", cfg)});
  }
  Graph g({.track_grad = false, .shape_only = true});
  auto x = g.input({L, static_cast<std::size_t>(cfg.d)});
  const Mask mask(L, 1);
  for (int i = 0; i < layers; ++i) {
    auto sc = g.scope("stack" + std::to_string(i));
    x = self_attention_block(g, stack[static_cast<std::size_t>(i)], x, mask);
  }
  auto r = mac_report(g);
  r.d = cfg.d;
  r.k = 1;
  r.layers = layers;
  r.lengths = {{L, 0}};
  set_reference(r, count_macs_vanilla(L, static_cast<std::uint64_t>(cfg.d), static_cast<std::uint64_t>(layers),
                                      static_cast<std::uint64_t>(cfg.d_ffn)));
  return r;
}

/// The preset at a new text length with the text/visual ratio kept.
inline ModelConfig at_length(ModelConfig cfg, int text_len) {
  const int ratio = cfg.ratio();
  cfg.text_len = text_len;
  cfg.visual_len = text_len / ratio;
  return cfg;
}

}  // namespace hgdoc
