#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hgdoc/features/config.hpp"
#include "hgdoc/features/embed.hpp"
#include "hgdoc/numerics/graph.hpp"
#include "hgdoc/numerics/params.hpp"

namespace hgdoc {

using Mask = std::vector<std::uint8_t>;

struct Linear {
  Parameter* w = nullptr;  // in x out
  Parameter* b = nullptr;  // out

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, double std) {
    return {&store.normal(name + ".w", {in, out}, std), &store.constant(name + ".b", {out}, 0.0)};
  }
  Var operator()(Graph& g, const Var& x) const { return g.add_row(g.matmul(x, g.param(*w)), g.param(*b)); }
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  double eps = 1e-6;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t d, double eps) {
    return {&store.constant(name + ".gamma", {d}, 1.0), &store.constant(name + ".beta", {d}, 0.0), eps};
  }
  Var operator()(Graph& g, const Var& x) const { return g.layer_norm(x, g.param(*gamma), g.param(*beta), eps); }
};

/// Projections of one multi-head attention: F_q, F_k, F_v and W_o, all d x d.
struct AttentionParams {
  Linear q, k, v, o;
  std::size_t heads = 1;

  static AttentionParams create(ParameterStore& store, const std::string& name, const ModelConfig& cfg) {
    const auto d = static_cast<std::size_t>(cfg.d);
    return {Linear::create(store, name + ".q", d, d, cfg.init_std), Linear::create(store, name + ".k", d, d, cfg.init_std),
            Linear::create(store, name + ".v", d, d, cfg.init_std), Linear::create(store, name + ".o", d, d, cfg.init_std),
            static_cast<std::size_t>(cfg.heads)};
  }
};

struct FeedForward {
  LayerNorm ln;
  Linear up, down;

  static FeedForward create(ParameterStore& store, const std::string& name, const ModelConfig& cfg) {
    const auto d = static_cast<std::size_t>(cfg.d), f = static_cast<std::size_t>(cfg.d_ffn);
    return {LayerNorm::create(store, name + ".ln", d, cfg.ln_eps), Linear::create(store, name + ".up", d, f, cfg.init_std),
            Linear::create(store, name + ".down", f, d, cfg.init_std)};
  }
  // x + FFN(LN(x))
  Var residual(Graph& g, const Var& x) const { return g.add(x, down(g, g.gelu(up(g, ln(g, x))))); }
};

struct SelfAttentionLayerParams {
  LayerNorm ln;
  AttentionParams attn;
  FeedForward ffn;

  static SelfAttentionLayerParams create(ParameterStore& store, const std::string& name, const ModelConfig& cfg) {
    return {LayerNorm::create(store, name + ".ln", static_cast<std::size_t>(cfg.d), cfg.ln_eps),
            AttentionParams::create(store, name + ".attn", cfg), FeedForward::create(store, name + ".ffn", cfg)};
  }
};

/// One direction of the symmetry cross-attention (queries from stream n,
/// keys/values from stream m).
struct CrossDirectionParams {
  LayerNorm ln_q, ln_kv;
  AttentionParams attn;
  FeedForward ffn;

  static CrossDirectionParams create(ParameterStore& store, const std::string& name, const ModelConfig& cfg) {
    const auto d = static_cast<std::size_t>(cfg.d);
    return {LayerNorm::create(store, name + ".ln_q", d, cfg.ln_eps), LayerNorm::create(store, name + ".ln_kv", d, cfg.ln_eps),
            AttentionParams::create(store, name + ".attn", cfg), FeedForward::create(store, name + ".ffn", cfg)};
  }
};

struct SymmetryCrossLayerParams {
  CrossDirectionParams tv;  // text queries visual
  CrossDirectionParams vt;  // visual queries text
  Parameter* semantic = nullptr;  // (L_v + 1) x d, indexed by segment id + 1

  static SymmetryCrossLayerParams create(ParameterStore& store, const std::string& name, const ModelConfig& cfg) {
    return {CrossDirectionParams::create(store, name + ".tv", cfg), CrossDirectionParams::create(store, name + ".vt", cfg),
            &store.normal(name + ".semantic", {static_cast<std::size_t>(cfg.visual_len) + 1, static_cast<std::size_t>(cfg.d)},
                          cfg.init_std)};
  }
};

// ------------------------------------------------------------------ records

struct AttentionRecord {
  std::size_t layer = 0;
  std::string kind;  // "sa", "sca.tv", "sca.vt"
  std::size_t head = 0;
  Tensor weights;  // queries x keys
  Mask query_mask;
};

/// Collects per-head attention matrices when passed to a layer.
struct AttentionRecorder {
  std::vector<AttentionRecord> records;
  std::vector<std::string> layer_kinds;

  std::size_t begin_layer(const std::string& kind) {
    layer_kinds.push_back(kind);
    return layer_kinds.size() - 1;
  }
  std::size_t layer_count() const { return layer_kinds.size(); }
};

// ----------------------------------------------------------------- attention

struct AttentionCall {
  const Mask* key_mask = nullptr;
  const Mask* query_mask = nullptr;
  AttentionRecorder* recorder = nullptr;
  std::size_t layer = 0;
  const char* kind = "";
};

/// W_o · concat_h softmax(Q_h K_h^T / sqrt(d_h)) V_h with Q = F_q(q_in),
/// K = F_k(k_in), V = F_v(v_in).
inline Var multi_head_attention(Graph& g, const AttentionParams& p, const Var& q_in, const Var& k_in, const Var& v_in,
                                const AttentionCall& call) {
  const std::size_t d = q_in.cols();
  if (d % p.heads != 0) throw DimensionError("attention: d=" + std::to_string(d) + " not divisible by heads");
  if (k_in.rows() != v_in.rows()) throw DimensionError("attention: key and value lengths differ");
  const std::size_t dh = d / p.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  auto q = p.q(g, q_in), k = p.k(g, k_in), v = p.v(g, v_in);
  const Mask all_keys(k_in.rows(), 1), all_queries(q_in.rows(), 1);
  const Mask& km = call.key_mask ? *call.key_mask : all_keys;
  const Mask& qm = call.query_mask ? *call.query_mask : all_queries;
  std::vector<Var> outs;
  outs.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    auto qh = p.heads == 1 ? q : g.slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = p.heads == 1 ? k : g.slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = p.heads == 1 ? v : g.slice_cols(v, h * dh, (h + 1) * dh);
    auto w = g.masked_softmax(g.scale(g.matmul_nt(qh, kh), inv_sqrt), km, qm);
    if (call.recorder && !g.shape_only()) {
      call.recorder->records.push_back({call.layer, call.kind, h, w.value(), qm});
    }
    outs.push_back(g.matmul(w, vh));
  }
  return p.o(g, p.heads == 1 ? outs[0] : g.concat_cols(outs));
}

/// CA(f_n | f_m): queries from f_n, keys and values from f_m. No residual.
inline Var cross_attention(Graph& g, const Var& f_n, const Var& f_m, const AttentionParams& p, const Mask& key_mask,
                           const Mask* query_mask = nullptr) {
  return multi_head_attention(g, p, f_n, f_m, f_m, {&key_mask, query_mask, nullptr, 0, "ca"});
}

/// Pre-norm self-attention layer over one sequence.
inline Var self_attention_block(Graph& g, const SelfAttentionLayerParams& p, const Var& x, const Mask& mask,
                                AttentionRecorder* rec = nullptr, std::size_t layer = 0) {
  auto h = p.ln(g, x);
  auto a = multi_head_attention(g, p.attn, h, h, h, {&mask, &mask, rec, layer, "sa"});
  return p.ffn.residual(g, g.add(x, a));
}

/// SA over the concatenation of both streams, split back afterwards.
inline DualStream self_attention_layer(Graph& g, const DualStream& s, const SelfAttentionLayerParams& p,
                                       AttentionRecorder* rec = nullptr) {
  auto sc = g.scope("sa");
  const std::size_t lt = s.text.rows(), lv = s.visual.rows();
  Mask mask = s.text_mask;
  mask.insert(mask.end(), s.visual_mask.begin(), s.visual_mask.end());
  const std::size_t layer = rec ? rec->begin_layer("sa") : 0;
  auto y = self_attention_block(g, p, g.concat_rows({s.text, s.visual}), mask, rec, layer);
  DualStream out = s;
  out.text = g.slice_rows(y, 0, lt);
  out.visual = g.slice_rows(y, lt, lt + lv);
  return out;
}

namespace detail {
inline std::vector<std::size_t> semantic_rows(const std::vector<int>& segment_ids, std::size_t table_rows) {
  std::vector<std::size_t> rows;
  rows.reserve(segment_ids.size());
  for (int s : segment_ids) {
    const auto r = static_cast<std::size_t>(s + 1);
    if (s < -1 || r >= table_rows) throw ContractError("segment id " + std::to_string(s) + " outside semantic table");
    rows.push_back(r);
  }
  return rows;
}

// f_n + CA(LN_q(f_n) + sem_n | LN_kv(f_m) + sem_m, values LN_kv(f_m)), then FFN.
inline Var cross_direction(Graph& g, const CrossDirectionParams& p, const Var& f_n, const Var& f_m, const Var& sem_n,
                           const Var& sem_m, const Mask& n_mask, const Mask& m_mask, AttentionRecorder* rec,
                           std::size_t layer, const char* kind) {
  auto qn = p.ln_q(g, f_n);
  auto km = p.ln_kv(g, f_m);
  auto a = multi_head_attention(g, p.attn, g.add(qn, sem_n), g.add(km, sem_m), km, {&m_mask, &n_mask, rec, layer, kind});
  return p.ffn.residual(g, g.add(f_n, a));
}
}  // namespace detail

/// Both directions read the same input snapshot; each has its own parameters.
inline DualStream symmetry_cross_attention_layer(Graph& g, const DualStream& s, const SymmetryCrossLayerParams& p,
                                                 AttentionRecorder* rec = nullptr) {
  auto sc = g.scope("sca");
  auto table = g.param(*p.semantic);
  const std::size_t rows = p.semantic->shape[0];
  auto sem_t = g.gather_rows(table, detail::semantic_rows(s.text_segment_ids, rows));
  auto sem_v = g.gather_rows(table, detail::semantic_rows(s.visual_segment_ids, rows));
  const std::size_t layer = rec ? rec->begin_layer("sca") : 0;
  DualStream out = s;
  {
    auto d = g.scope("tv");
    out.text = detail::cross_direction(g, p.tv, s.text, s.visual, sem_t, sem_v, s.text_mask, s.visual_mask, rec, layer,
                                       "sca.tv");
  }
  {
    auto d = g.scope("vt");
    out.visual = detail::cross_direction(g, p.vt, s.visual, s.text, sem_v, sem_t, s.visual_mask, s.text_mask, rec, layer,
                                         "sca.vt");
  }
  return out;
}

}  // namespace hgdoc
