#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hgdoc/attention/layers.hpp"
#include "hgdoc/features/config.hpp"
#include "hgdoc/features/tokenize.hpp"
#include "hgdoc/heads/labels.hpp"

namespace hgdoc {

inline constexpr std::size_t kGtrPairFeatures = 8;

/// sigma(X_k W_b X_v^T) with X_k = W_k Z_i + b_k and X_v = W_v Z_j + b_v.
struct Biaffine {
  Linear key, value;
  Parameter* bilinear = nullptr;  // d x d

  static Biaffine create(ParameterStore& store, const std::string& name, const ModelConfig& cfg) {
    const auto d = static_cast<std::size_t>(cfg.d);
    return {Linear::create(store, name + ".key", d, d, cfg.init_std), Linear::create(store, name + ".value", d, d, cfg.init_std),
            &store.normal(name + ".bilinear", {d, d}, cfg.init_std)};
  }

  /// Logits for every ordered pair: [N x N], entry (i, j) scores i -> j.
  Var logits(Graph& g, const Var& z) const {
    auto xk = key(g, z);
    auto xv = value(g, z);
    return g.matmul_nt(g.matmul(xk, g.param(*bilinear)), xv);
  }
};

struct HeadParams {
  Linear labeling;      // d -> categories
  Biaffine linking;
  Biaffine sop;
  Parameter* gtr_bilinear = nullptr;  // d x (H d), H pair features
  Parameter* gtr_bias = nullptr;      // H
  Linear gtr_classifier;              // H -> 10
  Linear tia;                         // d -> 1
  Linear mvlm;                        // d -> vocab

  static HeadParams create(ParameterStore& store, const ModelConfig& cfg) {
    const auto d = static_cast<std::size_t>(cfg.d);
    const double s = cfg.init_std;
    HeadParams h;
    h.labeling = Linear::create(store, "head.labeling", d, static_cast<std::size_t>(cfg.n_categories), s);
    h.linking = Biaffine::create(store, "head.linking", cfg);
    h.sop = Biaffine::create(store, "head.sop", cfg);
    h.gtr_bilinear = &store.normal("head.gtr.bilinear", {d, kGtrPairFeatures * d}, s);
    h.gtr_bias = &store.constant("head.gtr.bias", {kGtrPairFeatures}, 0.0);
    h.gtr_classifier = Linear::create(store, "head.gtr.classifier", kGtrPairFeatures, kNumRelations, s);
    h.tia = Linear::create(store, "head.tia", d, 1, s);
    h.mvlm = Linear::create(store, "head.mvlm", d, static_cast<std::size_t>(cfg.vocab), s);
    return h;
  }
};

/// Z_F per segment: mean of its text-token features times its visual token.
/// Rows follow segment index.
inline Var entity_features(Graph& g, const Var& text, const Var& visual, const TokenStreams& ts, std::size_t n_segments) {
  if (n_segments == 0) throw ContractError("entity features: document has no segments");
  if (n_segments > visual.rows()) throw ContractError("entity features: more segments than visual tokens");
  std::vector<Var> means;
  std::vector<std::size_t> rows;
  for (std::size_t s = 0; s < n_segments; ++s) {
    auto pos = ts.positions_of(static_cast<int>(s));
    if (pos.empty()) throw ContractError("entity features: segment " + std::to_string(s) + " has an empty span");
    means.push_back(g.row_mean(text, std::move(pos)));
    rows.push_back(s);
  }
  auto mean = n_segments == 1 ? means[0] : g.concat_rows(means);
  return g.mul(mean, g.gather_rows(visual, std::move(rows)));
}

/// Category logits [N x C]; softmax over axis 1 gives the probabilities.
inline Var entity_labeling_logits(Graph& g, const Var& z, const HeadParams& h) { return h.labeling(g, z); }

inline Var entity_labeling(Graph& g, const Var& z, const HeadParams& h) {
  return g.softmax(entity_labeling_logits(g, z, h), 1);
}

/// Link probabilities for every ordered pair [N x N].
inline Var entity_linking(Graph& g, const Var& z, const HeadParams& h) { return g.sigmoid(h.linking.logits(g, z)); }

inline Var labeling_loss(Graph& g, const Var& z, const HeadParams& h, const std::vector<std::size_t>& labels) {
  return g.cross_entropy(entity_labeling_logits(g, z, h), labels);
}

/// Mean BCE over all ordered pairs i != j of an [N x N] logit matrix.
inline Var pair_bce(Graph& g, const Var& logits, const std::vector<std::pair<std::size_t, std::size_t>>& links) {
  const std::size_t n = logits.rows();
  if (n < 2) throw ContractError("linking loss: needs at least two entities");
  std::vector<double> targets(n * n, 0.0), weights(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i) weights[i * n + i] = 0.0;
  for (auto [i, j] : links) targets[i * n + j] = 1.0;
  return g.bce_with_logits(logits, std::move(targets), std::move(weights));
}

inline Var linking_loss(Graph& g, const Var& z, const HeadParams& h,
                        const std::vector<std::pair<std::size_t, std::size_t>>& links) {
  return pair_bce(g, h.linking.logits(g, z), links);
}

/// Pair features phi_h(i, j) = v_i^T B_h v_j + b_h for every ordered pair,
/// as an [N^2 x H] matrix.
inline Var gtr_pair_features(Graph& g, const Var& v, const HeadParams& h) {
  const std::size_t n = v.rows(), d = v.cols();
  auto proj = g.matmul(v, g.param(*h.gtr_bilinear));  // [N x H d]
  std::vector<Var> cols;
  for (std::size_t k = 0; k < kGtrPairFeatures; ++k) {
    cols.push_back(g.reshape(g.matmul_nt(g.slice_cols(proj, k * d, (k + 1) * d), v), {n * n, 1}));
  }
  return g.add_row(g.concat_cols(cols), g.param(*h.gtr_bias));
}

inline Var gtr_logits(Graph& g, const Var& segment_visual, const HeadParams& h) {
  return h.gtr_classifier(g, gtr_pair_features(g, segment_visual, h));
}

/// Mean cross-entropy over all N^2 ordered pairs.
inline Var gtr_loss(Graph& g, const Var& segment_visual, const std::vector<std::vector<int>>& relations,
                    const HeadParams& h) {
  const std::size_t n = segment_visual.rows();
  if (relations.size() != n) throw DimensionError("gtr loss: relation matrix does not match segment count");
  std::vector<std::size_t> targets;
  for (const auto& row : relations) {
    for (int r : row) targets.push_back(static_cast<std::size_t>(r));
  }
  return g.cross_entropy(gtr_logits(g, segment_visual, h), std::move(targets));
}

inline Var sop_loss(Graph& g, const Var& z, const std::vector<SopPair>& pairs, const HeadParams& h) {
  if (pairs.empty()) throw ContractError("sop loss: no pairs");
  const std::size_t n = z.rows();
  std::vector<std::size_t> idx;
  std::vector<double> targets;
  for (const auto& p : pairs) {
    idx.push_back(p.first * n + p.second);
    targets.push_back(p.label);
  }
  auto flat = g.reshape(h.sop.logits(g, z), {n * n, 1});
  return g.bce_with_logits(g.gather_rows(flat, std::move(idx)), std::move(targets));
}

/// Weighted BCE of the per-visual-token masked/unmasked classifier; empty
/// when every token is excluded.
inline std::optional<Var> tia_loss(Graph& g, const Var& visual, const TiaMask& mask, const HeadParams& h) {
  if (mask.skipped()) return std::nullopt;
  auto logits = g.reshape(h.tia(g, visual), {visual.rows()});
  return g.bce_with_logits(logits, mask.labels, mask.weights);
}

/// Cross-entropy at the masked positions of the full-length text output;
/// empty when no token was selected.
inline std::optional<Var> mvlm_loss(Graph& g, const Var& text, const MvlmMask& mask, const HeadParams& h) {
  if (mask.skipped()) return std::nullopt;
  return g.cross_entropy(h.mvlm(g, g.gather_rows(text, mask.positions)), mask.targets);
}

}  // namespace hgdoc
