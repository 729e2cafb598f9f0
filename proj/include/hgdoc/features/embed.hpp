#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "hgdoc/features/config.hpp"
#include "hgdoc/features/tokenize.hpp"
#include "hgdoc/numerics/graph.hpp"
#include "hgdoc/numerics/params.hpp"

namespace hgdoc {

/// Paired text/visual hidden states with per-token segment ids and masks.
struct DualStream {
  Var text;
  Var visual;
  std::vector<int> text_segment_ids;
  std::vector<int> visual_segment_ids;
  std::vector<std::uint8_t> text_mask;
  std::vector<std::uint8_t> visual_mask;

  std::size_t text_len() const { return text.rows(); }
  std::size_t visual_len() const { return visual.rows(); }
  std::size_t ratio() const { return text.rows() / visual.rows(); }
};

struct EmbeddingParams {
  Parameter* word = nullptr;      // vocab x d
  Parameter* position = nullptr;  // L_t x d
  Parameter* x0 = nullptr;        // buckets x d, one table per box coordinate
  Parameter* y0 = nullptr;
  Parameter* x1 = nullptr;
  Parameter* y1 = nullptr;
  Parameter* segment = nullptr;   // (L_v + 1) x d, row 0 = no segment
  Parameter* visual_w = nullptr;  // visual_dim x d
  Parameter* visual_b = nullptr;  // d

  static EmbeddingParams create(ParameterStore& store, const ModelConfig& cfg, const std::string& prefix = "embed") {
    const auto d = static_cast<std::size_t>(cfg.d);
    const auto b = static_cast<std::size_t>(cfg.coord_buckets);
    const double s = cfg.init_std;
    EmbeddingParams p;
    p.word = &store.normal(prefix + ".word", {static_cast<std::size_t>(cfg.vocab), d}, s);
    p.position = &store.normal(prefix + ".position", {static_cast<std::size_t>(cfg.text_len), d}, s);
    p.x0 = &store.normal(prefix + ".x0", {b, d}, s);
    p.y0 = &store.normal(prefix + ".y0", {b, d}, s);
    p.x1 = &store.normal(prefix + ".x1", {b, d}, s);
    p.y1 = &store.normal(prefix + ".y1", {b, d}, s);
    p.segment = &store.normal(prefix + ".segment", {static_cast<std::size_t>(cfg.visual_len) + 1, d}, s);
    p.visual_w = &store.normal(prefix + ".visual_w", {static_cast<std::size_t>(cfg.visual_dim), d}, s);
    p.visual_b = &store.constant(prefix + ".visual_b", {d}, 0.0);
    return p;
  }
};

struct EmbedStats {
  std::size_t clamped_coordinates = 0;
};

/// floor(coord / page * buckets), clamped to [0, buckets - 1]. Coordinates
/// outside [0, page] are clamped and counted.
inline std::size_t quantize(int coord, int page, int buckets, EmbedStats* stats = nullptr) {
  if ((coord < 0 || coord > page) && stats) ++stats->clamped_coordinates;
  if (coord <= 0 || page <= 0) return 0;
  const long q = static_cast<long>(coord) * buckets / page;
  return static_cast<std::size_t>(std::clamp<long>(q, 0, buckets - 1));
}

/// Deterministic stand-in for a pooled region feature, keyed by content.
inline std::vector<double> synthetic_visual_feature(std::uint64_t key, int dim) {
  Rng rng(key);
  std::vector<double> f(static_cast<std::size_t>(dim));
  for (auto& v : f) v = rng.normal();
  return f;
}

namespace detail {
inline Var layout_embedding(Graph& g, const EmbeddingParams& p, const std::vector<Box>& boxes, int page_w, int page_h,
                            int buckets, EmbedStats* stats) {
  std::vector<std::size_t> qx0, qy0, qx1, qy1;
  for (const auto& b : boxes) {
    qx0.push_back(quantize(b.x0, page_w, buckets, stats));
    qy0.push_back(quantize(b.y0, page_h, buckets, stats));
    qx1.push_back(quantize(b.x1, page_w, buckets, stats));
    qy1.push_back(quantize(b.y1, page_h, buckets, stats));
  }
  auto e = g.add(g.gather_rows(g.param(*p.x0), std::move(qx0)), g.gather_rows(g.param(*p.y0), std::move(qy0)));
  e = g.add(e, g.gather_rows(g.param(*p.x1), std::move(qx1)));
  return g.add(e, g.gather_rows(g.param(*p.y1), std::move(qy1)));
}

inline std::vector<std::size_t> segment_rows(const std::vector<int>& ids) {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (int s : ids) rows.push_back(static_cast<std::size_t>(s + 1));
  return rows;
}
}  // namespace detail

/// Text: word + position + layout + segment embeddings.
/// Visual: projected synthetic feature + layout + segment embeddings.
inline DualStream embed(Graph& g, const TokenStreams& ts, const EmbeddingParams& p, const ModelConfig& cfg,
                        EmbedStats* stats = nullptr) {
  const std::size_t lt = ts.text_len(), lv = ts.visual_len();
  for (int id : ts.text_ids) {
    if (id < 0 || id >= cfg.vocab) throw ContractError("embed: token id " + std::to_string(id) + " outside vocab");
  }
  DualStream out;
  {
    auto sc = g.scope("embed");
    std::vector<std::size_t> ids(ts.text_ids.begin(), ts.text_ids.end());
    std::vector<std::size_t> pos(lt);
    for (std::size_t i = 0; i < lt; ++i) pos[i] = i;
    auto text = g.add(g.gather_rows(g.param(*p.word), std::move(ids)), g.gather_rows(g.param(*p.position), std::move(pos)));
    text = g.add(text, detail::layout_embedding(g, p, ts.text_boxes, ts.page_w, ts.page_h, cfg.coord_buckets, stats));
    text = g.add(text, g.gather_rows(g.param(*p.segment), detail::segment_rows(ts.text_segment_ids)));

    const auto fdim = static_cast<std::size_t>(cfg.visual_dim);
    Var feats;
    if (g.shape_only()) {
      feats = g.input(Shape{lv, fdim});
    } else {
      std::vector<double> buf(lv * fdim, 0.0);
      for (std::size_t s = 0; s < lv; ++s) {
        if (!ts.visual_mask[s] || ts.visual_zeroed[s]) continue;
        auto f = synthetic_visual_feature(ts.visual_keys[s], cfg.visual_dim);
        std::copy(f.begin(), f.end(), buf.begin() + static_cast<std::ptrdiff_t>(s * fdim));
      }
      feats = g.input(Shape{lv, fdim}, std::move(buf));
    }
    auto visual = g.add_row(g.matmul(feats, g.param(*p.visual_w)), g.param(*p.visual_b));
    visual = g.add(visual, detail::layout_embedding(g, p, ts.visual_boxes, ts.page_w, ts.page_h, cfg.coord_buckets, stats));
    visual = g.add(visual, g.gather_rows(g.param(*p.segment), detail::segment_rows(ts.visual_segment_ids)));
    out.text = text;
    out.visual = visual;
  }
  out.text_segment_ids = ts.text_segment_ids;
  out.visual_segment_ids = ts.visual_segment_ids;
  out.text_mask = ts.text_mask;
  out.visual_mask = ts.visual_mask;
  return out;
}

}  // namespace hgdoc
