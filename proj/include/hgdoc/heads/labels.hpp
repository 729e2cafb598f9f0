#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "hgdoc/features/document.hpp"
#include "hgdoc/features/tokenize.hpp"
#include "hgdoc/numerics/rng.hpp"

namespace hgdoc {

// Spatial relation classes of the GTR task. Directions are those of the
// second segment's center seen from the first, with y growing downward.
enum Relation : int {
  kFar = 0,
  kUp = 1,
  kBottom = 2,
  kLeft = 3,
  kRight = 4,
  kTopLeft = 5,
  kTopRight = 6,
  kBottomLeft = 7,
  kBottomRight = 8,
  kCoincident = 9,
};
inline constexpr int kNumRelations = 10;

/// Relation of center j as seen from center i.
inline int relation_between(double cix, double ciy, double cjx, double cjy, int page_w, int page_h) {
  const double size = std::max(page_w, page_h);
  const double dx = cjx - cix, dy = cjy - ciy;
  const double dist = std::hypot(dx, dy);
  if (dist > 0.5 * size) return kFar;
  if (dist < 1e-6 * size) return kCoincident;
  // Counter-clockwise angle with y pointing up, split into 45-degree sectors
  // centred on the axes and diagonals.
  const double deg = std::atan2(-dy, dx) * 180.0 / std::numbers::pi;
  const int sector = static_cast<int>(std::lround((deg < 0 ? deg + 360.0 : deg) / 45.0)) % 8;
  static constexpr int kBySector[8] = {kRight, kTopRight, kUp, kTopLeft, kLeft, kBottomLeft, kBottom, kBottomRight};
  return kBySector[sector];
}

/// N x N relation matrix over segment box centers.
inline std::vector<std::vector<int>> gtr_labels(const std::vector<Box>& boxes, int page_w, int page_h) {
  const std::size_t n = boxes.size();
  std::vector<std::vector<int>> g(n, std::vector<int>(n, kCoincident));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      g[i][j] = relation_between(0.5 * boxes[i].cx2(), 0.5 * boxes[i].cy2(), 0.5 * boxes[j].cx2(), 0.5 * boxes[j].cy2(),
                                 page_w, page_h);
    }
  }
  return g;
}

inline std::vector<Box> segment_boxes(const DocumentSample& doc) {
  std::vector<Box> boxes;
  for (const auto& s : doc.segments) boxes.push_back(s.box);
  return boxes;
}

struct SopPair {
  std::size_t first = 0;
  std::size_t second = 0;
  int label = 0;
  bool operator==(const SopPair&) const = default;
};

/// 1 when j directly follows i in reading order.
inline int sop_label(const std::vector<std::size_t>& order, std::size_t i, std::size_t j) {
  for (std::size_t t = 0; t + 1 < order.size(); ++t) {
    if (order[t] == i) return order[t + 1] == j ? 1 : 0;
  }
  return 0;
}

/// Adjacent reading-order pairs as positives; reversed and non-adjacent
/// pairs as negatives, down-sampled to the positive count.
inline std::vector<SopPair> sop_pairs(const DocumentSample& doc, std::uint64_t seed) {
  const auto order = reading_order(doc.segments);
  const std::size_t n = order.size();
  std::vector<SopPair> out;
  if (n < 2) return out;
  std::vector<SopPair> negatives;
  for (std::size_t t = 0; t + 1 < n; ++t) out.push_back({order[t], order[t + 1], 1});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && sop_label(order, i, j) == 0) negatives.push_back({i, j, 0});
    }
  }
  Rng rng(seed);
  rng.shuffle(std::span<SopPair>(negatives));
  negatives.resize(std::min(negatives.size(), out.size()));
  std::sort(negatives.begin(), negatives.end(),
            [](const SopPair& a, const SopPair& b) { return std::pair(a.first, a.second) < std::pair(b.first, b.second); });
  out.insert(out.end(), negatives.begin(), negatives.end());
  return out;
}

/// Masked visual-language modelling selection over the text stream.
struct MvlmMask {
  std::vector<int> input_ids;           // ids after replacement
  std::vector<std::size_t> positions;   // selected positions, ascending
  std::vector<std::size_t> targets;     // original ids at those positions
  bool skipped() const { return positions.empty(); }
};

/// Each active word position (not [CLS], not [PAD]) is selected when a
/// uniform draw falls below `ratio`; a selected token then draws again:
/// < 0.8 becomes [MASK], < 0.9 becomes a random word id, otherwise it is kept.
inline MvlmMask mvlm_mask(const TokenStreams& ts, double ratio, std::uint64_t seed, int vocab) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("mvlm: mask ratio must lie in (0, 1)");
  Rng rng(seed);
  MvlmMask m;
  m.input_ids = ts.text_ids;
  for (std::size_t i = 0; i < ts.text_len(); ++i) {
    if (!ts.text_mask[i] || ts.text_ids[i] == kClsId) continue;
    if (rng.uniform() >= ratio) continue;
    m.positions.push_back(i);
    m.targets.push_back(static_cast<std::size_t>(ts.text_ids[i]));
    const double u = rng.uniform();
    if (u < 0.8) {
      m.input_ids[i] = kMaskId;
    } else if (u < 0.9) {
      m.input_ids[i] = kFirstWordId + static_cast<int>(rng.below(static_cast<std::size_t>(vocab - kFirstWordId)));
    }
  }
  return m;
}

/// Text-image alignment selection over the visual stream.
struct TiaMask {
  std::vector<std::uint8_t> zeroed;  // per visual token
  std::vector<double> labels;        // 1 for zeroed tokens
  std::vector<double> weights;       // 0 for [PAD] and MVLM-touched segments
  bool skipped() const {
    return std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; });
  }
};

/// Zeroes round(ratio * active) visual tokens chosen by a seeded shuffle.
/// Segments with any MVLM-selected word are excluded from the loss.
inline TiaMask tia_mask(const TokenStreams& ts, double ratio, std::uint64_t seed, const MvlmMask* mvlm = nullptr) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("tia: mask ratio must lie in (0, 1)");
  const std::size_t lv = ts.visual_len();
  std::vector<std::size_t> active;
  for (std::size_t v = 0; v < lv; ++v) {
    if (ts.visual_mask[v]) active.push_back(v);
  }
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(active));
  const auto count = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(active.size())));
  TiaMask t;
  t.zeroed.assign(lv, 0);
  t.labels.assign(lv, 0.0);
  t.weights.assign(lv, 0.0);
  for (std::size_t i = 0; i < count && i < active.size(); ++i) {
    t.zeroed[active[i]] = 1;
    t.labels[active[i]] = 1.0;
  }
  std::vector<std::uint8_t> touched(lv, 0);
  if (mvlm) {
    for (auto pos : mvlm->positions) {
      const int s = ts.text_segment_ids[pos];
      if (s >= 0 && static_cast<std::size_t>(s) < lv) touched[static_cast<std::size_t>(s)] = 1;
    }
  }
  for (std::size_t v = 0; v < lv; ++v) t.weights[v] = ts.visual_mask[v] && !touched[v] ? 1.0 : 0.0;
  return t;
}

}  // namespace hgdoc
