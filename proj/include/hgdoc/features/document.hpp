#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hgdoc/numerics/rng.hpp"
#include "hgdoc/numerics/tensor.hpp"

namespace hgdoc {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reserved token ids; synthetic words start at kFirstWordId.
inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kMaskId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kFirstWordId = 4;

/// Pixel box [x0, y0, x1, y1].
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool operator==(const Box&) const = default;
  // Doubled center coordinates keep center arithmetic integral.
  long cx2() const { return static_cast<long>(x0) + x1; }
  long cy2() const { return static_cast<long>(y0) + y1; }
  bool within(int page_w, int page_h) const {
    return 0 <= x0 && x0 <= x1 && x1 <= page_w && 0 <= y0 && y0 <= y1 && y1 <= page_h;
  }
};

enum Category : int { kQuestion = 0, kAnswer = 1, kHeader = 2, kOther = 3 };
inline constexpr int kNumCategories = 4;

struct Word {
  int id = kUnkId;
  Box box;
};

struct Segment {
  std::size_t start = 0;  // word range [start, end)
  std::size_t end = 0;
  Box box;
  std::optional<int> label;
  std::size_t size() const { return end - start; }
};

struct DocumentSample {
  int page_w = 0;
  int page_h = 0;
  std::vector<Word> words;
  std::vector<Segment> segments;
  std::vector<std::pair<std::size_t, std::size_t>> links;
  std::vector<std::size_t> sentence_order;

  bool operator==(const DocumentSample& o) const {
    auto word_eq = [](const Word& a, const Word& b) { return a.id == b.id && a.box == b.box; };
    auto seg_eq = [](const Segment& a, const Segment& b) {
      return a.start == b.start && a.end == b.end && a.box == b.box && a.label == b.label;
    };
    return page_w == o.page_w && page_h == o.page_h &&
           std::equal(words.begin(), words.end(), o.words.begin(), o.words.end(), word_eq) &&
           std::equal(segments.begin(), segments.end(), o.segments.begin(), o.segments.end(), seg_eq) &&
           links == o.links && sentence_order == o.sentence_order;
  }

  std::vector<int> segment_tokens(std::size_t s) const {
    std::vector<int> ids;
    for (std::size_t w = segments[s].start; w < segments[s].end; ++w) ids.push_back(words[w].id);
    return ids;
  }

  /// Throws ContractError when a box or segment range breaks the invariants.
  void validate() const {
    if (page_w <= 0 || page_h <= 0) throw ContractError("document: page size must be positive");
    for (const auto& w : words) {
      if (!w.box.within(page_w, page_h)) throw ContractError("document: word box outside page");
    }
    std::size_t next = 0;
    for (const auto& s : segments) {
      if (!s.box.within(page_w, page_h)) throw ContractError("document: segment box outside page");
      if (s.start != next || s.end < s.start || s.end > words.size()) {
        throw ContractError("document: segment ranges must partition the word list");
      }
      next = s.end;
    }
    if (next != words.size()) throw ContractError("document: segment ranges must cover every word");
    for (auto [i, j] : links) {
      if (i >= segments.size() || j >= segments.size()) throw ContractError("document: link index out of range");
    }
  }
};

/// Reading order: top-to-bottom, then left-to-right by box origin.
inline std::vector<std::size_t> reading_order(const std::vector<Segment>& segments) {
  std::vector<std::size_t> order(segments.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ba = segments[a].box;
    const auto& bb = segments[b].box;
    return std::pair(ba.y0, ba.x0) < std::pair(bb.y0, bb.x0);
  });
  return order;
}

// First id of the upper half of the word vocabulary.
inline int topic_split(int vocab) { return kFirstWordId + (vocab - kFirstWordId) / 2; }

/// Label = 2 * topic + side, where topic is the majority half of the token
/// ids and side says whether the box center lies in the right half of the page.
inline int label_rule(const std::vector<int>& token_ids, const Box& box, int page_w, int vocab) {
  const int split = topic_split(vocab);
  const auto upper = std::count_if(token_ids.begin(), token_ids.end(), [&](int id) { return id >= split; });
  const int topic = 2 * static_cast<std::size_t>(upper) > token_ids.size() ? 1 : 0;
  const int side = box.cx2() >= page_w ? 1 : 0;
  return 2 * topic + side;
}

/// Each question links to the nearest answer lying to its right or below
/// (box centers; ties go to the lower index).
inline std::vector<std::pair<std::size_t, std::size_t>> link_rule(const std::vector<Segment>& segments) {
  std::vector<std::pair<std::size_t, std::size_t>> links;
  for (std::size_t q = 0; q < segments.size(); ++q) {
    if (segments[q].label != kQuestion) continue;
    const auto& bq = segments[q].box;
    std::optional<std::size_t> best;
    long best_d2 = 0;
    for (std::size_t a = 0; a < segments.size(); ++a) {
      if (segments[a].label != kAnswer) continue;
      const auto& ba = segments[a].box;
      const long dx = ba.cx2() - bq.cx2();
      const long dy = ba.cy2() - bq.cy2();
      if (dx <= 0 && dy <= 0) continue;
      const long d2 = dx * dx + dy * dy;
      if (!best || d2 < best_d2) {
        best = a;
        best_d2 = d2;
      }
    }
    if (best) links.emplace_back(q, *best);
  }
  return links;
}

/// Deterministic synthetic page: segments in rows of two (left/right column);
/// each row is either question/answer or header/other, realized through the
/// token-topic and side that label_rule reads back.
inline DocumentSample generate_synthetic_document(std::uint64_t seed, int page_w, int page_h, int n_segments,
                                                  int vocab) {
  if (n_segments < 1) throw ContractError("generate: n_segments must be >= 1");
  if (vocab < 16) throw ContractError("generate: vocab must be >= 16");
  constexpr int margin = 8, min_h = 12, gap = 4, min_w = 24;
  const int rows = (n_segments + 1) / 2;
  const int pitch = (page_h - 2 * margin) / rows;
  if (pitch < min_h + gap || page_w < 4 * margin + 2 * min_w) {
    throw GenerationError("generate: page " + std::to_string(page_w) + "x" + std::to_string(page_h) +
                          " too small for " + std::to_string(n_segments) + " segments");
  }

  Rng rng(seed);
  DocumentSample doc;
  doc.page_w = page_w;
  doc.page_h = page_h;
  const int split = topic_split(vocab);
  const int half = page_w / 2;

  for (int r = 0; r < rows; ++r) {
    const int slack = pitch - min_h - gap;
    const int jitter = rng.between(0, slack / 2);
    const int y0 = margin + r * pitch + jitter;
    const int h = min_h + rng.between(0, std::min(slack - jitter, 12));
    const int y1 = y0 + h;
    const int topic = static_cast<int>(rng.below(2));
    const int in_row = std::min(2, n_segments - 2 * r);
    for (int c = 0; c < in_row; ++c) {
      const int lo = c == 0 ? margin : half + margin;
      const int hi = c == 0 ? half - margin : page_w - margin;
      const int span = hi - lo;
      int x0 = lo + rng.between(0, span / 4);
      int x1 = hi - rng.between(0, span / 4);
      const int n_words = rng.between(2, 5);
      Segment seg;
      seg.start = doc.words.size();
      seg.box = {x0, y0, x1, y1};
      const int wspan = x1 - x0;
      for (int w = 0; w < n_words; ++w) {
        Word word;
        word.id = topic == 0 ? kFirstWordId + static_cast<int>(rng.below(static_cast<std::size_t>(split - kFirstWordId)))
                             : split + static_cast<int>(rng.below(static_cast<std::size_t>(vocab - split)));
        const int wx0 = x0 + w * wspan / n_words;
        const int wx1 = std::max(wx0, x0 + (w + 1) * wspan / n_words - 1);
        word.box = {wx0, y0, wx1, y1};
        doc.words.push_back(word);
      }
      seg.end = doc.words.size();
      doc.segments.push_back(seg);
    }
  }
  for (std::size_t s = 0; s < doc.segments.size(); ++s) {
    doc.segments[s].label = label_rule(doc.segment_tokens(s), doc.segments[s].box, page_w, vocab);
  }
  doc.links = link_rule(doc.segments);
  doc.sentence_order = reading_order(doc.segments);
  return doc;
}

struct CorpusOptions {
  int page_w = 400;
  int page_h = 400;
  int min_segments = 4;
  int max_segments = 10;
  int vocab = 1024;
};

inline std::vector<DocumentSample> generate_corpus(std::uint64_t seed, std::size_t count, const CorpusOptions& opt = {}) {
  std::vector<DocumentSample> docs;
  docs.reserve(count);
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const int n = rng.between(opt.min_segments, opt.max_segments);
    docs.push_back(generate_synthetic_document(hash_combine(seed, i), opt.page_w, opt.page_h, n, opt.vocab));
  }
  return docs;
}

}  // namespace hgdoc
