#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hgdoc/features/config.hpp"
#include "hgdoc/features/document.hpp"

namespace hgdoc {

class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Padded model input. Text: [CLS] + words in reading order + [PAD]...;
/// visual: one token per segment (document order) + [PAD]...
struct TokenStreams {
  int page_w = 0;
  int page_h = 0;

  std::vector<int> text_ids;
  std::vector<Box> text_boxes;
  std::vector<int> text_segment_ids;  // -1 for [CLS] and [PAD]
  std::vector<std::uint8_t> text_mask;

  std::vector<int> visual_segment_ids;  // -1 for [PAD]
  std::vector<Box> visual_boxes;
  std::vector<std::uint8_t> visual_mask;
  // Content key of each segment's synthetic visual feature (0 for [PAD]).
  std::vector<std::uint64_t> visual_keys;
  // Set by image-patch masking: the feature is zeroed before projection.
  std::vector<std::uint8_t> visual_zeroed;

  std::size_t text_len() const { return text_ids.size(); }
  std::size_t visual_len() const { return visual_segment_ids.size(); }

  /// Text positions of segment s, in stream order.
  std::vector<std::size_t> positions_of(int segment) const {
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < text_segment_ids.size(); ++i) {
      if (text_segment_ids[i] == segment) pos.push_back(i);
    }
    return pos;
  }
};

inline std::uint64_t segment_content_key(const std::vector<int>& token_ids) {
  std::uint64_t h = 0x5eed5eed5eedULL;
  for (int id : token_ids) h = hash_combine(h, static_cast<std::uint64_t>(id));
  return h == 0 ? 1 : h;
}

inline TokenStreams tokenize_and_pad(const DocumentSample& doc, const ModelConfig& cfg) {
  const std::size_t lt = static_cast<std::size_t>(cfg.text_len);
  const std::size_t lv = static_cast<std::size_t>(cfg.visual_len);
  if (doc.words.size() + 1 > lt) {
    throw CapacityError("text stream overflow: " + std::to_string(doc.words.size()) + " words + [CLS] exceed " +
                        std::to_string(lt));
  }
  if (doc.segments.size() > lv) {
    throw CapacityError("visual stream overflow: " + std::to_string(doc.segments.size()) + " segments exceed " +
                        std::to_string(lv));
  }
  TokenStreams ts;
  ts.page_w = doc.page_w;
  ts.page_h = doc.page_h;
  ts.text_ids.reserve(lt);

  ts.text_ids.push_back(kClsId);
  ts.text_boxes.push_back({0, 0, doc.page_w, doc.page_h});
  ts.text_segment_ids.push_back(-1);
  ts.text_mask.push_back(1);
  for (std::size_t s : reading_order(doc.segments)) {
    const auto& seg = doc.segments[s];
    for (std::size_t w = seg.start; w < seg.end; ++w) {
      ts.text_ids.push_back(doc.words[w].id);
      ts.text_boxes.push_back(doc.words[w].box);
      ts.text_segment_ids.push_back(static_cast<int>(s));
      ts.text_mask.push_back(1);
    }
  }
  while (ts.text_ids.size() < lt) {
    ts.text_ids.push_back(kPadId);
    ts.text_boxes.push_back({});
    ts.text_segment_ids.push_back(-1);
    ts.text_mask.push_back(0);
  }

  for (std::size_t s = 0; s < lv; ++s) {
    const bool real = s < doc.segments.size();
    ts.visual_segment_ids.push_back(real ? static_cast<int>(s) : -1);
    ts.visual_boxes.push_back(real ? doc.segments[s].box : Box{});
    ts.visual_mask.push_back(real ? 1 : 0);
    ts.visual_keys.push_back(real ? segment_content_key(doc.segment_tokens(s)) : 0);
    ts.visual_zeroed.push_back(0);
  }
  return ts;
}

/// Fully active streams of the configured lengths; used by benchmarks and MAC
/// counting, where only shapes matter. Text token j belongs to segment
/// floor(j / r), matching the positional alignment.
inline TokenStreams dense_streams(const ModelConfig& cfg, std::uint64_t seed = 0) {
  Rng rng(seed);
  TokenStreams ts;
  ts.page_w = 512;
  ts.page_h = 512;
  const int r = cfg.ratio();
  for (int i = 0; i < cfg.text_len; ++i) {
    ts.text_ids.push_back(i == 0 ? kClsId : kFirstWordId + static_cast<int>(rng.below(static_cast<std::size_t>(cfg.vocab - kFirstWordId))));
    ts.text_boxes.push_back(i == 0 ? Box{0, 0, 512, 512} : Box{(i * 7) % 500, (i * 13) % 500, (i * 7) % 500 + 10, (i * 13) % 500 + 10});
    ts.text_segment_ids.push_back(i == 0 ? -1 : i / r);
    ts.text_mask.push_back(1);
  }
  for (int s = 0; s < cfg.visual_len; ++s) {
    ts.visual_segment_ids.push_back(s);
    ts.visual_boxes.push_back({(s * 11) % 480, (s * 17) % 480, (s * 11) % 480 + 30, (s * 17) % 480 + 12});
    ts.visual_mask.push_back(1);
    ts.visual_keys.push_back(hash_combine(seed, static_cast<std::uint64_t>(s) + 1));
    ts.visual_zeroed.push_back(0);
  }
  return ts;
}

}  // namespace hgdoc
