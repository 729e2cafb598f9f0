#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "hgdoc/features/config.hpp"
#include "hgdoc/features/corpus_io.hpp"
#include "hgdoc/features/document.hpp"
#include "hgdoc/features/embed.hpp"
#include "hgdoc/features/tokenize.hpp"

using namespace hgdoc;

namespace {

// Independent restatement of the label rule used by the generator.
int oracle_label(const DocumentSample& doc, std::size_t s, int vocab) {
  const int split = 4 + (vocab - 4) / 2;
  int hi = 0, n = 0;
  for (std::size_t w = doc.segments[s].start; w < doc.segments[s].end; ++w, ++n) hi += doc.words[w].id >= split;
  const auto& b = doc.segments[s].box;
  const double cx = 0.5 * (b.x0 + b.x1);
  const int topic = 2 * hi > n ? 1 : 0;
  const int side = cx >= 0.5 * doc.page_w ? 1 : 0;
  return topic * 2 + side;
}

DocumentSample one_segment_doc(int words) {
  DocumentSample doc;
  doc.page_w = 200;
  doc.page_h = 100;
  for (int i = 0; i < words; ++i) doc.words.push_back({10 + i, {10 + 5 * i, 10, 14 + 5 * i, 20}});
  doc.segments.push_back({0, static_cast<std::size_t>(words), {10, 10, 14 + 5 * (words - 1), 20}, kQuestion});
  doc.sentence_order = {0};
  return doc;
}

}  // namespace

TEST(Generator, SameSeedIdenticalSamples) {
  auto a = generate_synthetic_document(42, 400, 400, 7, 1024);
  auto b = generate_synthetic_document(42, 400, 400, 7, 1024);
  EXPECT_EQ(a, b);
  auto c = generate_synthetic_document(43, 400, 400, 7, 1024);
  EXPECT_FALSE(a == c);
}

TEST(Generator, SingleSegmentHasNoLinks) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_TRUE(generate_synthetic_document(seed, 400, 400, 1, 1024).links.empty());
  }
}

TEST(Generator, LabelsMatchIndependentRule) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto doc = generate_synthetic_document(seed, 400, 300, 9, 512);
    for (std::size_t s = 0; s < doc.segments.size(); ++s) {
      ASSERT_EQ(*doc.segments[s].label, oracle_label(doc, s, 512)) << "seed " << seed << " segment " << s;
    }
  }
}

TEST(Generator, LinksFollowNearestAnswerRule) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto doc = generate_synthetic_document(seed, 400, 400, 8, 1024);
    std::vector<std::pair<std::size_t, std::size_t>> expect;
    for (std::size_t q = 0; q < doc.segments.size(); ++q) {
      if (doc.segments[q].label != kQuestion) continue;
      const auto& bq = doc.segments[q].box;
      double best = 1e300;
      std::size_t arg = doc.segments.size();
      for (std::size_t a = 0; a < doc.segments.size(); ++a) {
        if (doc.segments[a].label != kAnswer) continue;
        const auto& ba = doc.segments[a].box;
        const double dx = 0.5 * (ba.x0 + ba.x1) - 0.5 * (bq.x0 + bq.x1);
        const double dy = 0.5 * (ba.y0 + ba.y1) - 0.5 * (bq.y0 + bq.y1);
        if (dx <= 0 && dy <= 0) continue;
        if (dx * dx + dy * dy < best) {
          best = dx * dx + dy * dy;
          arg = a;
        }
      }
      if (arg < doc.segments.size()) expect.emplace_back(q, arg);
    }
    EXPECT_EQ(doc.links, expect) << "seed " << seed;
  }
}

TEST(Generator, PageTooSmallIsGenerationError) {
  EXPECT_THROW(generate_synthetic_document(0, 400, 40, 10, 1024), GenerationError);
  EXPECT_THROW(generate_synthetic_document(0, 400, 400, 0, 1024), ContractError);
  EXPECT_THROW(generate_synthetic_document(0, 400, 400, 3, 8), ContractError);
}

TEST(Generator, CorpusLabelsBalancedAndLinksInRange) {
  auto docs = generate_corpus(7, 256);
  std::map<int, int> counts;
  int total = 0;
  for (const auto& d : docs) {
    for (auto [i, j] : d.links) {
      ASSERT_LT(i, d.segments.size());
      ASSERT_LT(j, d.segments.size());
    }
    for (const auto& s : d.segments) {
      ++counts[*s.label];
      ++total;
    }
  }
  const double expected = total / 4.0;
  for (int c = 0; c < 4; ++c) {
    EXPECT_NEAR(counts[c], expected, 0.2 * expected) << "category " << c;
  }
}

TEST(Generator, TokenStreamInvariantsOverHundredSeeds) {
  ModelConfig cfg;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto doc = generate_corpus(seed, 1)[0];
    doc.validate();
    auto ts = tokenize_and_pad(doc, cfg);
    ASSERT_EQ(ts.text_len(), 128u);
    ASSERT_EQ(ts.visual_len(), 32u);
    ASSERT_EQ(ts.text_len() % ts.visual_len(), 0u);
    EXPECT_EQ(ts.text_ids[0], kClsId);
    EXPECT_EQ(ts.text_boxes[0], (Box{0, 0, doc.page_w, doc.page_h}));
    std::size_t active = 0;
    for (std::size_t i = 0; i < ts.text_len(); ++i) {
      active += ts.text_mask[i];
      if (!ts.text_mask[i]) {
        EXPECT_EQ(ts.text_ids[i], kPadId);
        EXPECT_EQ(ts.text_boxes[i], Box{});
        EXPECT_EQ(ts.text_segment_ids[i], -1);
      }
    }
    EXPECT_EQ(active, doc.words.size() + 1);
    // Each word carries its own segment index.
    for (std::size_t s = 0; s < doc.segments.size(); ++s) {
      EXPECT_EQ(ts.positions_of(static_cast<int>(s)).size(), doc.segments[s].size());
      EXPECT_EQ(ts.visual_segment_ids[s], static_cast<int>(s));
    }
  }
}

TEST(Tokenize, EmptyDocumentHasOnlyCls) {
  DocumentSample doc;
  doc.page_w = doc.page_h = 100;
  auto ts = tokenize_and_pad(doc, ModelConfig{});
  std::size_t active = 0;
  for (auto m : ts.text_mask) active += m;
  EXPECT_EQ(active, 1u);
  EXPECT_EQ(ts.text_mask[0], 1);
}

TEST(Tokenize, ThreeWordsOneSegment) {
  auto ts = tokenize_and_pad(one_segment_doc(3), ModelConfig{});
  std::vector<int> expect(128, -1);
  expect[1] = expect[2] = expect[3] = 0;
  EXPECT_EQ(ts.text_segment_ids, expect);
  EXPECT_EQ(ts.text_ids[1], 10);
  EXPECT_EQ(ts.text_ids[3], 12);
}

TEST(Tokenize, ExactFitAndOverflow) {
  ModelConfig cfg;
  cfg.text_len = 16;
  cfg.visual_len = 8;
  cfg.n_stages = 2;
  auto ts = tokenize_and_pad(one_segment_doc(15), cfg);
  for (auto m : ts.text_mask) EXPECT_EQ(m, 1);
  try {
    tokenize_and_pad(one_segment_doc(16), cfg);
    FAIL() << "expected CapacityError";
  } catch (const CapacityError& e) {
    EXPECT_NE(std::string(e.what()).find("text"), std::string::npos);
  }
  auto doc = generate_synthetic_document(3, 400, 400, 9, 1024);
  cfg.text_len = 128;
  try {
    tokenize_and_pad(doc, cfg);
    FAIL() << "expected CapacityError";
  } catch (const CapacityError& e) {
    EXPECT_NE(std::string(e.what()).find("visual"), std::string::npos);
  }
}

TEST(Tokenize, WordsFollowReadingOrder) {
  // Segment 1 sits above segment 0 on the page, so its words come first.
  DocumentSample doc;
  doc.page_w = doc.page_h = 100;
  doc.words = {{20, {10, 60, 20, 70}}, {21, {10, 10, 20, 20}}};
  doc.segments = {{0, 1, {10, 60, 20, 70}, kQuestion}, {1, 2, {10, 10, 20, 20}, kQuestion}};
  doc.sentence_order = reading_order(doc.segments);
  EXPECT_EQ(doc.sentence_order, (std::vector<std::size_t>{1, 0}));
  auto ts = tokenize_and_pad(doc, ModelConfig{});
  EXPECT_EQ(ts.text_ids[1], 21);
  EXPECT_EQ(ts.text_segment_ids[1], 1);
  EXPECT_EQ(ts.text_ids[2], 20);
}

TEST(Embed, QuantizationBoundaries) {
  EXPECT_EQ(quantize(400, 400, 64), 63u);
  EXPECT_EQ(quantize(0, 400, 64), 0u);
  EXPECT_EQ(quantize(399, 400, 64), 63u);
  EXPECT_EQ(quantize(200, 400, 64), 32u);
  EmbedStats stats;
  EXPECT_EQ(quantize(-5, 400, 64, &stats), 0u);
  EXPECT_EQ(quantize(900, 400, 64, &stats), 63u);
  EXPECT_EQ(quantize(400, 400, 64, &stats), 63u);
  EXPECT_EQ(stats.clamped_coordinates, 2u);
}

TEST(Embed, IdenticalTokensGiveIdenticalRows) {
  ModelConfig cfg;
  ParameterStore store(5);
  auto p = EmbeddingParams::create(store, cfg);
  auto ts = tokenize_and_pad(generate_synthetic_document(1, 400, 400, 6, 1024), cfg);
  // PAD rows share id, box, segment; only position differs, so zero the position table.
  std::fill(p.position->value.begin(), p.position->value.end(), 0.0);
  Graph g({.track_grad = false});
  auto ds = embed(g, ts, p, cfg);
  const std::size_t d = 64;
  for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(ds.text.at(126, c), ds.text.at(127, c));
  // Repeated embedding is deterministic.
  Graph g2({.track_grad = false});
  auto ds2 = embed(g2, ts, p, cfg);
  EXPECT_TRUE(std::equal(ds.text.data().begin(), ds.text.data().end(), ds2.text.data().begin()));
  EXPECT_TRUE(std::equal(ds.visual.data().begin(), ds.visual.data().end(), ds2.visual.data().begin()));
}

TEST(Embed, PadLayoutIsBucketZero) {
  ModelConfig cfg;
  ParameterStore store(9);
  auto p = EmbeddingParams::create(store, cfg);
  auto ts = tokenize_and_pad(one_segment_doc(2), cfg);
  Graph g({.track_grad = false});
  auto ds = embed(g, ts, p, cfg);
  const std::size_t d = 64, row = 100;
  for (std::size_t c = 0; c < d; ++c) {
    const double expect = p.word->value[kPadId * d + c] + p.position->value[row * d + c] + p.x0->value[c] +
                          p.y0->value[c] + p.x1->value[c] + p.y1->value[c] + p.segment->value[c];
    EXPECT_NEAR(ds.text.at(row, c), expect, 1e-15);
  }
  // Visual PAD rows: zero feature, so projection contributes only the bias.
  for (std::size_t c = 0; c < d; ++c) {
    const double expect = p.visual_b->value[c] + p.x0->value[c] + p.y0->value[c] + p.x1->value[c] + p.y1->value[c] +
                          p.segment->value[c];
    EXPECT_NEAR(ds.visual.at(5, c), expect, 1e-15);
  }
}

TEST(Embed, OutOfVocabIsContractError) {
  ModelConfig cfg;
  ParameterStore store(1);
  auto p = EmbeddingParams::create(store, cfg);
  auto ts = tokenize_and_pad(one_segment_doc(2), cfg);
  ts.text_ids[1] = cfg.vocab;
  Graph g;
  EXPECT_THROW(embed(g, ts, p, cfg), ContractError);
}

TEST(Embed, OutOfPageCoordinatesAreCounted) {
  ModelConfig cfg;
  ParameterStore store(1);
  auto p = EmbeddingParams::create(store, cfg);
  auto ts = tokenize_and_pad(one_segment_doc(2), cfg);
  ts.text_boxes[1].x1 = ts.page_w + 10;
  Graph g({.track_grad = false});
  EmbedStats stats;
  embed(g, ts, p, cfg, &stats);
  EXPECT_EQ(stats.clamped_coordinates, 1u);
}

TEST(Config, ValidationAndJsonRoundTrip) {
  ModelConfig c = ModelConfig::base();
  EXPECT_NO_THROW(c.validate());
  nlohmann::json j = c;
  auto back = j.get<ModelConfig>();
  EXPECT_EQ(back.d, 768);
  EXPECT_EQ(back.text_len, 512);
  EXPECT_EQ(nlohmann::json(back), j);
  c.heads = 7;
  EXPECT_THROW(c.validate(), ContractError);
  c = ModelConfig{};
  c.text_len = 100;
  EXPECT_THROW(c.validate(), ContractError);
  j["format_version"] = 2;
  EXPECT_THROW(j.get<ModelConfig>(), std::runtime_error);
}

TEST(Corpus, JsonLinesRoundTrip) {
  auto docs = generate_corpus(11, 5);
  docs[2].segments[0].label.reset();
  std::stringstream ss;
  write_corpus(docs, ss);
  auto back = read_corpus(ss);
  ASSERT_EQ(back.size(), docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) EXPECT_EQ(back[i], docs[i]);
}

TEST(Corpus, RejectsBadBoxesAndVersion) {
  std::stringstream bad(
      R"({"format_version":1,"page_w":10,"page_h":10,"words":[{"id":5,"box":[0,0,20,5]}],)"
      R"("segments":[{"start":0,"end":1,"box":[0,0,5,5]}],"links":[]})");
  EXPECT_THROW(read_corpus(bad), std::runtime_error);
  std::stringstream version(R"({"format_version":3,"page_w":10,"page_h":10,"words":[],"segments":[],"links":[]})");
  EXPECT_THROW(read_corpus(version), std::runtime_error);
}
