#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "hgdoc/bench/checkpoint.hpp"
#include "hgdoc/bench/macs.hpp"
#include "hgdoc/bench/redundancy.hpp"
#include "hgdoc/bench/timing.hpp"
#include "hgdoc/bench/train.hpp"

using namespace hgdoc;

namespace {

ModelConfig small() {
  ModelConfig c;
  c.d = 16;
  c.heads = 2;
  c.d_ffn = 32;
  c.k = 2;
  c.n_stages = 2;
  c.text_len = 64;
  c.visual_len = 16;
  c.vocab = 64;
  c.coord_buckets = 16;
  c.visual_dim = 8;
  return c;
}

std::vector<DocumentSample> small_corpus(std::size_t n, std::uint64_t seed = 3) {
  CorpusOptions o;
  o.vocab = 64;
  o.min_segments = 3;
  o.max_segments = 6;
  return generate_corpus(seed, n, o);
}

AttentionRecorder recorder_with(std::vector<Tensor> weights, std::vector<std::string> kinds) {
  AttentionRecorder rec;
  for (auto& k : kinds) rec.begin_layer(k);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    rec.records.push_back({i % kinds.size(), kinds[i % kinds.size()], 0, weights[i], Mask(weights[i].shape()[0], 1)});
  }
  return rec;
}

}  // namespace

// ------------------------------------------------------------------ MACs

TEST(Macs, ClosedFormValues) {
  EXPECT_EQ(count_macs_vanilla(1, 1, 1, 1), 8u);
  const double at512 = static_cast<double>(count_macs_vanilla(512, 768, 12, 3072));
  EXPECT_NEAR(at512 / 1e9, 48.32, 0.005);
  EXPECT_LT(std::abs(at512 / 48.36e9 - 1.0), 0.01);
  const double at8192 = static_cast<double>(count_macs_vanilla(8192, 768, 12, 3072));
  EXPECT_LT(std::abs(at8192 / 1933.49e9 - 1.0), 0.01);
  EXPECT_THROW(count_macs_vanilla(0, 1, 1, 1), ContractError);
}

TEST(Macs, PlainStackMatchesClosedForm) {
  const auto cfg = ModelConfig::base();
  for (std::size_t L : {512u, 2048u}) {
    auto r = count_macs_sa_stack(L, cfg, 12);
    EXPECT_EQ(r.total, count_macs_vanilla(L, 768, 12, 3072));
    EXPECT_EQ(r.per_layer.size(), 12u);
  }
}

TEST(Macs, TotalIsSumOfLayers) {
  auto r = count_macs_graph(ModelConfig::base());
  std::uint64_t sum = 0;
  for (const auto& [name, v] : r.per_layer) sum += v;
  EXPECT_EQ(sum, r.total);
  EXPECT_EQ(r.layer_macs("embed"), static_cast<std::uint64_t>(128 * 32 * 768));  // visual projection only
  EXPECT_GT(r.layer_macs("merge0.sa"), 0u);
  EXPECT_GT(r.layer_macs("extend2.sca"), 0u);
  EXPECT_NEAR(r.reduction_vs_vanilla, 1.0 - static_cast<double>(r.total) / static_cast<double>(r.vanilla_total), 1e-15);
}

TEST(Macs, HourglassBelowMatchedVanillaAndEqualAtKOne) {
  for (int L : {64, 128, 256, 512}) {
    auto cfg = at_length(small(), L);
    const auto h = count_macs_graph(cfg, EncoderMode::hourglass).total;
    const auto v = count_macs_graph(cfg, EncoderMode::vanilla).total;
    EXPECT_LT(h, v) << L;
    cfg.k = 1;
    EXPECT_EQ(count_macs_graph(cfg, EncoderMode::hourglass).total, count_macs_graph(cfg, EncoderMode::vanilla).total);
  }
}

TEST(Macs, ReductionIncreasesWithLength) {
  double prev = -1e9;
  for (int L : {512, 1024, 2048, 4096, 8192}) {
    const auto r = count_macs_graph(at_length(ModelConfig::base(), L));
    EXPECT_GT(r.reduction_vs_vanilla, prev) << L;
    prev = r.reduction_vs_vanilla;
  }
}

TEST(Macs, ValueIndependentAndMatchesMaterializedRun) {
  auto cfg = small();
  const auto shape_only = count_macs_graph(cfg).total;
  ParameterStore store(cfg.seed);
  auto p = EncoderParams::create(store, cfg);
  for (std::uint64_t seed : {1u, 2u}) {
    Graph g({.track_grad = false});
    encode(g, dense_streams(cfg, seed), p, cfg);
    EXPECT_EQ(g.total_macs(), shape_only);
  }
}

TEST(Macs, DoublingDQuadruplesProjectionTerms) {
  ModelConfig a = small();
  a.text_len = 32;
  a.visual_len = 8;
  a.d = 64;
  a.d_ffn = 256;
  a.heads = 4;
  ModelConfig b = a;
  b.d = 128;
  b.d_ffn = 512;
  const double ratio = static_cast<double>(count_macs_graph(b).total) / static_cast<double>(count_macs_graph(a).total);
  EXPECT_GT(ratio, 3.5);
  EXPECT_LT(ratio, 4.0);
}

TEST(Macs, LayerOfScope) {
  EXPECT_EQ(layer_of_scope("merge1.sca.tv"), "merge1.sca");
  EXPECT_EQ(layer_of_scope("embed"), "embed");
  EXPECT_EQ(layer_of_scope(""), "other");
}

// ------------------------------------------------------------- benchmark

TEST(Benchmark, ReportsMediansAndSpeedup) {
  auto res = run_benchmark({32, 64}, small(), 5, 0.0);
  ASSERT_EQ(res.size(), 2u);
  for (const auto& r : res) {
    EXPECT_TRUE(r.ok);
    EXPECT_GT(r.vanilla_seconds, 0.0);
    EXPECT_GT(r.hourglass_seconds, 0.0);
    EXPECT_DOUBLE_EQ(r.speedup, r.vanilla_seconds / r.hourglass_seconds - 1.0);
    EXPECT_EQ(r.visual_len * 4, r.text_len);
  }
  EXPECT_THROW(run_benchmark({64}, small(), 4), ContractError);
  EXPECT_THROW(run_benchmark({36}, small(), 5, 0.0), ContractError);
}

// ------------------------------------------------------------ redundancy

TEST(Redundancy, UniformAttentionCountsZero) {
  Tensor w({3, 4});
  std::fill(w.buffer().begin(), w.buffer().end(), 0.25);
  auto rows = attention_redundancy_stat(recorder_with({w, w}, {"sa", "sca"}));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].count, 0u);
  EXPECT_EQ(rows[1].cumulative, 0u);
}

TEST(Redundancy, SingleActiveRowsCountOnceAndCumulativeGrows) {
  Tensor one({2, 3});
  one.at(0, 1) = 1.0;
  one.at(1, 0) = 1.0;
  Tensor mixed({2, 2});
  mixed.at(0, 0) = 0.71;
  mixed.at(0, 1) = 0.29;
  mixed.at(1, 0) = 0.7;  // not strictly above
  mixed.at(1, 1) = 0.3;
  auto rec = recorder_with({one, mixed, one}, {"sa", "sca", "sa"});
  rec.records[2].query_mask = {1, 0};
  auto rows = attention_redundancy_stat(rec);
  EXPECT_EQ(rows[0].count, 2u);
  EXPECT_EQ(rows[1].count, 1u);
  EXPECT_EQ(rows[2].count, 1u);
  for (std::size_t l = 1; l < rows.size(); ++l) EXPECT_GE(rows[l].cumulative, rows[l - 1].cumulative);
  EXPECT_EQ(rows.back().cumulative, 4u);
  EXPECT_EQ(redundancy_count(rows, "sa"), 3u);
  std::ostringstream csv;
  write_redundancy_csv(rows, csv);
  EXPECT_EQ(csv.str(), "layer,count,cumulative\n0,2,2\n1,1,3\n2,1,4\n");
  std::ostringstream dump;
  write_attention_dump(rec, 0.7, dump);
  EXPECT_EQ(dump.str(), "layer,head,query_index,key_index,weight\n0,0,0,1,1\n0,0,1,0,1\n1,0,0,0,0.71\n2,0,0,1,1\n");
}

TEST(Redundancy, RecordedEncoderAndMissingRecords) {
  EXPECT_THROW(attention_redundancy_stat(AttentionRecorder{}), ContractError);
  auto cfg = small();
  DocumentModel m(cfg);
  AttentionRecorder rec;
  Graph g({.track_grad = false});
  run_task(g, m, small_corpus(1)[0], Task::labeling, 0, {.recorder = &rec});
  auto rows = attention_redundancy_stat(rec);
  EXPECT_EQ(rows.size(), 8u);  // (SA + SCA) per block, 4 blocks
  for (std::size_t l = 1; l < rows.size(); ++l) EXPECT_GE(rows[l].cumulative, rows[l - 1].cumulative);
}

// ----------------------------------------------------------------- train

TEST(Metrics, AucAndF1ByHand) {
  MetricAccumulator acc(Task::linking);
  DocumentSample doc;
  doc.segments.resize(2);
  doc.links = {{0, 1}};
  TaskResult r;
  Graph g;
  r.loss = g.input({1}, {0.0});
  r.link_logits = {0.0, 2.0, -1.0, 0.0};  // pairs (0,1) gold, (1,0) not
  acc.add(doc, r);
  auto m = acc.finish();
  EXPECT_EQ(m.at("auc"), 1.0);
  EXPECT_EQ(m.at("accuracy"), 1.0);
  r.link_logits = {0.0, -1.0, 2.0, 0.0};
  MetricAccumulator bad(Task::linking);
  bad.add(doc, r);
  EXPECT_EQ(bad.finish().at("auc"), 0.0);
  EXPECT_EQ(bad.finish().at("f1"), 0.0);
}

TEST(Train, ZeroLearningRateKeepsEverythingConstant) {
  DocumentModel m(small());
  auto corpus = small_corpus(3);
  std::vector<std::vector<double>> before;
  for (const auto& p : m.store) before.push_back(p.value);
  TrainOptions opt;
  opt.lr = 0.0;
  opt.epochs = 3;
  auto res = train_loop(m, corpus, opt);
  ASSERT_EQ(res.history.size(), 3u);
  EXPECT_EQ(res.history[0].train.at("loss"), res.history[2].train.at("loss"));
  std::size_t t = 0;
  for (const auto& p : m.store) EXPECT_EQ(p.value, before[t++]) << p.name;
  TrainOptions negative;
  negative.lr = -1.0;
  EXPECT_THROW(train_loop(m, corpus, negative), ContractError);
  EXPECT_THROW(train_loop(m, {}, opt), ContractError);
}

TEST(Train, SeedDeterminism) {
  auto corpus = small_corpus(4);
  std::vector<double> curves[2];
  for (auto& curve : curves) {
    DocumentModel m(small());
    TrainOptions opt;
    opt.task = Task::pretrain;
    opt.lr = 0.01;
    opt.epochs = 3;
    opt.seed = 9;
    for (const auto& e : train_loop(m, corpus, opt).history) curve.push_back(e.train.at("loss"));
  }
  EXPECT_EQ(curves[0], curves[1]);
}

TEST(Train, DivergenceRestoresLastFiniteState) {
  DocumentModel m(small());
  auto corpus = small_corpus(8);
  TrainOptions opt;
  opt.lr = 1e6;
  opt.epochs = 5;
  auto res = train_loop(m, corpus, opt);
  EXPECT_TRUE(res.diverged);
  for (const auto& p : m.store) {
    for (double v : p.value) ASSERT_TRUE(std::isfinite(v)) << p.name;
  }
  Graph g({.track_grad = false});
  EXPECT_TRUE(std::isfinite(run_task(g, m, corpus[0], Task::labeling).loss.item()));
}

TEST(Train, SingleDocumentOverfitsAtDeskDefaults) {
  ModelConfig cfg;
  DocumentModel m(cfg);
  auto corpus = generate_corpus(11, 1);
  TrainOptions opt;
  opt.lr = 0.003;
  opt.epochs = 200;
  opt.target = 1.0;
  auto res = train_loop(m, corpus, opt);
  EXPECT_TRUE(res.stopped_early);
  EXPECT_EQ(evaluate(m, corpus, Task::labeling).at("accuracy"), 1.0);
}

// ------------------------------------------------------------ checkpoint

TEST(Checkpoint, RoundTripIsBitwise) {
  auto cfg = small();
  cfg.seed = 5;
  DocumentModel m(cfg);
  m.store.get("head.tia.b").value[0] = -0.1234567890123;
  std::stringstream buf;
  write_checkpoint(m, buf);
  auto back = read_checkpoint(buf);
  EXPECT_EQ(nlohmann::json(back.cfg), nlohmann::json(cfg));
  ASSERT_EQ(back.store.size(), m.store.size());
  for (std::size_t i = 0; i < m.store.size(); ++i) {
    EXPECT_EQ(back.store[i].name, m.store[i].name);
    EXPECT_EQ(back.store[i].value, m.store[i].value);
  }
  Graph a({.track_grad = false}), b({.track_grad = false});
  auto doc = small_corpus(1)[0];
  EXPECT_EQ(run_task(a, m, doc, Task::labeling).loss.item(), run_task(b, back, doc, Task::labeling).loss.item());
}

TEST(Checkpoint, RejectsCorruptInput) {
  DocumentModel m(small());
  std::stringstream buf;
  write_checkpoint(m, buf);
  const std::string bytes = buf.str();
  {
    std::stringstream s("XXXX" + bytes.substr(4));
    EXPECT_THROW(read_checkpoint(s), std::runtime_error);
  }
  {
    std::string v = bytes;
    v[4] = 2;
    std::stringstream s(v);
    EXPECT_THROW(read_checkpoint(s), std::runtime_error);
  }
  {
    std::stringstream s(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_checkpoint(s), std::runtime_error);
  }
}
