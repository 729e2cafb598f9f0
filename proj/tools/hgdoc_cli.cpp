#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "hgdoc/bench/checkpoint.hpp"
#include "hgdoc/bench/macs.hpp"
#include "hgdoc/bench/redundancy.hpp"
#include "hgdoc/bench/timing.hpp"
#include "hgdoc/bench/train.hpp"
#include "hgdoc/features/corpus_io.hpp"

using namespace hgdoc;
namespace fs = std::filesystem;

namespace {

ModelConfig config_or(const std::string& path, ModelConfig fallback) {
  auto cfg = path.empty() ? fallback : load_config(path);
  cfg.validate();
  return cfg;
}

std::vector<int> doubling(int start, int count) {
  std::vector<int> v;
  for (int i = 0; i < count; ++i) v.push_back(start << i);
  return v;
}

nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

int analyze_flops(const std::string& config, std::vector<int> lengths, bool per_layer) {
  const auto cfg = config_or(config, ModelConfig::base());
  if (lengths.empty()) lengths = doubling(cfg.text_len, 5);
  std::cout << "length,vanilla_macs,hourglass_macs,reduction\n";
  std::vector<MacReport> reports;
  for (int L : lengths) {
    auto r = count_macs_graph(at_length(cfg, L));
    std::cout << L << ',' << r.vanilla_total << ',' << r.total << ',' << std::setprecision(6) << r.reduction_vs_vanilla
              << '\n';
    reports.push_back(std::move(r));
  }
  if (per_layer) {
    std::cout << "\nlength,layer,macs\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
      for (const auto& [name, v] : reports[i].per_layer) std::cout << lengths[i] << ',' << name << ',' << v << '\n';
    }
  }
  return 0;
}

int bench(const std::string& config, std::vector<int> lengths, int repeats) {
  const auto cfg = config_or(config, ModelConfig{});
  if (lengths.empty()) lengths = doubling(cfg.text_len, 5);
  std::cout << "text_len,visual_len,vanilla_seconds,hourglass_seconds,speedup,note\n";
  for (const auto& r : run_benchmark(lengths, cfg, repeats)) {
    std::cout << r.text_len << ',' << r.visual_len << ',' << std::setprecision(6) << r.vanilla_seconds << ','
              << r.hourglass_seconds << ',' << r.speedup << ",\"" << r.note << "\"\n";
  }
  return 0;
}

int train(const std::string& config, const std::string& corpus_path, const std::string& task, int epochs, double lr,
          double momentum, std::uint64_t seed, double target, bool no_merge, const std::string& out) {
  auto cfg = config_or(config, ModelConfig{});
  if (no_merge) cfg.k = 1;
  const auto corpus = load_corpus(corpus_path);
  DocumentModel m(cfg);
  TrainOptions opt;
  opt.task = parse_task(task);
  opt.epochs = epochs;
  opt.lr = lr;
  opt.momentum = momentum;
  opt.seed = seed;
  opt.target = target;
  auto res = train_loop(m, corpus, opt, [](const EpochLog& log) {
    nlohmann::json j{{"epoch", log.epoch}, {"train", metrics_json(log.train)}};
    if (!log.eval.empty()) j["eval"] = metrics_json(log.eval);
    std::cout << j.dump() << std::endl;
  });
  std::cout << nlohmann::json{{"done", true}, {"epochs", res.history.size()}, {"stopped_early", res.stopped_early},
                              {"diverged", res.diverged}}
                   .dump()
            << std::endl;
  if (!out.empty()) save_checkpoint(m, out);
  return res.diverged ? 3 : 0;
}

int eval(const std::string& checkpoint, const std::string& corpus_path, const std::string& task, std::uint64_t seed) {
  const auto m = load_checkpoint(checkpoint);
  const auto corpus = load_corpus(corpus_path);
  std::cout << nlohmann::json{{"task", task}, {"documents", corpus.size()},
                              {"metrics", metrics_json(evaluate(m, corpus, parse_task(task), EncoderMode::hourglass, seed))}}
                   .dump()
            << '\n';
  return 0;
}

int labels(const std::string& corpus_path, const std::string& out_dir, const std::string& config, std::uint64_t seed,
           double mvlm_ratio, double tia_ratio) {
  const auto cfg = config_or(config, ModelConfig{});
  const auto corpus = load_corpus(corpus_path);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& doc = corpus[i];
    const std::string stem = (fs::path(out_dir) / ("doc" + std::to_string(i))).string();
    std::ofstream gtr(stem + "_gtr.csv");
    for (const auto& row : gtr_labels(segment_boxes(doc), doc.page_w, doc.page_h)) {
      for (std::size_t j = 0; j < row.size(); ++j) gtr << (j ? "," : "") << row[j];
      gtr << '\n';
    }
    std::ofstream sop(stem + "_sop.csv");
    sop << "first,second,label\n";
    const auto mask_seed = mask_seed_for(seed, 0, i);
    for (const auto& p : sop_pairs(doc, hash_combine(mask_seed, 3))) sop << p.first << ',' << p.second << ',' << p.label << '\n';
    const auto ts = tokenize_and_pad(doc, cfg);
    const auto mv = mvlm_mask(ts, mvlm_ratio, hash_combine(mask_seed, 1), cfg.vocab);
    const auto tia = tia_mask(ts, tia_ratio, hash_combine(mask_seed, 2), &mv);
    nlohmann::json masks{{"mvlm_positions", mv.positions}, {"mvlm_targets", mv.targets},
                         {"mvlm_input_ids", mv.input_ids}, {"tia_zeroed", tia.zeroed}, {"tia_weights", tia.weights}};
    std::ofstream(stem + "_masks.json") << masks.dump() << '\n';
  }
  std::cout << "wrote labels for " << corpus.size() << " documents to " << out_dir << '\n';
  return 0;
}

int attn_stats(double threshold, const std::string& checkpoint, const std::string& config, const std::string& corpus_path,
               std::size_t docs, const std::string& dump) {
  std::optional<DocumentModel> m;
  if (!checkpoint.empty()) {
    m.emplace(load_checkpoint(checkpoint));
  } else {
    m.emplace(config_or(config, ModelConfig{}));
  }
  const auto corpus = corpus_path.empty() ? generate_corpus(0, docs) : load_corpus(corpus_path);
  std::vector<RedundancyRow> total;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    AttentionRecorder rec;
    Graph g({.track_grad = false, .record_ops = false});
    encode(g, tokenize_and_pad(corpus[i], m->cfg), m->encoder, m->cfg, {.recorder = &rec});
    accumulate_redundancy(total, attention_redundancy_stat(rec, threshold));
    if (i == 0 && !dump.empty()) {
      std::ofstream out(dump);
      out << std::setprecision(17);
      write_attention_dump(rec, threshold, out);
    }
  }
  write_redundancy_csv(total, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hgdoc: hourglass document encoder tools"};
  app.require_subcommand(1);

  std::string config, corpus, task = "labeling", out, checkpoint;
  std::vector<int> lengths;
  int repeats = 5, epochs = 300;
  double lr = 0.003, momentum = 0.9, target = 0.0, threshold = 0.7, mvlm_ratio = 0.15, tia_ratio = 0.15;
  std::uint64_t seed = 0;
  std::size_t count = 64;
  bool per_layer = false, no_merge = false;
  int segments_min = 4, segments_max = 10, vocab = 1024;

  auto* flops = app.add_subcommand("analyze-flops", "graph-walk MAC counts against the closed-form vanilla stack");
  flops->add_option("--config", config, "model config JSON (default: base preset)");
  flops->add_option("--lengths", lengths, "text lengths (default: 5 doublings of the config length)")->delimiter(',');
  flops->add_flag("--per-layer", per_layer, "also print per-layer counts");

  auto* bn = app.add_subcommand("bench", "wall-clock vanilla vs hourglass forward");
  bn->add_option("--config", config, "model config JSON (default: desk defaults)");
  bn->add_option("--repeats", repeats, "timed runs per model and length")->check(CLI::Range(5, 1000));
  bn->add_option("--lengths", lengths, "text lengths")->delimiter(',');

  auto* tr = app.add_subcommand("train", "train on a corpus; prints one JSON object per epoch");
  tr->add_option("--config", config, "model config JSON (default: desk defaults)");
  tr->add_option("--corpus", corpus, "corpus JSON-lines file")->required();
  tr->add_option("--task", task, "labeling, linking or pretrain")->check(CLI::IsMember({"labeling", "linking", "pretrain"}));
  tr->add_option("--epochs", epochs)->check(CLI::NonNegativeNumber);
  tr->add_option("--lr", lr)->check(CLI::NonNegativeNumber);
  tr->add_option("--momentum", momentum)->check(CLI::Range(0.0, 0.999));
  tr->add_option("--seed", seed);
  tr->add_option("--target", target, "early-stop once the task metric reaches this value (0: never)");
  tr->add_flag("--no-merge", no_merge, "train with k = 1");
  tr->add_option("--out", out, "checkpoint to write at the end");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--corpus", corpus)->required();
  ev->add_option("--task", task)->check(CLI::IsMember({"labeling", "linking", "pretrain"}));
  ev->add_option("--seed", seed, "pretraining mask seed");

  auto* lb = app.add_subcommand("labels", "write GTR matrices, SOP pairs and MVLM/TIA masks per document");
  lb->add_option("--corpus", corpus)->required();
  lb->add_option("--out", out, "output directory")->required();
  lb->add_option("--config", config);
  lb->add_option("--seed", seed);
  lb->add_option("--mvlm-ratio", mvlm_ratio)->check(CLI::Range(0.0, 1.0));
  lb->add_option("--tia-ratio", tia_ratio)->check(CLI::Range(0.0, 1.0));

  auto* at = app.add_subcommand("attn-stats", "per-layer count of attention weights above a threshold");
  at->add_option("--threshold", threshold);
  at->add_option("--checkpoint", checkpoint, "trained model (default: fresh model from --config)");
  at->add_option("--config", config);
  at->add_option("--corpus", corpus, "documents to encode (default: synthetic)");
  at->add_option("--docs", count, "synthetic documents when no corpus is given");
  std::string dump;
  at->add_option("--dump", dump, "write the first document's entries above the threshold to this CSV");

  auto* gen = app.add_subcommand("generate", "write a synthetic corpus");
  gen->add_option("--out", out)->required();
  gen->add_option("--count", count);
  gen->add_option("--seed", seed);
  gen->add_option("--min-segments", segments_min);
  gen->add_option("--max-segments", segments_max);
  gen->add_option("--vocab", vocab);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*flops) return analyze_flops(config, lengths, per_layer);
    if (*bn) return bench(config, lengths, repeats);
    if (*tr) return train(config, corpus, task, epochs, lr, momentum, seed, target, no_merge, out);
    if (*ev) return eval(checkpoint, corpus, task, seed);
    if (*lb) return labels(corpus, out, config, seed, mvlm_ratio, tia_ratio);
    if (*at) return attn_stats(threshold, checkpoint, config, corpus, count, dump);
    if (*gen) {
      CorpusOptions o;
      o.min_segments = segments_min;
      o.max_segments = segments_max;
      o.vocab = vocab;
      save_corpus(generate_corpus(seed, count, o), out);
      std::cout << "wrote " << count << " documents to " << out << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
