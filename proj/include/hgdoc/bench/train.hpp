#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hgdoc/heads/model.hpp"

namespace hgdoc {

using Metrics = std::map<std::string, double>;

/// Collects per-document task outputs into corpus-level metrics.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(Task task) : task_(task) {}

  void add(const DocumentSample& doc, const TaskResult& r) {
    loss_ += r.loss.item();
    ++docs_;
    for (const auto& [k, v] : r.parts) parts_[k] += v;
    if (task_ == Task::labeling) {
      const auto gold = detail::gold_labels(doc);
      for (std::size_t i = 0; i < gold.size(); ++i) {
        gold_.push_back(gold[i]);
        pred_.push_back(r.predicted_labels[i]);
      }
    } else if (task_ == Task::linking) {
      const std::size_t n = doc.segments.size();
      std::vector<std::uint8_t> truth(n * n, 0);
      for (auto [i, j] : doc.links) truth[i * n + j] = 1;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j) continue;
          scores_.push_back(r.link_logits[i * n + j]);
          truth_.push_back(truth[i * n + j]);
        }
      }
    }
  }

  /// "loss" always; labeling adds "accuracy" and "f1" (macro over classes
  /// seen in gold or prediction); linking adds "accuracy" (ordered pairs at
  /// the 0.5 threshold), "f1" of the link class and "auc"; pretrain adds the
  /// mean of each objective.
  Metrics finish() const {
    Metrics m;
    const double docs = std::max<double>(1.0, static_cast<double>(docs_));
    m["loss"] = loss_ / docs;
    for (const auto& [k, v] : parts_) m[k] = v / docs;
    if (task_ == Task::labeling) {
      std::size_t correct = 0;
      std::size_t classes = 0;
      for (std::size_t i = 0; i < gold_.size(); ++i) correct += gold_[i] == pred_[i];
      std::size_t max_class = 0;
      for (auto c : gold_) max_class = std::max(max_class, c);
      for (auto c : pred_) max_class = std::max(max_class, c);
      double f1_sum = 0.0;
      for (std::size_t c = 0; c <= max_class && !gold_.empty(); ++c) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < gold_.size(); ++i) {
          tp += gold_[i] == c && pred_[i] == c;
          fp += gold_[i] != c && pred_[i] == c;
          fn += gold_[i] == c && pred_[i] != c;
        }
        if (tp + fp + fn == 0) continue;
        ++classes;
        f1_sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
      }
      m["accuracy"] = gold_.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(gold_.size());
      m["f1"] = classes ? f1_sum / static_cast<double>(classes) : 0.0;
    } else if (task_ == Task::linking) {
      std::size_t correct = 0, tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < scores_.size(); ++i) {
        const bool p = scores_[i] > 0.0, t = truth_[i] != 0;
        correct += p == t;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
      }
      m["accuracy"] = scores_.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(scores_.size());
      m["f1"] = tp + fp + fn ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn) : 1.0;
      m["auc"] = auc();
    }
    return m;
  }

  /// Mann-Whitney estimate of the ROC AUC; ties count one half.
  double auc() const {
    std::vector<std::size_t> idx(scores_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores_[a] < scores_[b]; });
    double rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j < idx.size() && scores_[idx[j]] == scores_[idx[i]]) ++j;
      const double avg_rank = 0.5 * static_cast<double>(i + j + 1);
      for (std::size_t t = i; t < j; ++t) {
        if (truth_[idx[t]]) {
          rank_sum += avg_rank;
          ++pos;
        }
      }
      i = j;
    }
    const std::size_t neg = idx.size() - pos;
    if (pos == 0 || neg == 0) return 0.5;
    const double p = static_cast<double>(pos);
    return (rank_sum - p * (p + 1) / 2.0) / (p * static_cast<double>(neg));
  }

 private:
  Task task_;
  double loss_ = 0.0;
  std::size_t docs_ = 0;
  std::map<std::string, double> parts_;
  std::vector<std::size_t> gold_, pred_;
  std::vector<double> scores_;
  std::vector<std::uint8_t> truth_;
};

/// Name of the metric compared against the early-stopping target.
inline const char* headline_metric(Task task) { return task == Task::labeling ? "f1" : "accuracy"; }

struct TrainOptions {
  Task task = Task::labeling;
  int epochs = 300;
  double lr = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;  // document order and pretraining masks
  // Stop once the training-pass headline metric reaches this value and a
  // separate evaluation pass confirms it; 0 disables. Ignored for pretrain.
  double target = 0.0;
  EncoderMode mode = EncoderMode::hourglass;
  PretrainOptions pretrain;
};

struct EpochLog {
  int epoch = 0;
  Metrics train;  // accumulated during the epoch's update pass
  Metrics eval;   // only when a confirming evaluation ran
};

struct TrainResult {
  std::vector<EpochLog> history;
  bool stopped_early = false;
  bool diverged = false;
};

inline std::uint64_t mask_seed_for(std::uint64_t seed, int epoch, std::size_t doc) {
  return hash_combine(hash_combine(seed, static_cast<std::uint64_t>(epoch)), doc);
}

/// Forward-only pass over the corpus. Pretraining masks use epoch 0 seeds.
inline Metrics evaluate(const DocumentModel& m, const std::vector<DocumentSample>& corpus, Task task,
                        EncoderMode mode = EncoderMode::hourglass, std::uint64_t seed = 0,
                        const PretrainOptions& pre = {}) {
  if (corpus.empty()) throw ContractError("evaluate: corpus is empty");
  MetricAccumulator acc(task);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Graph g({.track_grad = false, .record_ops = false});
    acc.add(corpus[i], run_task(g, m, corpus[i], task, mask_seed_for(seed, 0, i), {.mode = mode}, pre));
  }
  return acc.finish();
}

/// Per-document gradient descent with momentum (v = mu v + g; w -= lr v).
/// A non-finite loss restores the parameters of the start of that epoch and
/// stops training with `diverged` set.
inline TrainResult train_loop(DocumentModel& m, const std::vector<DocumentSample>& corpus, const TrainOptions& opt,
                              const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (corpus.empty()) throw ContractError("train: corpus is empty");
  if (!(opt.lr >= 0.0) || !std::isfinite(opt.lr)) throw ContractError("train: lr must be finite and >= 0");
  if (opt.epochs < 0) throw ContractError("train: epochs must be >= 0");
  TrainResult result;
  std::vector<std::vector<double>> velocity;
  for (const auto& p : m.store) velocity.emplace_back(p.size(), 0.0);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const bool early = opt.target > 0.0 && opt.task != Task::pretrain;

  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::vector<std::vector<double>> snapshot;
    for (const auto& p : m.store) snapshot.push_back(p.value);
    Rng(hash_combine(opt.seed, static_cast<std::uint64_t>(epoch))).shuffle(std::span<std::size_t>(order));
    MetricAccumulator acc(opt.task);
    for (auto i : order) {
      Graph g;
      auto r = run_task(g, m, corpus[i], opt.task, mask_seed_for(opt.seed, epoch, i), {.mode = opt.mode}, opt.pretrain);
      if (!std::isfinite(r.loss.item())) {
        std::size_t t = 0;
        for (auto& p : m.store) p.value = snapshot[t++];
        result.diverged = true;
        return result;
      }
      m.store.zero_grad();
      g.backward(r.loss);
      std::size_t t = 0;
      for (auto& p : m.store) {
        auto& v = velocity[t++];
        for (std::size_t e = 0; e < v.size(); ++e) {
          v[e] = opt.momentum * v[e] + p.grad[e];
          p.value[e] -= opt.lr * v[e];
        }
      }
      acc.add(corpus[i], r);
    }
    EpochLog log{epoch, acc.finish(), {}};
    const char* key = headline_metric(opt.task);
    if (early && log.train.at(key) >= opt.target) {
      log.eval = evaluate(m, corpus, opt.task, opt.mode, opt.seed, opt.pretrain);
      result.stopped_early = log.eval.at(key) >= opt.target;
    }
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
    if (result.stopped_early) break;
  }
  return result;
}

}  // namespace hgdoc
