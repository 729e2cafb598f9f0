#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hgdoc/heads/heads.hpp"
#include "hgdoc/heads/labels.hpp"
#include "hgdoc/hourglass/encoder.hpp"

namespace hgdoc {

/// Encoder plus every task head, all owned by one parameter store.
struct DocumentModel {
  ModelConfig cfg;
  ParameterStore store;
  EncoderParams encoder;
  HeadParams heads;

  explicit DocumentModel(const ModelConfig& c, bool materialize = true)
      : cfg(c), store(c.seed, materialize), encoder(EncoderParams::create(store, cfg)), heads(HeadParams::create(store, cfg)) {}

  DocumentModel(const DocumentModel&) = delete;
  DocumentModel& operator=(const DocumentModel&) = delete;
  DocumentModel(DocumentModel&&) = default;
};

enum class Task { labeling, linking, pretrain };

inline Task parse_task(const std::string& s) {
  if (s == "labeling") return Task::labeling;
  if (s == "linking") return Task::linking;
  if (s == "pretrain") return Task::pretrain;
  throw std::invalid_argument("unknown task '" + s + "' (expected labeling, linking or pretrain)");
}

inline const char* task_name(Task t) {
  switch (t) {
    case Task::labeling: return "labeling";
    case Task::linking: return "linking";
    case Task::pretrain: return "pretrain";
  }
  return "?";
}

struct PretrainOptions {
  double mvlm_ratio = 0.15;
  double tia_ratio = 0.15;
  // Objectives summed into the loss. Masks are applied to the inputs either way.
  bool mvlm = true;
  bool gtr = true;
  bool sop = true;
  bool tia = true;
};

struct TaskResult {
  Var loss;
  std::map<std::string, double> parts;  // per-objective loss values
  std::size_t n_segments = 0;
  std::vector<std::size_t> predicted_labels;  // labeling
  std::vector<std::uint8_t> predicted_links;  // linking, N x N row-major
  std::vector<double> link_logits;            // linking, N x N row-major
};

namespace detail {
inline std::vector<std::size_t> gold_labels(const DocumentSample& doc) {
  std::vector<std::size_t> labels;
  for (const auto& s : doc.segments) {
    if (!s.label) throw ContractError("labeling: segment without a label");
    labels.push_back(static_cast<std::size_t>(*s.label));
  }
  return labels;
}

inline void add_part(Graph& g, TaskResult& r, const std::string& name, const Var& loss) {
  if (!g.shape_only()) r.parts[name] = loss.item();
  r.loss = r.loss.defined() ? g.add(r.loss, loss) : loss;
}
}  // namespace detail

/// One document through the encoder and the task's head(s). `mask_seed`
/// drives MVLM/TIA selection for pretraining.
inline TaskResult run_task(Graph& g, const DocumentModel& m, const DocumentSample& doc, Task task,
                           std::uint64_t mask_seed = 0, const EncodeOptions& opt = {},
                           const PretrainOptions& pre = {}) {
  auto ts = tokenize_and_pad(doc, m.cfg);
  TaskResult r;
  r.n_segments = doc.segments.size();
  MvlmMask mvlm;
  TiaMask tia;
  if (task == Task::pretrain) {
    mvlm = mvlm_mask(ts, pre.mvlm_ratio, hash_combine(mask_seed, 1), m.cfg.vocab);
    tia = tia_mask(ts, pre.tia_ratio, hash_combine(mask_seed, 2), &mvlm);
    ts.text_ids = mvlm.input_ids;
    ts.visual_zeroed = tia.zeroed;
  }
  auto enc = encode(g, ts, m.encoder, m.cfg, opt);
  const auto& out = enc.output;
  auto sc = g.scope("head");
  const std::size_t n = doc.segments.size();

  switch (task) {
    case Task::labeling: {
      auto z = entity_features(g, out.text, out.visual, ts, n);
      auto logits = entity_labeling_logits(g, z, m.heads);
      detail::add_part(g, r, "labeling", g.cross_entropy(logits, detail::gold_labels(doc)));
      if (!g.shape_only()) {
        for (std::size_t i = 0; i < n; ++i) {
          std::size_t best = 0;
          for (std::size_t c = 1; c < logits.cols(); ++c) {
            if (logits.at(i, c) > logits.at(i, best)) best = c;
          }
          r.predicted_labels.push_back(best);
        }
      }
      break;
    }
    case Task::linking: {
      auto z = entity_features(g, out.text, out.visual, ts, n);
      if (n < 2) throw ContractError("linking: document needs at least two segments");
      auto logits = m.heads.linking.logits(g, z);
      detail::add_part(g, r, "linking", pair_bce(g, logits, doc.links));
      if (!g.shape_only()) {
        r.link_logits.assign(logits.data().begin(), logits.data().end());
        for (double v : r.link_logits) r.predicted_links.push_back(v > 0.0 ? 1 : 0);
      }
      break;
    }
    case Task::pretrain: {
      if (pre.mvlm) {
        if (auto l = mvlm_loss(g, out.text, mvlm, m.heads)) detail::add_part(g, r, "mvlm", *l);
      }
      if (pre.gtr) {
        std::vector<std::size_t> seg_rows(n);
        for (std::size_t i = 0; i < n; ++i) seg_rows[i] = i;
        auto seg_visual = g.gather_rows(out.visual, seg_rows);
        detail::add_part(g, r, "gtr", gtr_loss(g, seg_visual, gtr_labels(segment_boxes(doc), doc.page_w, doc.page_h), m.heads));
      }
      auto pairs = sop_pairs(doc, hash_combine(mask_seed, 3));
      if (pre.sop && !pairs.empty()) {
        auto z = entity_features(g, out.text, out.visual, ts, n);
        detail::add_part(g, r, "sop", sop_loss(g, z, pairs, m.heads));
      }
      if (pre.tia) {
        if (auto l = tia_loss(g, out.visual, tia, m.heads)) detail::add_part(g, r, "tia", *l);
      }
      if (!r.loss.defined()) throw ContractError("pretrain: no objective produced a loss for this document");
      break;
    }
  }
  return r;
}

}  // namespace hgdoc
