#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hgdoc/attention/layers.hpp"
#include "hgdoc/features/config.hpp"
#include "hgdoc/features/embed.hpp"
#include "hgdoc/features/tokenize.hpp"

namespace hgdoc {

/// Cross-modal merge guidance: scalar d -> 1 linears, one per direction,
/// shared by every merging block.
struct GuidanceParams {
  Linear v_to_l;  // reads visual features, weights text tokens
  Linear l_to_v;  // reads text features, weights visual tokens

  static GuidanceParams create(ParameterStore& store, const ModelConfig& cfg) {
    const auto d = static_cast<std::size_t>(cfg.d);
    return {Linear::create(store, "guidance.v_to_l", d, 1, cfg.init_std),
            Linear::create(store, "guidance.l_to_v", d, 1, cfg.init_std)};
  }
};

struct BlockParams {
  SelfAttentionLayerParams sa;
  SymmetryCrossLayerParams sca;

  static BlockParams create(ParameterStore& store, const std::string& name, const ModelConfig& cfg) {
    return {SelfAttentionLayerParams::create(store, name + ".sa", cfg),
            SymmetryCrossLayerParams::create(store, name + ".sca", cfg)};
  }
};

struct EncoderParams {
  EmbeddingParams embed;
  GuidanceParams guidance;
  std::vector<BlockParams> merge_blocks;
  std::vector<BlockParams> extend_blocks;
  LayerNorm final_text, final_visual;

  static EncoderParams create(ParameterStore& store, const ModelConfig& cfg) {
    cfg.validate();
    EncoderParams p;
    p.embed = EmbeddingParams::create(store, cfg);
    p.guidance = GuidanceParams::create(store, cfg);
    for (int i = 0; i < cfg.n_stages; ++i) p.merge_blocks.push_back(BlockParams::create(store, "merge" + std::to_string(i), cfg));
    for (int i = 0; i < cfg.n_stages; ++i) p.extend_blocks.push_back(BlockParams::create(store, "extend" + std::to_string(i), cfg));
    const auto d = static_cast<std::size_t>(cfg.d);
    p.final_text = LayerNorm::create(store, "final.text", d, cfg.ln_eps);
    p.final_visual = LayerNorm::create(store, "final.visual", d, cfg.ln_eps);
    return p;
  }
};

/// Skip payload of one merging block: the incoming streams and the
/// normalized merge weights. Token i belongs to merged token i / k.
struct MergeTrace {
  std::size_t stage = 0;
  std::size_t k = 1;
  DualStream pre_merge;
  Var weights_text;    // [L_t_pre]
  Var weights_visual;  // [L_v_pre]

  std::size_t group_of(std::size_t index) const { return index / k; }
};

/// Text token j aligns to visual token floor(j * L_v / L_t).
inline std::vector<std::size_t> text_to_visual_alignment(std::size_t lt, std::size_t lv) {
  std::vector<std::size_t> idx(lt);
  for (std::size_t j = 0; j < lt; ++j) idx[j] = j * lv / lt;
  return idx;
}

/// Per-token merge weights for both streams, softmax-normalized within each
/// group of k. Text weights come from the aligned visual token; visual weights
/// from the mean of its r aligned text tokens.
inline std::pair<Var, Var> guidance_weights(Graph& g, const DualStream& s, const GuidanceParams& p, std::size_t k) {
  const std::size_t lt = s.text.rows(), lv = s.visual.rows();
  if (lt % lv != 0) throw ContractError("guidance: text length must be a multiple of visual length");
  const std::size_t r = lt / lv;
  auto sc = g.scope("guidance");
  // The linears are affine, so scoring first and then aligning equals scoring
  // the aligned features.
  auto vis_score = p.v_to_l(g, s.visual);  // [L_v x 1]
  auto text_logits = g.reshape(g.gather_rows(vis_score, text_to_visual_alignment(lt, lv)), {lt});
  auto txt_score = p.l_to_v(g, s.text);    // [L_t x 1]
  std::vector<double> uniform;
  if (!g.shape_only()) uniform.assign(lt, 1.0 / static_cast<double>(r));
  auto vis_logits = g.reshape(g.group_pool(txt_score, g.input(Shape{lt}, std::move(uniform)), r), {lv});
  return {g.group_softmax(text_logits, k), g.group_softmax(vis_logits, k)};
}

namespace detail {
inline void merge_ids(const std::vector<int>& seg, const Mask& mask, const Var& w, std::size_t k, bool have_values,
                      std::vector<int>& seg_out, Mask& mask_out) {
  const std::size_t groups = seg.size() / k;
  seg_out.assign(groups, -1);
  mask_out.assign(groups, 0);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    std::size_t best = gi * k;
    for (std::size_t j = gi * k; j < (gi + 1) * k; ++j) {
      if (have_values && w.data()[j] > w.data()[best]) best = j;
      mask_out[gi] |= mask[j];
    }
    seg_out[gi] = seg[best];
  }
}

inline DualStream run_block(Graph& g, const DualStream& s, const BlockParams& p, AttentionRecorder* rec) {
  return symmetry_cross_attention_layer(g, self_attention_layer(g, s, p.sa, rec), p.sca, rec);
}

inline Var constant_ones(Graph& g, std::size_t n) {
  return g.input(Shape{n}, g.shape_only() ? std::vector<double>{} : std::vector<double>(n, 1.0));
}
}  // namespace detail

/// Guidance-weighted pooling of both streams by k (no layers). Segment ids
/// of a merged token come from its highest-weight member; masks are OR-ed.
inline std::pair<DualStream, MergeTrace> merge_streams(Graph& g, const DualStream& s, const GuidanceParams& guidance,
                                                       std::size_t k, std::size_t stage = 0) {
  const std::size_t lt = s.text.rows(), lv = s.visual.rows();
  if (k == 0 || lt % k != 0 || lv % k != 0) {
    throw ContractError("merge: lengths " + std::to_string(lt) + "/" + std::to_string(lv) + " not divisible by k=" +
                        std::to_string(k));
  }
  MergeTrace trace{stage, k, s, {}, {}};
  DualStream merged = s;
  if (k == 1) {
    // Softmax over a single element is exactly 1; skip the guidance work.
    trace.weights_text = detail::constant_ones(g, lt);
    trace.weights_visual = detail::constant_ones(g, lv);
    return {merged, std::move(trace)};
  }
  auto [wt, wv] = guidance_weights(g, s, guidance, k);
  trace.weights_text = wt;
  trace.weights_visual = wv;
  merged.text = g.group_pool(s.text, wt, k);
  merged.visual = g.group_pool(s.visual, wv, k);
  const bool vals = !g.shape_only();
  detail::merge_ids(s.text_segment_ids, s.text_mask, wt, k, vals, merged.text_segment_ids, merged.text_mask);
  detail::merge_ids(s.visual_segment_ids, s.visual_mask, wv, k, vals, merged.visual_segment_ids, merged.visual_mask);
  return {merged, std::move(trace)};
}

/// Merges at block entry, then runs the block's SA and SCA layers on the
/// shortened streams.
inline std::pair<DualStream, MergeTrace> merge_block(Graph& g, const DualStream& s, const BlockParams& p,
                                                     const GuidanceParams& guidance, std::size_t k,
                                                     AttentionRecorder* rec = nullptr, std::size_t stage = 0) {
  auto sc = g.scope("merge" + std::to_string(stage));
  auto [merged, trace] = merge_streams(g, s, guidance, k, stage);
  return {detail::run_block(g, merged, p, rec), std::move(trace)};
}

/// Repeat up-sampling by the trace's k plus the skip connection (no layers).
inline DualStream upsample_with_skip(Graph& g, const DualStream& s, const MergeTrace& trace) {
  const std::size_t k = trace.k;
  if (s.text.rows() * k != trace.pre_merge.text.rows() || s.visual.rows() * k != trace.pre_merge.visual.rows()) {
    throw ContractError("extend: stream lengths " + std::to_string(s.text.rows()) + "/" + std::to_string(s.visual.rows()) +
                        " x k=" + std::to_string(k) + " do not match trace lengths " +
                        std::to_string(trace.pre_merge.text.rows()) + "/" + std::to_string(trace.pre_merge.visual.rows()));
  }
  DualStream up = trace.pre_merge;
  up.text = g.add(k == 1 ? s.text : g.repeat_rows(s.text, k), trace.pre_merge.text);
  up.visual = g.add(k == 1 ? s.visual : g.repeat_rows(s.visual, k), trace.pre_merge.visual);
  return up;
}

/// Up-samples at block entry, then runs the block's SA and SCA layers at the
/// restored length.
inline DualStream extension_block(Graph& g, const DualStream& s, const MergeTrace& trace, const BlockParams& p,
                                  AttentionRecorder* rec = nullptr, std::size_t stage = 0) {
  auto sc = g.scope("extend" + std::to_string(stage));
  return detail::run_block(g, upsample_with_skip(g, s, trace), p, rec);
}

enum class EncoderMode {
  hourglass,
  // Same blocks and skip additions at full length throughout; no merging or
  // up-sampling. The matched baseline for MAC and wall-clock comparisons.
  vanilla,
};

struct EncodeOptions {
  EncoderMode mode = EncoderMode::hourglass;
  AttentionRecorder* recorder = nullptr;
  EmbedStats* embed_stats = nullptr;
};

struct EncodeResult {
  DualStream output;
  std::vector<MergeTrace> traces;
  // (text, visual) lengths at which each block's layers ran, in order.
  std::vector<std::pair<std::size_t, std::size_t>> block_lengths;
};

/// Encoder body from an embedded stream: merging blocks, then extension
/// blocks paired last-in first-out, then a final LayerNorm per stream.
inline EncodeResult encode_embedded(Graph& g, const DualStream& embedded, const EncoderParams& p, const ModelConfig& cfg,
                                    const EncodeOptions& opt = {}) {
  EncodeResult res;
  const auto k = static_cast<std::size_t>(cfg.k);
  const bool vanilla = opt.mode == EncoderMode::vanilla;
  DualStream s = embedded;
  for (std::size_t i = 0; i < p.merge_blocks.size(); ++i) {
    if (vanilla) {
      auto sc = g.scope("merge" + std::to_string(i));
      res.traces.push_back({i, 1, s, {}, {}});
      s = detail::run_block(g, s, p.merge_blocks[i], opt.recorder);
    } else {
      auto [next, trace] = merge_block(g, s, p.merge_blocks[i], p.guidance, k, opt.recorder, i);
      res.traces.push_back(std::move(trace));
      s = std::move(next);
    }
    res.block_lengths.emplace_back(s.text.rows(), s.visual.rows());
  }
  for (std::size_t i = 0; i < p.extend_blocks.size(); ++i) {
    const auto& trace = res.traces[res.traces.size() - 1 - i];
    if (vanilla) {
      auto sc = g.scope("extend" + std::to_string(i));
      s = detail::run_block(g, upsample_with_skip(g, s, trace), p.extend_blocks[i], opt.recorder);
    } else {
      s = extension_block(g, s, trace, p.extend_blocks[i], opt.recorder, i);
    }
    res.block_lengths.emplace_back(s.text.rows(), s.visual.rows());
  }
  auto sc = g.scope("final");
  s.text = p.final_text(g, s.text);
  s.visual = p.final_visual(g, s.visual);
  res.output = std::move(s);
  return res;
}

inline EncodeResult encode(Graph& g, const TokenStreams& ts, const EncoderParams& p, const ModelConfig& cfg,
                           const EncodeOptions& opt = {}) {
  return encode_embedded(g, embed(g, ts, p.embed, cfg, opt.embed_stats), p, cfg, opt);
}

}  // namespace hgdoc
