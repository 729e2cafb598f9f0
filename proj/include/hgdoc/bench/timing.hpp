#pragma once

#include <algorithm>
#include <chrono>
#include <new>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "hgdoc/bench/macs.hpp"

namespace hgdoc {

struct BenchResult {
  std::size_t text_len = 0;
  std::size_t visual_len = 0;
  double vanilla_seconds = 0.0;    // median forward
  double hourglass_seconds = 0.0;  // median forward
  double speedup = 0.0;            // vanilla / hourglass - 1
  std::string note;
  bool ok = true;
};

inline std::string environment_note() {
  std::string note = "single-threaded, double precision";
#if defined(__VERSION__)
  note += ", gcc " + std::string(__VERSION__);
#endif
  return note;
}

namespace detail {
inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double time_forward(const EncoderParams& p, const ModelConfig& cfg, const TokenStreams& ts, EncoderMode mode) {
  const auto t0 = std::chrono::steady_clock::now();
  {
    Graph g({.track_grad = false, .record_ops = false});
    encode(g, ts, p, cfg, {.mode = mode});
  }
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count();
}
}  // namespace detail

/// Keeps large buffers on the heap instead of fresh mmap pages, so that
/// page-fault cost does not swamp the arithmetic at long lengths.
inline void tune_allocator_for_benchmark() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

/// Median encoder forward time of the matched vanilla stack and the
/// hourglass at each text length (visual length follows cfg's ratio). One
/// warm-up pass per model and length is discarded; the two models alternate
/// so drift affects both alike. Short lengths take extra samples until each
/// model has `min_seconds` of timed work. A length that runs out of memory is
/// reported with ok = false and the remaining lengths are skipped.
inline std::vector<BenchResult> run_benchmark(const std::vector<int>& lengths, const ModelConfig& base, int repeats,
                                              double min_seconds = 1.0) {
  if (repeats < 5) throw ContractError("bench: repeats must be >= 5");
  tune_allocator_for_benchmark();
  std::vector<BenchResult> out;
  for (int L : lengths) {
    const auto cfg = at_length(base, L);
    if (L % base.ratio() != 0 || L % base.shrink() != 0 || cfg.visual_len % base.shrink() != 0) {
      throw ContractError("bench: length " + std::to_string(L) + " not divisible by k^n_stages and the stream ratio");
    }
    BenchResult r;
    r.text_len = static_cast<std::size_t>(cfg.text_len);
    r.visual_len = static_cast<std::size_t>(cfg.visual_len);
    r.note = environment_note();
    try {
      ParameterStore store(cfg.seed);
      auto params = EncoderParams::create(store, cfg);
      const auto ts = dense_streams(cfg, 1);
      detail::time_forward(params, cfg, ts, EncoderMode::vanilla);
      detail::time_forward(params, cfg, ts, EncoderMode::hourglass);
      std::vector<double> tv, th;
      double spent = 0.0;
      for (int i = 0; i < repeats || (spent < min_seconds && i < 1000); ++i) {
        tv.push_back(detail::time_forward(params, cfg, ts, EncoderMode::vanilla));
        th.push_back(detail::time_forward(params, cfg, ts, EncoderMode::hourglass));
        spent += th.back();
      }
      r.vanilla_seconds = detail::median(tv);
      r.hourglass_seconds = detail::median(th);
      r.speedup = r.vanilla_seconds / r.hourglass_seconds - 1.0;
    } catch (const std::bad_alloc&) {
      r.ok = false;
      r.note = "out of memory";
      out.push_back(r);
      break;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace hgdoc
