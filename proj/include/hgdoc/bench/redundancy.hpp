#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "hgdoc/attention/layers.hpp"

namespace hgdoc {

struct RedundancyRow {
  std::size_t layer = 0;
  std::string kind;  // "sa" or "sca"
  std::uint64_t count = 0;
  std::uint64_t cumulative = 0;
};

/// Per recorded layer, the number of attention weights above `threshold` in
/// active query rows (all heads, both SCA directions), with running totals.
inline std::vector<RedundancyRow> attention_redundancy_stat(const AttentionRecorder& rec, double threshold = 0.7) {
  if (rec.records.empty() || rec.layer_kinds.empty()) {
    throw ContractError("attn-stats: no attention records (run encode with a recorder)");
  }
  std::vector<RedundancyRow> rows(rec.layer_kinds.size());
  for (std::size_t l = 0; l < rows.size(); ++l) {
    rows[l].layer = l;
    rows[l].kind = rec.layer_kinds[l];
  }
  for (const auto& r : rec.records) {
    if (r.layer >= rows.size()) throw ContractError("attn-stats: record for unknown layer " + std::to_string(r.layer));
    const std::size_t q = r.weights.shape()[0], k = r.weights.shape()[1];
    for (std::size_t i = 0; i < q; ++i) {
      if (!r.query_mask.empty() && !r.query_mask[i]) continue;
      for (std::size_t j = 0; j < k; ++j) rows[r.layer].count += r.weights.at(i, j) > threshold ? 1 : 0;
    }
  }
  std::uint64_t total = 0;
  for (auto& row : rows) {
    total += row.count;
    row.cumulative = total;
  }
  return rows;
}

/// Adds the counts of `more` into `acc` layer by layer (same layer stack).
inline void accumulate_redundancy(std::vector<RedundancyRow>& acc, const std::vector<RedundancyRow>& more) {
  if (acc.empty()) {
    acc = more;
    return;
  }
  if (acc.size() != more.size()) throw ContractError("attn-stats: layer stacks differ");
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < acc.size(); ++l) {
    acc[l].count += more[l].count;
    total += acc[l].count;
    acc[l].cumulative = total;
  }
}

inline std::uint64_t redundancy_count(const std::vector<RedundancyRow>& rows, const std::string& kind) {
  std::uint64_t n = 0;
  for (const auto& r : rows) n += r.kind == kind ? r.count : 0;
  return n;
}

inline void write_redundancy_csv(const std::vector<RedundancyRow>& rows, std::ostream& out) {
  out << "layer,count,cumulative\n";
  for (const auto& r : rows) out << r.layer << ',' << r.count << ',' << r.cumulative << '\n';
}

/// Every recorded attention entry above `threshold` in an active query row.
/// Both SCA directions of a layer share its layer index.
inline void write_attention_dump(const AttentionRecorder& rec, double threshold, std::ostream& out) {
  out << "layer,head,query_index,key_index,weight\n";
  for (const auto& r : rec.records) {
    const std::size_t q = r.weights.shape()[0], k = r.weights.shape()[1];
    for (std::size_t i = 0; i < q; ++i) {
      if (!r.query_mask.empty() && !r.query_mask[i]) continue;
      for (std::size_t j = 0; j < k; ++j) {
        const double w = r.weights.at(i, j);
        if (w > threshold) out << r.layer << ',' << r.head << ',' << i << ',' << j << ',' << w << '\n';
      }
    }
  }
}

}  // namespace hgdoc
