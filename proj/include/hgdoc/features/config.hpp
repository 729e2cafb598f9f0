#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "json.hpp"

#include "hgdoc/numerics/tensor.hpp"

namespace hgdoc {

inline constexpr int kFormatVersion = 1;

/// Model hyper-parameters. Text length L_t and visual length L_v are the
/// padded stream lengths; both must be divisible by k^n_stages.
struct ModelConfig {
  int d = 64;
  int heads = 4;
  int d_ffn = 256;
  int k = 2;
  int n_stages = 3;
  int text_len = 128;
  int visual_len = 32;
  int vocab = 1024;
  int coord_buckets = 64;
  int visual_dim = 32;
  int n_categories = 4;
  double ln_eps = 1e-6;
  double init_std = 0.02;
  std::uint64_t seed = 0;

  static ModelConfig desk() { return {}; }

  // Base-size configuration used by the MAC counter.
  static ModelConfig base() {
    ModelConfig c;
    c.d = 768;
    c.heads = 12;
    c.d_ffn = 3072;
    c.text_len = 512;
    c.visual_len = 128;
    c.vocab = 30522;
    c.coord_buckets = 1000;
    return c;
  }

  int shrink() const {
    int s = 1;
    for (int i = 0; i < n_stages; ++i) s *= k;
    return s;
  }

  int ratio() const { return text_len / visual_len; }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ContractError("config: " + msg); };
    if (d <= 0 || heads <= 0 || d_ffn <= 0 || k <= 0 || n_stages < 0 || text_len <= 0 || visual_len <= 0 ||
        vocab < 16 || coord_buckets <= 0 || visual_dim <= 0 || n_categories <= 0) {
      fail("all sizes must be positive (vocab >= 16)");
    }
    if (d % heads != 0) fail("d=" + std::to_string(d) + " not divisible by heads=" + std::to_string(heads));
    if (text_len % visual_len != 0) fail("text_len must be an integral multiple of visual_len");
    const int s = shrink();
    if (text_len % s != 0 || visual_len % s != 0) {
      fail("stream lengths must be divisible by k^n_stages=" + std::to_string(s));
    }
    if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"format_version", kFormatVersion},
                     {"d", c.d},
                     {"heads", c.heads},
                     {"d_ffn", c.d_ffn},
                     {"k", c.k},
                     {"n_stages", c.n_stages},
                     {"text_len", c.text_len},
                     {"visual_len", c.visual_len},
                     {"vocab", c.vocab},
                     {"coord_buckets", c.coord_buckets},
                     {"visual_dim", c.visual_dim},
                     {"n_categories", c.n_categories},
                     {"ln_eps", c.ln_eps},
                     {"init_std", c.init_std},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  const int version = j.value("format_version", 0);
  if (version != kFormatVersion) {
    throw std::runtime_error("config: unsupported format_version " + std::to_string(version));
  }
  ModelConfig def;
  c.d = j.value("d", def.d);
  c.heads = j.value("heads", def.heads);
  c.d_ffn = j.value("d_ffn", def.d_ffn);
  c.k = j.value("k", def.k);
  c.n_stages = j.value("n_stages", def.n_stages);
  c.text_len = j.value("text_len", def.text_len);
  c.visual_len = j.value("visual_len", def.visual_len);
  c.vocab = j.value("vocab", def.vocab);
  c.coord_buckets = j.value("coord_buckets", def.coord_buckets);
  c.visual_dim = j.value("visual_dim", def.visual_dim);
  c.n_categories = j.value("n_categories", def.n_categories);
  c.ln_eps = j.value("ln_eps", def.ln_eps);
  c.init_std = j.value("init_std", def.init_std);
  c.seed = j.value("seed", def.seed);
}

inline ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  ModelConfig c = nlohmann::json::parse(in).get<ModelConfig>();
  c.validate();
  return c;
}

inline void save_config(const ModelConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path);
  out << nlohmann::json(c).dump(2) << '\n';
}

}  // namespace hgdoc
