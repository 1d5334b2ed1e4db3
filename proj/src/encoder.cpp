#include "polyscore/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace polyscore {

std::vector<std::string> ModelConfig::problems() const {
  std::vector<std::string> out;
  if (layers < 1) out.push_back("layers must be >= 1");
  if (heads < 1) out.push_back("heads must be >= 1");
  if (hidden < 1) out.push_back("hidden must be >= 1");
  if (heads >= 1 && hidden % heads != 0) out.push_back("hidden must be divisible by heads");
  if (ffn_hidden < 1) out.push_back("ffn_hidden must be >= 1");
  if (vocab_size <= Vocabulary::kReserved) out.push_back("vocab_size must exceed the 4 reserved tokens");
  if (max_positions < 2) out.push_back("max_positions must be >= 2");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) out.push_back("dropout_p must be in [0, 1)");
  return out;
}

void ModelConfig::validate() const {
  auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& s : p) msg += "\n  " + s;
  throw ConfigError(msg);
}

SeqBatch SeqBatch::from(std::span<const TokenizedPair> seqs) {
  if (seqs.empty()) throw ContractError("SeqBatch: no sequences");
  SeqBatch b;
  b.batch = seqs.size();
  for (const auto& s : seqs) b.seq_len = std::max(b.seq_len, s.size());
  if (b.seq_len == 0) throw ContractError("SeqBatch: empty sequence");
  const std::size_t n = b.batch * b.seq_len;
  b.tokens.reserve(n);
  b.positions.reserve(n);
  b.segments.reserve(n);
  b.mask.reserve(n);
  for (const auto& s : seqs) {
    const TokenizedPair p = s.padded(b.seq_len);
    b.tokens.insert(b.tokens.end(), p.token_ids.begin(), p.token_ids.end());
    b.positions.insert(b.positions.end(), p.position_ids.begin(), p.position_ids.end());
    b.segments.insert(b.segments.end(), p.segment_ids.begin(), p.segment_ids.end());
    b.mask.insert(b.mask.end(), p.pad_mask.begin(), p.pad_mask.end());
    b.lengths.push_back(s.real_length());
    if (b.lengths.back() == 0 || !s.pad_mask.front()) throw ContractError("SeqBatch: sequence must start with a real token");
  }
  return b;
}

namespace names {
std::string token_embedding(std::string_view prefix) { return std::string(prefix) + ".embeddings.token"; }
std::string position_embedding(std::string_view prefix) { return std::string(prefix) + ".embeddings.position"; }
std::string segment_embedding(std::string_view prefix) { return std::string(prefix) + ".embeddings.segment"; }
std::string layer(std::string_view prefix, std::size_t index) {
  return std::string(prefix) + ".layer." + std::to_string(index);
}
bool is_embedding_table(std::string_view name) {
  for (std::string_view suffix : {".embeddings.token", ".embeddings.position", ".embeddings.segment"}) {
    if (name.size() >= suffix.size() && name.substr(name.size() - suffix.size()) == suffix) return true;
  }
  return false;
}
}  // namespace names

namespace {

TensorD normal(Shape shape, std::mt19937_64& rng, double std = kInitStd) {
  std::normal_distribution<double> dist(0.0, std);
  TensorD t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

void add_linear(ParamSet<double>& ps, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  ps[name + ".weight"] = normal({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  ps[name + ".bias"] = TensorD({out});
}

void add_norm(ParamSet<double>& ps, const std::string& name, std::size_t n) {
  ps[name + ".gain"] = TensorD({n}, 1.0);
  ps[name + ".bias"] = TensorD({n});
}

}  // namespace

void init_encoder_params(ParamSet<double>& ps, const ModelConfig& cfg, std::string_view prefix, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t h = cfg.hidden;
  const std::string p(prefix);
  ps[names::token_embedding(prefix)] = normal({cfg.vocab_size, h}, rng);
  ps[names::position_embedding(prefix)] = normal({cfg.max_positions, h}, rng);
  ps[names::segment_embedding(prefix)] = normal({2, h}, rng);
  add_norm(ps, p + ".embeddings.norm", h);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string base = names::layer(prefix, l);
    for (const char* proj : {"query", "key", "value", "output"}) {
      add_linear(ps, base + ".attention." + proj, h, h, rng);
    }
    add_norm(ps, base + ".attention.norm", h);
    add_linear(ps, base + ".ffn.inner", h, cfg.ffn_hidden, rng);
    add_linear(ps, base + ".ffn.outer", cfg.ffn_hidden, h, rng);
    add_norm(ps, base + ".ffn.norm", h);
  }
}

void copy_encoder_params(ParamSet<double>& ps, std::string_view from, std::string_view to) {
  const std::string src = std::string(from) + ".";
  std::vector<std::pair<std::string, TensorD>> copies;
  for (const auto& [name, t] : ps) {
    if (name.starts_with(src)) copies.emplace_back(std::string(to) + "." + name.substr(src.size()), t);
  }
  for (auto& [name, t] : copies) ps[name] = std::move(t);
}

}  // namespace polyscore
