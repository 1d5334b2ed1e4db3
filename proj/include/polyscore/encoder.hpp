#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "polyscore/kernels.hpp"
#include "polyscore/params.hpp"
#include "polyscore/text.hpp"

namespace polyscore {

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t hidden = 32;
  std::size_t ffn_hidden = 64;
  std::size_t vocab_size = 0;
  std::size_t max_positions = 64;
  double dropout_p = 0.1;

  // Every violated constraint, not just the first.
  std::vector<std::string> problems() const;
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kLayerNormEps = 1e-12;
inline constexpr double kInitStd = 0.02;

/// Several TokenizedPairs padded to a common length and laid out row-major:
/// sequence b, position i lives in row b * seq_len + i.
struct SeqBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> tokens;
  std::vector<TokenId> positions;
  std::vector<TokenId> segments;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> lengths;  // real tokens per sequence

  static SeqBatch from(std::span<const TokenizedPair> seqs);
  std::size_t row(std::size_t b, std::size_t i) const { return b * seq_len + i; }
};

// Hierarchical parameter names for one transformer under `prefix`.
namespace names {
std::string token_embedding(std::string_view prefix);
std::string position_embedding(std::string_view prefix);
std::string segment_embedding(std::string_view prefix);
std::string layer(std::string_view prefix, std::size_t index);  // "<prefix>.layer.<i>"
bool is_embedding_table(std::string_view name);
}  // namespace names

void init_encoder_params(ParamSet<double>& params, const ModelConfig& cfg, std::string_view prefix,
                         std::mt19937_64& rng);

// Copies every "<from>.*" parameter to "<to>.*".
void copy_encoder_params(ParamSet<double>& params, std::string_view from, std::string_view to);

template <class Backend>
using ValueOf = typename Backend::Value;

/// tok_emb[id] + pos_emb[position] + seg_emb[segment] for every row.
template <class Backend>
ValueOf<Backend> embed(Backend& be, const ModelConfig& cfg, std::string_view prefix, const SeqBatch& batch) {
  for (TokenId p : batch.positions) {
    if (p < 0 || static_cast<std::size_t>(p) >= cfg.max_positions) {
      throw ConfigError("position " + std::to_string(p) + " exceeds max_positions " +
                        std::to_string(cfg.max_positions));
    }
  }
  auto tok = be.gather_rows(be.param(names::token_embedding(prefix)), batch.tokens);
  auto pos = be.gather_rows(be.param(names::position_embedding(prefix)), batch.positions);
  auto seg = be.gather_rows(be.param(names::segment_embedding(prefix)), batch.segments);
  return be.add(be.add(tok, pos), seg);
}

template <class Backend>
ValueOf<Backend> linear(Backend& be, const ValueOf<Backend>& x, const std::string& name) {
  return be.add_bias(be.matmul(x, be.param(name + ".weight")), be.param(name + ".bias"));
}

template <class Backend>
ValueOf<Backend> norm(Backend& be, const ValueOf<Backend>& x, const std::string& name) {
  return be.layer_norm(x, be.param(name + ".gain"), be.param(name + ".bias"), kLayerNormEps);
}

/// Post-norm transformer stack. Returns hidden states [batch*seq_len x hidden].
/// When `last_linear` is given it receives the output of the final block's
/// second FFN projection (before the residual).
template <class Backend>
ValueOf<Backend> encode(Backend& be, const ModelConfig& cfg, std::string_view prefix, const SeqBatch& batch,
                        ValueOf<Backend>* last_linear = nullptr) {
  const std::string p(prefix);
  const double drop = cfg.dropout_p;
  auto x = be.dropout(norm(be, embed(be, cfg, prefix, batch), p + ".embeddings.norm"), drop);
  const AttentionLayout layout{batch.batch, batch.seq_len, cfg.heads, batch.mask};
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string base = names::layer(prefix, l);
    auto q = linear(be, x, base + ".attention.query");
    auto k = linear(be, x, base + ".attention.key");
    auto v = linear(be, x, base + ".attention.value");
    auto ctx = be.attention(q, k, v, layout);
    auto att = be.dropout(linear(be, ctx, base + ".attention.output"), drop);
    x = norm(be, be.add(x, att), base + ".attention.norm");
    auto inner = be.gelu(linear(be, x, base + ".ffn.inner"));
    auto outer = linear(be, inner, base + ".ffn.outer");
    if (last_linear && l + 1 == cfg.layers) *last_linear = outer;
    x = norm(be, be.add(x, be.dropout(outer, drop)), base + ".ffn.norm");
  }
  return x;
}

/// Hidden states of one unpadded sequence plus its mask.
template <typename T>
struct TransformerOutput {
  Tensor<T> hidden_states;  // [L x hidden]
  std::vector<std::uint8_t> pad_mask;

  std::size_t real_length() const;
};

template <typename T>
std::size_t TransformerOutput<T>::real_length() const {
  std::size_t n = 0;
  for (auto m : pad_mask) n += m ? 1 : 0;
  return n;
}

}  // namespace polyscore
