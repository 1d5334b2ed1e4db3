#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polyscore/encoder.hpp"
#include "polyscore/heads.hpp"

namespace polyscore {

enum class Architecture { Pretrain, Bi, Poly, Cross };

std::string to_string(Architecture a);
Architecture parse_architecture(std::string_view s);

struct HeadConfig {
  Architecture arch = Architecture::Bi;
  Reduction reduction;
  PolyConfig poly;
  bool operator==(const HeadConfig&) const = default;
};

// "bi", "cross", "poly:<variant>:<m>" (e.g. poly:learnt:16).
HeadConfig parse_head_spec(std::string_view spec);
std::string head_spec(const HeadConfig& h);

namespace names {
inline constexpr std::string_view kEncoder = "encoder";
inline constexpr std::string_view kContextEncoder = "context_encoder";
inline constexpr std::string_view kCandidateEncoder = "candidate_encoder";
inline const std::string kPolyCodes = "poly.codes";
inline const std::string kCrossWeight = "cross_head.weight";
inline const std::string kNextWeight = "next.weight";
inline const std::string kMlmTransform = "mlm.transform";
inline const std::string kMlmNorm = "mlm.norm";
inline const std::string kMlmOutputBias = "mlm.output_bias";
}  // namespace names

std::string_view context_prefix(const HeadConfig& h);
std::string_view candidate_prefix(const HeadConfig& h);

struct Model {
  ModelConfig config;
  HeadConfig head;
  ParamSet<double> params;
};

Model init_model(const ModelConfig& cfg, const HeadConfig& head, std::uint64_t seed);

// Fine-tuning start from a pre-trained model. Bi/Poly get two independent
// copies of the encoder (context and candidate side); Cross keeps one and
// reuses the next-utterance column as its scoring column.
Model finetune_from(const Model& pretrained, const HeadConfig& head, std::uint64_t seed);

struct SequenceLimits {
  std::size_t context = 360;
  std::size_t candidate = 72;
};

// Limits clamped to what the position table can hold.
SequenceLimits effective_limits(const SequenceLimits& limits, const ModelConfig& cfg);

TokenizedPair encode_context(std::string_view text, const Vocabulary& vocab, const SequenceLimits& lim);
TokenizedPair encode_candidate(std::string_view text, const Vocabulary& vocab, const SequenceLimits& lim);
TokenizedPair encode_cross(std::string_view context, std::string_view candidate, const Vocabulary& vocab,
                           const SequenceLimits& lim, std::size_t max_positions);

/// Candidate-side embeddings [batch x hidden] (shared by Bi and Poly).
template <class Backend>
ValueOf<Backend> candidate_embeddings(Backend& be, const ModelConfig& cfg, const HeadConfig& head,
                                      const SeqBatch& batch) {
  auto hidden = encode(be, cfg, candidate_prefix(head), batch);
  return reduce_rows(be, hidden, batch, head.reduction);
}

/// Context representation per sequence: one [1 x hidden] row for Bi, the
/// [m' x hidden] context vectors for Poly.
template <class Backend>
std::vector<ValueOf<Backend>> context_representations(Backend& be, const ModelConfig& cfg, const HeadConfig& head,
                                                      const SeqBatch& batch) {
  auto hidden = encode(be, cfg, context_prefix(head), batch);
  std::vector<ValueOf<Backend>> out;
  if (head.arch == Architecture::Poly) {
    for (std::size_t b = 0; b < batch.batch; ++b)
      out.push_back(poly_vectors(be, hidden, batch, b, head.poly, names::kPolyCodes));
    return out;
  }
  if (head.arch != Architecture::Bi) throw ContractError("context representations need a Bi or Poly model");
  auto reduced = reduce_rows(be, hidden, batch, head.reduction);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    out.push_back(be.pool(reduced, std::vector<PoolGroup>{PoolGroup{{b, 1.0}}}));
  }
  return out;
}

/// Cross-encoder scores for already-encoded (context, candidate) pairs.
template <class Backend>
ValueOf<Backend> cross_scores(Backend& be, const ModelConfig& cfg, const SeqBatch& pairs) {
  auto hidden = encode(be, cfg, names::kEncoder, pairs);
  return cross_head_scores(be, hidden, pairs, names::kCrossWeight);
}

template <typename T>
TransformerOutput<T> forward(const TokenizedPair& tp, const ParamSet<T>& params, const ModelConfig& cfg,
                             std::string_view prefix) {
  const SeqBatch b = SeqBatch::from(std::span<const TokenizedPair>(&tp, 1));
  EvalBackend<T> be(params);
  return TransformerOutput<T>{encode(be, cfg, prefix, b), tp.pad_mask};
}

template <typename T>
T cross_score(const TokenizedPair& pair, const ParamSet<T>& params, const ModelConfig& cfg, const CrossHead<T>& head) {
  auto out = forward(pair, params, cfg, names::kEncoder);
  auto row = out.hidden_states.row(0);
  if (head.weight.numel() != row.size()) throw DimensionError("cross head width does not match hidden size");
  T acc = 0;
  for (std::size_t i = 0; i < row.size(); ++i) acc += row[i] * head.weight[i];
  return acc;
}

/// A model converted to a fixed precision for scoring from text.
template <typename T>
class InferenceModel {
 public:
  InferenceModel(const Model& m, Vocabulary vocab, SequenceLimits limits = {});

  const ModelConfig& config() const { return config_; }
  const HeadConfig& head() const { return head_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ParamSet<T>& params() const { return params_; }
  const SequenceLimits& limits() const { return limits_; }

  // [count x hidden], encoded in chunks of `chunk` sequences.
  Tensor<T> embed_candidates(const std::vector<std::string>& texts, std::size_t chunk = 64) const;
  // Bi: [1 x hidden]; Poly: [m' x hidden].
  Tensor<T> context_vectors(std::string_view context) const;
  std::vector<double> cross_scores(std::string_view context, const std::vector<std::string>& candidates,
                                   std::size_t chunk = 32) const;

 private:
  ModelConfig config_;
  HeadConfig head_;
  Vocabulary vocab_;
  SequenceLimits limits_;
  ParamSet<T> params_;
};

extern template class InferenceModel<float>;
extern template class InferenceModel<double>;

}  // namespace polyscore
