#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "polyscore/model.hpp"
#include "polyscore/optimizer.hpp"
#include "polyscore/tape.hpp"

namespace polyscore {

// ---------------------------------------------------------------- losses

struct InBatchLoss {
  double loss;
  TensorD logits;  // [B x B], row i scores context i against every candidate
};

// Cross-entropy where row i's correct column is i. Needs B >= 2.
InBatchLoss in_batch_loss(const TensorD& y_ctxt, const TensorD& y_cand);

// Cross-entropy with the correct candidate at index 0. Needs n >= 2.
double external_neg_loss(std::span<const double> scores);

// ------------------------------------------------------------ pre-training

struct MlmTarget {
  std::size_t position;
  TokenId original;
  bool operator==(const MlmTarget&) const = default;
};

struct MlmSample {
  TokenizedPair corrupted;
  std::vector<MlmTarget> targets;
};

inline constexpr double kMlmRate = 0.15;

// Selects each real, non-special token with probability `rate`; a selected
// token becomes MASK (80%), a random non-special token (10%) or stays (10%).
MlmSample mlm_corrupt(const TokenizedPair& tp, double rate, std::size_t vocab_size, std::mt19937_64& rng);

struct TextPair {
  std::string input;
  std::string next;
};

// (flattened context, gold response) for every example.
std::vector<TextPair> next_pairs(const std::vector<Example>& examples);

struct NextSelectionItem {
  std::string input;
  std::string candidate;
  double label;  // 1 when candidate is the true next utterance
};

// Half positives, half negatives drawn uniformly from other pairs' next
// utterances (redrawn when the text equals the true one).
std::vector<NextSelectionItem> next_selection_batch(const std::vector<TextPair>& pairs, std::size_t batch_size,
                                                    std::mt19937_64& rng);

enum class BatchKind { Mlm, NextSelection };

// Strict alternation starting with MLM at step 1.
BatchKind pretrain_batch_kind(std::uint64_t step);

// Groups example indices of similar length so that each group holds at
// most `max_tokens` tokens (at least one example per group).
std::vector<std::vector<std::size_t>> length_buckets(const std::vector<std::size_t>& lengths, std::size_t max_tokens);

// ------------------------------------------------------ parameter control

enum class FreezeSpec { TopLayer, Top4Layers, AllButEmbeddings, EveryLayer };

std::string to_string(FreezeSpec f);
FreezeSpec parse_freeze_spec(std::string_view s);

// Names that stay trainable under `spec`. Anything outside the encoders
// (poly codes, scoring columns, pre-training heads) is always trainable.
std::set<std::string> freeze_filter(FreezeSpec spec, const std::vector<std::string>& names, std::size_t layers);

// Scales the last block's second FFN projection (weight and bias) of the
// encoder under `prefix` so that its output over the probe batch's real
// positions has standard deviation `target_std`. Returns the factor used.
double rescale_final_layer(Model& model, std::string_view prefix, const SeqBatch& probe, double target_std);

// Standard deviation of that projection's output over the probe batch.
double final_layer_std(const Model& model, std::string_view prefix, const SeqBatch& probe);

// ----------------------------------------------------- full-model losses

enum class NegativesMode { InBatch, External };

/// One fine-tuning batch, already tokenized.
struct FineTuneBatch {
  std::size_t contexts = 0;
  std::size_t per_context = 0;  // candidates per context; 0 means in-batch
  std::optional<SeqBatch> context_seqs;    // Bi / Poly
  std::optional<SeqBatch> candidate_seqs;  // Bi / Poly: gold first per context when external
  std::optional<SeqBatch> pair_seqs;       // Cross: contexts * per_context pairs, gold first
};

template <class Backend>
ValueOf<Backend> finetune_loss(Backend& be, const ModelConfig& cfg, const HeadConfig& head, const FineTuneBatch& fb) {
  if (head.arch == Architecture::Cross) {
    if (!fb.pair_seqs || fb.per_context < 2) throw ContractError("cross loss needs external negatives");
    auto scores = cross_scores(be, cfg, *fb.pair_seqs);
    auto logits = be.reshape(scores, Shape{fb.contexts, fb.per_context});
    const std::vector<std::size_t> targets(fb.contexts, 0);
    return be.cross_entropy(logits, targets);
  }
  auto ycand = candidate_embeddings(be, cfg, head, *fb.candidate_seqs);
  auto reps = context_representations(be, cfg, head, *fb.context_seqs);
  const bool in_batch = fb.per_context == 0;
  if (in_batch && fb.contexts < 2) throw ContractError("in-batch negatives need at least 2 examples");
  std::vector<ValueOf<Backend>> rows;
  std::vector<std::size_t> targets;
  for (std::size_t b = 0; b < fb.contexts; ++b) {
    ValueOf<Backend> cands = ycand;
    if (!in_batch) {
      std::vector<PoolGroup> pick;
      for (std::size_t j = 0; j < fb.per_context; ++j) pick.push_back({{b * fb.per_context + j, 1.0}});
      cands = be.pool(ycand, pick);
    }
    const std::size_t n = in_batch ? fb.contexts : fb.per_context;
    if (head.arch == Architecture::Poly) {
      rows.push_back(be.reshape(poly_attend(be, reps[b], cands), Shape{1, n}));
    } else {
      rows.push_back(be.matmul_nt(reps[b], cands));
    }
    targets.push_back(in_batch ? b : 0);
  }
  return be.cross_entropy(be.concat_rows(rows), targets);
}

struct PretrainBatch {
  BatchKind kind = BatchKind::Mlm;
  SeqBatch seqs;
  std::vector<std::size_t> target_rows;  // MLM: rows of seqs holding a target
  std::vector<std::size_t> target_ids;   // MLM: original token ids
  std::vector<double> labels;            // next-selection labels
};

template <class Backend>
ValueOf<Backend> pretrain_loss(Backend& be, const ModelConfig& cfg, const PretrainBatch& pb) {
  auto hidden = encode(be, cfg, names::kEncoder, pb.seqs);
  if (pb.kind == BatchKind::NextSelection) {
    return be.logistic_loss(cross_head_scores(be, hidden, pb.seqs, names::kNextWeight), pb.labels);
  }
  if (pb.target_rows.empty()) throw ContractError("MLM batch without targets");
  std::vector<PoolGroup> pick;
  for (std::size_t r : pb.target_rows) pick.push_back({{r, 1.0}});
  auto h = be.pool(hidden, pick);
  h = norm(be, be.gelu(linear(be, h, names::kMlmTransform)), names::kMlmNorm);
  // Output projection tied to the token embedding table.
  auto logits = be.add_bias(be.matmul_nt(h, be.param(names::token_embedding(names::kEncoder))),
                            be.param(names::kMlmOutputBias));
  return be.cross_entropy(logits, pb.target_ids);
}

// ------------------------------------------------------------ loops

std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t stream = 0);

struct EvalRecord {
  std::uint64_t step = 0;
  double train_loss = 0;
  std::optional<double> valid_loss;
  double lr = 0;
  double wall_clock_s = 0;
};

std::string to_json_line(const EvalRecord& r);

using MetricsSink = std::function<void(const EvalRecord&)>;

struct FineTuneConfig {
  HeadConfig head;
  OptimizerConfig optimizer;
  FreezeSpec freeze = FreezeSpec::EveryLayer;
  NegativesMode negatives = NegativesMode::InBatch;
  std::size_t batch_size = 32;
  std::size_t num_candidates = 16;  // per context when negatives are external
  std::uint64_t seed = 0;
  SequenceLimits limits;
};

FineTuneBatch make_finetune_batch(const std::vector<const Example*>& examples, const std::vector<Example>& pool,
                                  const FineTuneConfig& cfg, const Vocabulary& vocab, const ModelConfig& mcfg,
                                  std::mt19937_64& rng);

// Mean validation loss in eval mode, deterministic negatives.
double validation_loss(const Model& model, const Vocabulary& vocab, const std::vector<Example>& valid,
                       const std::vector<Example>& pool, const FineTuneConfig& cfg);

struct TrainResult {
  std::vector<double> step_losses;  // one per step run
  std::vector<EvalRecord> evals;
};

// Runs steps st.step+1 .. total_steps. Batches depend only on (seed, step),
// so a run resumed from a checkpoint continues identically.
TrainResult fine_tune(Model& model, OptimizerState& st, const Vocabulary& vocab, const std::vector<Example>& train,
                      const std::vector<Example>& valid, const FineTuneConfig& cfg, std::uint64_t total_steps,
                      const MetricsSink& sink = {});

struct PretrainConfig {
  OptimizerConfig optimizer = [] {
    OptimizerConfig o;
    o.kind = OptimizerKind::AdamDecay;
    o.lr = 2e-4;
    o.beta1 = 0.9;
    o.beta2 = 0.98;
    o.weight_decay = 0.0;
    o.warmup_steps = 10;
    o.schedule = LrSchedule::InverseSqrt;
    return o;
  }();
  std::size_t batch_size = 16;
  std::size_t tokens_per_batch = 0;  // > 0 switches to length-bucketed batches
  double mlm_rate = kMlmRate;
  std::size_t max_len = 64;
  std::size_t eval_interval = 10;
  std::uint64_t seed = 0;
};

PretrainBatch make_pretrain_batch(BatchKind kind, const std::vector<TextPair>& pairs, const Vocabulary& vocab,
                                  const PretrainConfig& cfg, std::mt19937_64& rng,
                                  const std::vector<std::vector<std::size_t>>* buckets = nullptr);

TrainResult pretrain(Model& model, OptimizerState& st, const Vocabulary& vocab, const std::vector<TextPair>& pairs,
                     const PretrainConfig& cfg, std::uint64_t total_steps, const MetricsSink& sink = {});

}  // namespace polyscore
