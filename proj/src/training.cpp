#include "polyscore/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace polyscore {

InBatchLoss in_batch_loss(const TensorD& y_ctxt, const TensorD& y_cand) {
  if (y_ctxt.rank() != 2 || y_ctxt.shape() != y_cand.shape()) {
    throw DimensionError("in_batch_loss: " + shape_str(y_ctxt.shape()) + " vs " + shape_str(y_cand.shape()));
  }
  if (y_ctxt.dim(0) < 2) throw ContractError("in_batch_loss: batch of " + std::to_string(y_ctxt.dim(0)) + " has no negatives");
  TensorD logits = kernels::matmul_nt(y_ctxt, y_cand);
  std::vector<std::size_t> targets(y_ctxt.dim(0));
  std::iota(targets.begin(), targets.end(), 0);
  const double loss = ops::cross_entropy(logits, targets).item();
  return {loss, std::move(logits)};
}

double external_neg_loss(std::span<const double> scores) {
  if (scores.size() < 2) throw ContractError("external_neg_loss: need at least one negative");
  TensorD logits({1, scores.size()}, std::vector<double>(scores.begin(), scores.end()));
  const std::size_t target = 0;
  return ops::cross_entropy(logits, std::span<const std::size_t>(&target, 1)).item();
}

MlmSample mlm_corrupt(const TokenizedPair& tp, double rate, std::size_t vocab_size, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("mlm rate must be in [0, 1)");
  if (vocab_size <= Vocabulary::kReserved) throw ContractError("vocabulary has no ordinary tokens");
  MlmSample s{tp, {}};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<TokenId> random_token(static_cast<TokenId>(Vocabulary::kReserved),
                                                      static_cast<TokenId>(vocab_size - 1));
  for (std::size_t i = 0; i < tp.size(); ++i) {
    const TokenId id = tp.token_ids[i];
    if (!tp.pad_mask[i] || Vocabulary::is_special(id)) continue;
    if (u(rng) >= rate) continue;
    s.targets.push_back({i, id});
    const double r = u(rng);
    if (r < 0.8) {
      s.corrupted.token_ids[i] = Vocabulary::kMask;
    } else if (r < 0.9) {
      s.corrupted.token_ids[i] = random_token(rng);
    }
  }
  return s;
}

std::vector<TextPair> next_pairs(const std::vector<Example>& examples) {
  std::vector<TextPair> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back({flatten_context(ex.context), ex.gold()});
  return out;
}

std::vector<NextSelectionItem> next_selection_batch(const std::vector<TextPair>& pairs, std::size_t batch_size,
                                                    std::mt19937_64& rng) {
  if (pairs.size() < 2) throw ContractError("next-selection batches need at least 2 pairs");
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  std::bernoulli_distribution positive(0.5);
  std::vector<NextSelectionItem> out;
  out.reserve(batch_size);
  for (std::size_t k = 0; k < batch_size; ++k) {
    const std::size_t i = pick(rng);
    if (positive(rng)) {
      out.push_back({pairs[i].input, pairs[i].next, 1.0});
      continue;
    }
    constexpr int kMaxDraws = 1000;
    int draws = 0;
    std::size_t j = i;
    while (j == i || pairs[j].next == pairs[i].next) {
      if (++draws > kMaxDraws) throw ContractError("next-selection: no distinct negative for pair " + std::to_string(i));
      j = pick(rng);
    }
    out.push_back({pairs[i].input, pairs[j].next, 0.0});
  }
  return out;
}

BatchKind pretrain_batch_kind(std::uint64_t step) {
  if (step < 1) throw ContractError("steps are 1-based");
  return step % 2 == 1 ? BatchKind::Mlm : BatchKind::NextSelection;
}

std::vector<std::vector<std::size_t>> length_buckets(const std::vector<std::size_t>& lengths, std::size_t max_tokens) {
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur;
  std::size_t longest = 0;
  for (std::size_t idx : order) {
    const std::size_t next_longest = std::max(longest, lengths[idx]);
    // Padded cost of the bucket if this example joins it.
    if (!cur.empty() && next_longest * (cur.size() + 1) > max_tokens) {
      out.push_back(std::move(cur));
      cur.clear();
      longest = 0;
    }
    cur.push_back(idx);
    longest = std::max(longest, lengths[idx]);
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string to_string(FreezeSpec f) {
  switch (f) {
    case FreezeSpec::TopLayer: return "top_layer";
    case FreezeSpec::Top4Layers: return "top4_layers";
    case FreezeSpec::AllButEmbeddings: return "all_but_embeddings";
    case FreezeSpec::EveryLayer: return "every_layer";
  }
  return "?";
}

FreezeSpec parse_freeze_spec(std::string_view s) {
  if (s == "top_layer") return FreezeSpec::TopLayer;
  if (s == "top4_layers") return FreezeSpec::Top4Layers;
  if (s == "all_but_embeddings") return FreezeSpec::AllButEmbeddings;
  if (s == "every_layer") return FreezeSpec::EveryLayer;
  throw ConfigError("unknown freeze spec '" + std::string(s) +
                    "' (top_layer | top4_layers | all_but_embeddings | every_layer)");
}

namespace {

bool in_encoder(std::string_view name) {
  for (std::string_view p : {names::kEncoder, names::kContextEncoder, names::kCandidateEncoder}) {
    if (name.size() > p.size() && name.starts_with(p) && name[p.size()] == '.') return true;
  }
  return false;
}

// Block index of an encoder parameter, or -1 for embeddings.
long layer_index(std::string_view name) {
  const auto pos = name.find(".layer.");
  if (pos == std::string_view::npos) return -1;
  std::size_t i = pos + 7;
  long v = 0;
  while (i < name.size() && name[i] >= '0' && name[i] <= '9') v = v * 10 + (name[i++] - '0');
  return v;
}

}  // namespace

std::set<std::string> freeze_filter(FreezeSpec spec, const std::vector<std::string>& all, std::size_t layers) {
  std::set<std::string> out;
  for (const auto& name : all) {
    bool keep = true;
    if (in_encoder(name)) {
      switch (spec) {
        case FreezeSpec::EveryLayer: break;
        case FreezeSpec::AllButEmbeddings: keep = !names::is_embedding_table(name); break;
        case FreezeSpec::TopLayer:
        case FreezeSpec::Top4Layers: {
          const long top = spec == FreezeSpec::TopLayer ? 1 : 4;
          const long first = std::max(0L, static_cast<long>(layers) - top);
          keep = layer_index(name) >= first;
          break;
        }
      }
    }
    if (keep) out.insert(name);
  }
  return out;
}

double final_layer_std(const Model& model, std::string_view prefix, const SeqBatch& probe) {
  EvalBackend<double> be(model.params);
  TensorD last;
  encode(be, model.config, prefix, probe, &last);
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < last.rows(); ++r) {
    if (!probe.mask[r]) continue;
    for (double v : last.row(r)) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  return std::sqrt(std::max(0.0, sq / static_cast<double>(n) - mean * mean));
}

double rescale_final_layer(Model& model, std::string_view prefix, const SeqBatch& probe, double target_std) {
  if (!(target_std > 0)) throw ContractError("rescale target std must be > 0");
  const double current = final_layer_std(model, prefix, probe);
  if (!(current > 0)) throw NumericError("final layer output has zero variance on the probe batch");
  const double factor = target_std / current;
  const std::string base = names::layer(prefix, model.config.layers - 1) + ".ffn.outer";
  for (const char* part : {".weight", ".bias"}) {
    for (double& v : model.params.at(base + part).data()) v *= factor;
  }
  return factor;
}

std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

std::string to_json_line(const EvalRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["train_loss"] = r.train_loss;
  j["valid_loss"] = r.valid_loss ? nlohmann::ordered_json(*r.valid_loss) : nlohmann::ordered_json(nullptr);
  j["lr"] = r.lr;
  j["wall_clock_s"] = r.wall_clock_s;
  return j.dump();
}

FineTuneBatch make_finetune_batch(const std::vector<const Example*>& examples, const std::vector<Example>& pool,
                                  const FineTuneConfig& cfg, const Vocabulary& vocab, const ModelConfig& mcfg,
                                  std::mt19937_64& rng) {
  const SequenceLimits lim = effective_limits(cfg.limits, mcfg);
  FineTuneBatch fb;
  fb.contexts = examples.size();
  const bool cross = cfg.head.arch == Architecture::Cross;
  const bool external = cross || cfg.negatives == NegativesMode::External;
  if (external && cfg.num_candidates < 2) throw ConfigError("num_candidates must be >= 2 with external negatives");
  fb.per_context = external ? cfg.num_candidates : 0;

  std::vector<TokenizedPair> ctx, cand, pairs;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (const Example* ex : examples) {
    const std::string context = flatten_context(ex->context);
    std::vector<std::string> chosen{ex->gold()};
    if (external) {
      std::vector<std::string> own;
      for (std::size_t c = 0; c < ex->candidates.size(); ++c)
        if (c != ex->label_index && ex->candidates[c] != ex->gold()) own.push_back(ex->candidates[c]);
      std::shuffle(own.begin(), own.end(), rng);
      for (auto& s : own) {
        if (chosen.size() == cfg.num_candidates) break;
        chosen.push_back(std::move(s));
      }
      int draws = 0;
      while (chosen.size() < cfg.num_candidates) {
        const std::string& g = pool[pick(rng)].gold();
        if (g != ex->gold() || ++draws > 1000) chosen.push_back(g);
      }
    }
    if (cross) {
      for (const auto& c : chosen) pairs.push_back(encode_cross(context, c, vocab, lim, mcfg.max_positions));
    } else {
      ctx.push_back(encode_context(context, vocab, lim));
      for (const auto& c : chosen) cand.push_back(encode_candidate(c, vocab, lim));
    }
  }
  if (cross) {
    fb.pair_seqs = SeqBatch::from(pairs);
  } else {
    fb.context_seqs = SeqBatch::from(ctx);
    fb.candidate_seqs = SeqBatch::from(cand);
  }
  return fb;
}

double validation_loss(const Model& model, const Vocabulary& vocab, const std::vector<Example>& valid,
                       const std::vector<Example>& pool, const FineTuneConfig& cfg) {
  const bool in_batch = cfg.head.arch != Architecture::Cross && cfg.negatives == NegativesMode::InBatch;
  const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 2);
  auto rng = step_rng(cfg.seed, 0, 99);
  EvalBackend<double> be(model.params);
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t start = 0; start < valid.size(); start += bs) {
    const std::size_t end = std::min(valid.size(), start + bs);
    if (in_batch && end - start < 2) break;
    std::vector<const Example*> exs;
    for (std::size_t i = start; i < end; ++i) exs.push_back(&valid[i]);
    const FineTuneBatch fb = make_finetune_batch(exs, pool, cfg, vocab, model.config, rng);
    total += finetune_loss(be, model.config, model.head, fb).item() * static_cast<double>(exs.size());
    counted += exs.size();
  }
  if (counted == 0) throw ContractError("validation set too small");
  return total / static_cast<double>(counted);
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64 rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

template <class LossFn>
double tape_step(Model& model, OptimizerState& st, const OptimizerConfig& ocfg, const std::set<std::string>& trainable,
                 std::mt19937_64& rng, LossFn&& loss_fn) {
  Tape tape(model.params, [&](const std::string& n) { return trainable.contains(n); });
  tape.set_training(model.config.dropout_p > 0, rng());
  Var loss = loss_fn(tape);
  const double value = tape.value(loss).item();
  if (!std::isfinite(value)) throw NumericError("non-finite loss at step " + std::to_string(st.step + 1));
  tape.backward(loss);
  optimizer_step(model.params, tape.param_gradients(), ocfg, st);
  return value;
}

}  // namespace

TrainResult fine_tune(Model& model, OptimizerState& st, const Vocabulary& vocab, const std::vector<Example>& train,
                      const std::vector<Example>& valid, const FineTuneConfig& cfg, std::uint64_t total_steps,
                      const MetricsSink& sink) {
  if (model.head != cfg.head) throw ConfigError("model head " + head_spec(model.head) + " differs from config " + head_spec(cfg.head));
  if (auto p = cfg.optimizer.problems(); !p.empty()) throw ConfigError("invalid optimizer config: " + p.front());
  const bool in_batch = cfg.head.arch != Architecture::Cross && cfg.negatives == NegativesMode::InBatch;
  const std::size_t n = train.size();
  const std::size_t bs = std::min(cfg.batch_size, n);
  if (bs < 1 || (in_batch && bs < 2)) throw ContractError("training set too small for a batch");
  const std::size_t steps_per_epoch = n / bs;
  const std::size_t eval_interval =
      cfg.optimizer.eval_interval ? cfg.optimizer.eval_interval : std::max<std::size_t>(1, steps_per_epoch / 2);
  const auto trainable = freeze_filter(cfg.freeze, param_names(model.params), model.config.layers);

  TrainResult res;
  const auto t0 = std::chrono::steady_clock::now();
  std::uint64_t cached_epoch = static_cast<std::uint64_t>(-1);
  std::vector<std::size_t> perm;
  double since_eval = 0;
  std::size_t since_count = 0;
  while (st.step < total_steps) {
    const std::uint64_t step = st.step + 1;
    const std::uint64_t epoch = (step - 1) / steps_per_epoch;
    if (epoch != cached_epoch) {
      perm = permutation(n, step_rng(cfg.seed, epoch, 1));
      cached_epoch = epoch;
    }
    const std::size_t offset = ((step - 1) % steps_per_epoch) * bs;
    std::vector<const Example*> exs;
    for (std::size_t i = 0; i < bs; ++i) exs.push_back(&train[perm[offset + i]]);
    auto rng = step_rng(cfg.seed, step, 2);
    const FineTuneBatch fb = make_finetune_batch(exs, train, cfg, vocab, model.config, rng);
    const double lr = scheduled_lr(cfg.optimizer, st, step);
    const double loss = tape_step(model, st, cfg.optimizer, trainable, rng, [&](Tape& t) {
      return finetune_loss(t, model.config, model.head, fb);
    });
    res.step_losses.push_back(loss);
    since_eval += loss;
    ++since_count;
    if (step % eval_interval == 0 || step == total_steps) {
      EvalRecord rec;
      rec.step = step;
      rec.train_loss = since_eval / static_cast<double>(since_count);
      rec.lr = lr;
      if (!valid.empty()) {
        rec.valid_loss = validation_loss(model, vocab, valid, train, cfg);
        if (cfg.optimizer.schedule == LrSchedule::Plateau) report_validation(cfg.optimizer, st, *rec.valid_loss);
      }
      rec.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      res.evals.push_back(rec);
      if (sink) sink(rec);
      since_eval = 0;
      since_count = 0;
    }
  }
  return res;
}

PretrainBatch make_pretrain_batch(BatchKind kind, const std::vector<TextPair>& pairs, const Vocabulary& vocab,
                                  const PretrainConfig& cfg, std::mt19937_64& rng,
                                  const std::vector<std::vector<std::size_t>>* buckets) {
  PretrainBatch pb;
  pb.kind = kind;
  std::vector<TokenizedPair> seqs;
  if (kind == BatchKind::NextSelection) {
    for (auto& item : next_selection_batch(pairs, cfg.batch_size, rng)) {
      seqs.push_back(encode_pair(item.input, item.candidate, vocab, cfg.max_len));
      pb.labels.push_back(item.label);
    }
    pb.seqs = SeqBatch::from(seqs);
    return pb;
  }
  std::vector<std::size_t> chosen;
  if (buckets && !buckets->empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, buckets->size() - 1);
    chosen = (*buckets)[pick(rng)];
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
    for (std::size_t i = 0; i < cfg.batch_size; ++i) chosen.push_back(pick(rng));
  }
  std::vector<MlmSample> samples;
  for (std::size_t i : chosen) {
    samples.push_back(mlm_corrupt(encode_pair(pairs[i].input, pairs[i].next, vocab, cfg.max_len), cfg.mlm_rate,
                                  vocab.size(), rng));
  }
  std::size_t targets = 0;
  for (const auto& s : samples) targets += s.targets.size();
  if (targets == 0) {
    // Nothing was selected: mask the first ordinary token of the first sequence.
    for (auto& s : samples) {
      for (std::size_t i = 0; i < s.corrupted.size() && s.targets.empty(); ++i) {
        if (s.corrupted.pad_mask[i] && !Vocabulary::is_special(s.corrupted.token_ids[i])) {
          s.targets.push_back({i, s.corrupted.token_ids[i]});
          s.corrupted.token_ids[i] = Vocabulary::kMask;
        }
      }
      if (!s.targets.empty()) break;
    }
  }
  for (const auto& s : samples) seqs.push_back(s.corrupted);
  pb.seqs = SeqBatch::from(seqs);
  for (std::size_t b = 0; b < samples.size(); ++b) {
    for (const auto& t : samples[b].targets) {
      pb.target_rows.push_back(pb.seqs.row(b, t.position));
      pb.target_ids.push_back(static_cast<std::size_t>(t.original));
    }
  }
  return pb;
}

TrainResult pretrain(Model& model, OptimizerState& st, const Vocabulary& vocab, const std::vector<TextPair>& pairs,
                     const PretrainConfig& cfg, std::uint64_t total_steps, const MetricsSink& sink) {
  if (model.head.arch != Architecture::Pretrain) throw ConfigError("pre-training needs a pretrain-head model");
  if (auto p = cfg.optimizer.problems(); !p.empty()) throw ConfigError("invalid optimizer config: " + p.front());
  if (pairs.size() < 2) throw ContractError("pre-training corpus needs at least 2 pairs");
  std::vector<std::vector<std::size_t>> buckets;
  if (cfg.tokens_per_batch > 0) {
    std::vector<std::size_t> lengths;
    for (const auto& p : pairs) lengths.push_back(encode_pair(p.input, p.next, vocab, cfg.max_len).size());
    buckets = length_buckets(lengths, cfg.tokens_per_batch);
  }
  std::vector<std::string> all;
  for (const auto& [name, _] : model.params) all.push_back(name);
  const std::set<std::string> trainable(all.begin(), all.end());

  TrainResult res;
  const auto t0 = std::chrono::steady_clock::now();
  double since_eval = 0;
  std::size_t since_count = 0;
  while (st.step < total_steps) {
    const std::uint64_t step = st.step + 1;
    auto rng = step_rng(cfg.seed, step, 3);
    const PretrainBatch pb =
        make_pretrain_batch(pretrain_batch_kind(step), pairs, vocab, cfg, rng, buckets.empty() ? nullptr : &buckets);
    const double lr = scheduled_lr(cfg.optimizer, st, step);
    const double loss = tape_step(model, st, cfg.optimizer, trainable, rng,
                                  [&](Tape& t) { return pretrain_loss(t, model.config, pb); });
    res.step_losses.push_back(loss);
    since_eval += loss;
    ++since_count;
    if ((cfg.eval_interval && step % cfg.eval_interval == 0) || step == total_steps) {
      EvalRecord rec;
      rec.step = step;
      rec.train_loss = since_eval / static_cast<double>(since_count);
      rec.lr = lr;
      rec.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      res.evals.push_back(rec);
      if (sink) sink(rec);
      since_eval = 0;
      since_count = 0;
    }
  }
  return res;
}

}  // namespace polyscore
