#include "polyscore/model.hpp"

#include <cmath>

#include <algorithm>
#include <charconv>

namespace polyscore {

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::Pretrain: return "pretrain";
    case Architecture::Bi: return "bi";
    case Architecture::Poly: return "poly";
    case Architecture::Cross: return "cross";
  }
  return "?";
}

Architecture parse_architecture(std::string_view s) {
  if (s == "pretrain") return Architecture::Pretrain;
  if (s == "bi") return Architecture::Bi;
  if (s == "poly") return Architecture::Poly;
  if (s == "cross") return Architecture::Cross;
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

HeadConfig parse_head_spec(std::string_view spec) {
  HeadConfig h;
  if (spec == "bi") {
    h.arch = Architecture::Bi;
    return h;
  }
  if (spec == "cross") {
    h.arch = Architecture::Cross;
    return h;
  }
  if (spec.starts_with("poly")) {
    h.arch = Architecture::Poly;
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
      auto pos = spec.find(':', start);
      parts.push_back(spec.substr(start, pos - start));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    if (parts.size() != 3 || parts[0] != "poly") {
      throw ConfigError("poly architecture must be written poly:<variant>:<m>, got '" + std::string(spec) + "'");
    }
    h.poly.variant = parse_poly_variant(parts[1]);
    long long m = -1;
    auto [ptr, ec] = std::from_chars(parts[2].data(), parts[2].data() + parts[2].size(), m);
    if (ec != std::errc{} || ptr != parts[2].data() + parts[2].size()) {
      throw ConfigError("poly m must be an integer, got '" + std::string(parts[2]) + "'");
    }
    if (m < 1) throw ConfigError("poly m must be >= 1, got " + std::to_string(m));
    h.poly.m = static_cast<std::size_t>(m);
    return h;
  }
  throw ConfigError("unknown architecture '" + std::string(spec) + "' (bi | cross | poly:<variant>:<m>)");
}

std::string head_spec(const HeadConfig& h) {
  if (h.arch == Architecture::Poly) return "poly:" + to_string(h.poly.variant) + ":" + std::to_string(h.poly.m);
  return to_string(h.arch);
}

std::string_view context_prefix(const HeadConfig& h) {
  return (h.arch == Architecture::Bi || h.arch == Architecture::Poly) ? names::kContextEncoder : names::kEncoder;
}

std::string_view candidate_prefix(const HeadConfig& h) {
  return (h.arch == Architecture::Bi || h.arch == Architecture::Poly) ? names::kCandidateEncoder : names::kEncoder;
}

namespace {

TensorD normal(Shape shape, std::mt19937_64& rng, double std = kInitStd) {
  std::normal_distribution<double> dist(0.0, std);
  TensorD t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

void add_head_params(ParamSet<double>& ps, const ModelConfig& cfg, const HeadConfig& head, std::mt19937_64& rng) {
  const std::size_t h = cfg.hidden;
  switch (head.arch) {
    case Architecture::Pretrain:
      ps[names::kMlmTransform + ".weight"] = normal({h, h}, rng, 1.0 / std::sqrt(static_cast<double>(h)));
      ps[names::kMlmTransform + ".bias"] = TensorD({h});
      ps[names::kMlmNorm + ".gain"] = TensorD({h}, 1.0);
      ps[names::kMlmNorm + ".bias"] = TensorD({h});
      ps[names::kMlmOutputBias] = TensorD({cfg.vocab_size});
      ps[names::kNextWeight] = normal({h, 1}, rng);
      break;
    case Architecture::Poly:
      if (head.poly.m < 1) throw ConfigError("poly m must be >= 1");
      if (head.poly.variant == PolyVariant::LearntCodes) ps[names::kPolyCodes] = normal({head.poly.m, h}, rng);
      break;
    case Architecture::Cross:
      ps[names::kCrossWeight] = normal({h, 1}, rng);
      break;
    case Architecture::Bi:
      break;
  }
}

}  // namespace

Model init_model(const ModelConfig& cfg, const HeadConfig& head, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  Model m{cfg, head, {}};
  if (head.arch == Architecture::Bi || head.arch == Architecture::Poly) {
    init_encoder_params(m.params, cfg, names::kContextEncoder, rng);
    init_encoder_params(m.params, cfg, names::kCandidateEncoder, rng);
  } else {
    init_encoder_params(m.params, cfg, names::kEncoder, rng);
  }
  add_head_params(m.params, cfg, head, rng);
  return m;
}

Model finetune_from(const Model& pre, const HeadConfig& head, std::uint64_t seed) {
  if (head.arch == Architecture::Pretrain) throw ConfigError("fine-tuning needs a bi, poly or cross head");
  if (pre.head.arch != Architecture::Pretrain) {
    if (pre.head == head) return pre;
    throw ConfigError("checkpoint holds a " + head_spec(pre.head) + " model, cannot fine-tune it as " +
                      head_spec(head));
  }
  std::mt19937_64 rng(seed);
  Model m{pre.config, head, {}};
  const std::string enc = std::string(names::kEncoder) + ".";
  for (const auto& [name, t] : pre.params)
    if (name.starts_with(enc)) m.params.emplace(name, t);
  if (head.arch == Architecture::Bi || head.arch == Architecture::Poly) {
    copy_encoder_params(m.params, names::kEncoder, names::kContextEncoder);
    copy_encoder_params(m.params, names::kEncoder, names::kCandidateEncoder);
    std::erase_if(m.params, [&](const auto& kv) { return kv.first.starts_with(enc); });
  }
  add_head_params(m.params, m.config, head, rng);
  if (head.arch == Architecture::Cross) m.params[names::kCrossWeight] = pre.params.at(names::kNextWeight);
  return m;
}

SequenceLimits effective_limits(const SequenceLimits& lim, const ModelConfig& cfg) {
  SequenceLimits out = lim;
  out.context = std::clamp<std::size_t>(lim.context, 2, cfg.max_positions);
  out.candidate = std::clamp<std::size_t>(lim.candidate, 2, cfg.max_positions);
  return out;
}

TokenizedPair encode_context(std::string_view text, const Vocabulary& vocab, const SequenceLimits& lim) {
  return encode_single(text, vocab, lim.context, 0, KeepSide::Tail);
}

TokenizedPair encode_candidate(std::string_view text, const Vocabulary& vocab, const SequenceLimits& lim) {
  return encode_single(text, vocab, lim.candidate, 0, KeepSide::Head);
}

TokenizedPair encode_cross(std::string_view context, std::string_view candidate, const Vocabulary& vocab,
                           const SequenceLimits& lim, std::size_t max_positions) {
  const std::size_t len = std::min(lim.context + lim.candidate, max_positions);
  return encode_pair(context, candidate, vocab, std::max<std::size_t>(len, 4));
}

template <typename T>
InferenceModel<T>::InferenceModel(const Model& m, Vocabulary vocab, SequenceLimits limits)
    : config_(m.config),
      head_(m.head),
      vocab_(std::move(vocab)),
      limits_(effective_limits(limits, m.config)),
      params_(cast_params<T>(m.params)) {
  if (vocab_.size() != config_.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab_.size()) + " entries but the model expects " +
                      std::to_string(config_.vocab_size));
  }
}

template <typename T>
Tensor<T> InferenceModel<T>::embed_candidates(const std::vector<std::string>& texts, std::size_t chunk) const {
  if (texts.empty()) throw ContractError("no candidates to embed");
  if (head_.arch != Architecture::Bi && head_.arch != Architecture::Poly) {
    throw ContractError("only Bi and Poly models produce candidate embeddings");
  }
  EvalBackend<T> be(params_);
  std::vector<T> data;
  data.reserve(texts.size() * config_.hidden);
  for (std::size_t start = 0; start < texts.size(); start += chunk) {
    const std::size_t end = std::min(texts.size(), start + chunk);
    std::vector<TokenizedPair> seqs;
    for (std::size_t i = start; i < end; ++i) seqs.push_back(encode_candidate(texts[i], vocab_, limits_));
    auto emb = candidate_embeddings(be, config_, head_, SeqBatch::from(seqs));
    data.insert(data.end(), emb.data().begin(), emb.data().end());
  }
  return Tensor<T>({texts.size(), config_.hidden}, std::move(data));
}

template <typename T>
Tensor<T> InferenceModel<T>::context_vectors(std::string_view context) const {
  EvalBackend<T> be(params_);
  const TokenizedPair tp = encode_context(context, vocab_, limits_);
  auto reps = context_representations(be, config_, head_, SeqBatch::from(std::span<const TokenizedPair>(&tp, 1)));
  return std::move(reps.front());
}

template <typename T>
std::vector<double> InferenceModel<T>::cross_scores(std::string_view context,
                                                    const std::vector<std::string>& candidates,
                                                    std::size_t chunk) const {
  if (head_.arch != Architecture::Cross) throw ContractError("cross scoring needs a Cross model");
  EvalBackend<T> be(params_);
  std::vector<double> out;
  out.reserve(candidates.size());
  for (std::size_t start = 0; start < candidates.size(); start += chunk) {
    const std::size_t end = std::min(candidates.size(), start + chunk);
    std::vector<TokenizedPair> pairs;
    for (std::size_t i = start; i < end; ++i)
      pairs.push_back(encode_cross(context, candidates[i], vocab_, limits_, config_.max_positions));
    auto s = polyscore::cross_scores(be, config_, SeqBatch::from(pairs));
    for (T v : s.data()) out.push_back(static_cast<double>(v));
  }
  return out;
}

template class InferenceModel<float>;
template class InferenceModel<double>;

}  // namespace polyscore
