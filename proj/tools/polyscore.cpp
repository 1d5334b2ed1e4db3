// polyscore: pretrain / train / eval / index / rank / bench.
//
// Every command reads an optional --config file of key = value lines; any
// flag given on the command line overrides the file. A JSON run manifest is
// written before the command starts work.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "polyscore/bench.hpp"
#include "polyscore/binio.hpp"
#include "polyscore/checkpoint.hpp"
#include "polyscore/config.hpp"
#include "polyscore/kernels.hpp"
#include "polyscore/retrieval.hpp"
#include "polyscore/training.hpp"

namespace fs = std::filesystem;
using namespace polyscore;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

enum ExitCode { kOk = 0, kInternal = 1, kInput = 2, kStale = 3 };

struct Key {
  std::string name;
  std::string help;
  bool is_flag = false;
};

std::string flag_name(const std::string& key) {
  std::string f = "--";
  for (char c : key) f += (c == '_' || c == '.') ? '-' : c;
  return f;
}

std::string file_hash(const fs::path& p) { return binio::hex64(binio::fnv1a(binio::read_file(p))); }

class Manifest {
 public:
  Manifest(std::string command, fs::path path) : path_(std::move(path)) {
    j_["command"] = std::move(command);
    j_["tool_version"] = kToolVersion;
    j_["threads"] = num_threads();
  }
  void config(const KeyValues& kv) {
    json c = json::object();
    for (const auto& [k, v] : kv) c[k] = v;
    j_["config"] = c;
    if (auto it = kv.find("seed"); it != kv.end()) j_["seed"] = it->second;
  }
  void input(const std::string& role, const fs::path& p) {
    j_["inputs"][role] = {{"path", p.string()}, {"hash", file_hash(p)}};
  }
  void output(const std::string& role, const fs::path& p) { j_["outputs"][role] = {{"path", p.string()}, {"hash", nullptr}}; }
  void finish_output(const std::string& role, const fs::path& p) {
    j_["outputs"][role] = {{"path", p.string()}, {"hash", file_hash(p)}};
    write();
  }
  void write() const { binio::write_file(path_, j_.dump(2) + "\n"); }

 private:
  fs::path path_;
  json j_;
};

fs::path manifest_path(ConfigReader& r, const std::string& command, const std::string& out) {
  return r.str("manifest", out.empty() ? command + ".manifest.json" : out + ".manifest.json");
}

ModelConfig read_model_config(ConfigReader& r, std::size_t max_positions_default) {
  ModelConfig c;
  c.layers = r.size("model.layers", c.layers);
  c.heads = r.size("model.heads", c.heads);
  c.hidden = r.size("model.hidden", c.hidden);
  c.ffn_hidden = r.size("model.ffn_hidden", c.ffn_hidden);
  c.max_positions = r.size("model.max_positions", max_positions_default);
  c.dropout_p = r.real("model.dropout", c.dropout_p);
  return c;
}

OptimizerConfig read_optimizer(ConfigReader& r, OptimizerConfig o) {
  o.kind = r.parsed<OptimizerKind>("optimizer", to_string(o.kind), parse_optimizer_kind);
  o.lr = r.real("lr", o.lr);
  o.beta1 = r.real("beta1", o.beta1);
  o.beta2 = r.real("beta2", o.beta2);
  o.eps = r.real("eps", o.eps);
  o.weight_decay = r.real("weight_decay", o.weight_decay);
  o.warmup_steps = r.size("warmup", o.warmup_steps);
  o.schedule = r.parsed<LrSchedule>("schedule", to_string(o.schedule), parse_lr_schedule);
  o.plateau_decay_factor = r.real("plateau_factor", o.plateau_decay_factor);
  o.plateau_patience = r.size("plateau_patience", o.plateau_patience);
  o.eval_interval = r.size("eval_interval", o.eval_interval);
  for (auto& p : o.problems()) r.problem(p);
  return o;
}

SequenceLimits read_limits(ConfigReader& r) {
  SequenceLimits l;
  l.context = r.size("context_len", l.context);
  l.candidate = r.size("candidate_len", l.candidate);
  if (l.context < 3) r.problem("context_len: must be >= 3");
  if (l.candidate < 3) r.problem("candidate_len: must be >= 3");
  return l;
}

std::vector<Example> read_examples(const fs::path& p, bool augment) {
  auto ex = load_jsonl(p);
  if (ex.empty()) throw ParseError(p.string() + ": no examples");
  return augment ? augment_history(ex) : ex;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::istringstream in(binio::read_file(p));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
  }
  return out;
}

class MetricsFile {
 public:
  explicit MetricsFile(const fs::path& p) : out_(p, std::ios::trunc) {
    if (!out_) throw ParseError("cannot write " + p.string());
  }
  MetricsSink sink() {
    return [this](const EvalRecord& rec) {
      out_ << to_json_line(rec) << '\n';
      out_.flush();
      std::cerr << to_json_line(rec) << '\n';
    };
  }

 private:
  std::ofstream out_;
};

// ---------------------------------------------------------------- commands

int cmd_pretrain(ConfigReader& r) {
  const std::string data = r.required_str("data");
  const std::string out = r.required_str("out");
  const auto seed = r.required_u64("seed");
  const std::string vocab_path = r.str("vocab", out + ".vocab");
  const std::string metrics_path = r.str("metrics", out + ".metrics.jsonl");
  const std::size_t vocab_size = r.size("vocab_size", 2000);
  const std::size_t steps = r.size("steps", 50);
  const bool augment = r.flag("augment_history", false);
  ModelConfig mcfg = read_model_config(r, 64);
  PretrainConfig pc;
  pc.seed = seed;
  pc.batch_size = r.size("batch_size", pc.batch_size);
  pc.tokens_per_batch = r.size("tokens_per_batch", pc.tokens_per_batch);
  pc.max_len = r.size("max_len", pc.max_len);
  pc.mlm_rate = r.real("mlm_rate", pc.mlm_rate);
  pc.eval_interval = r.size("eval_interval", pc.eval_interval);
  pc.optimizer = read_optimizer(r, pc.optimizer);
  if (pc.batch_size < 1) r.problem("batch_size: must be >= 1");
  if (pc.max_len < 4) r.problem("max_len: must be >= 4");
  if (pc.max_len > mcfg.max_positions) r.problem("max_len: exceeds model.max_positions");
  Manifest man("pretrain", manifest_path(r, "pretrain", out));
  r.finish();

  man.config(r.resolved());
  man.input("data", data);
  man.output("checkpoint", out);
  man.write();

  const auto examples = read_examples(data, augment);
  const Vocabulary vocab = Vocabulary::build(corpus_strings(examples), vocab_size);
  mcfg.vocab_size = vocab.size();
  mcfg.validate();
  Model model = init_model(mcfg, HeadConfig{Architecture::Pretrain, {}, {}}, seed);
  OptimizerState st;
  MetricsFile metrics(metrics_path);
  const auto res = pretrain(model, st, vocab, next_pairs(examples), pc, steps, metrics.sink());
  save_checkpoint(out, model, &st);
  vocab.save(vocab_path);
  man.finish_output("checkpoint", out);
  std::cout << json{{"steps", st.step},
                    {"first_loss", res.step_losses.empty() ? 0.0 : res.step_losses.front()},
                    {"last_loss", res.step_losses.empty() ? 0.0 : res.step_losses.back()},
                    {"checkpoint", out},
                    {"vocab", vocab_path}}
                   .dump()
            << '\n';
  return kOk;
}

int cmd_train(ConfigReader& r) {
  const std::string data = r.required_str("data");
  const std::string out = r.required_str("out");
  const auto seed = r.required_u64("seed");
  const auto valid_path = r.optional_str("valid");
  const auto base = r.optional_str("base");
  const std::string vocab_in = r.str("vocab", base ? *base + ".vocab" : "");
  const std::string metrics_path = r.str("metrics", out + ".metrics.jsonl");
  const std::size_t steps = r.size("steps", 100);
  const bool augment = r.flag("augment_history", false);
  const double rescale_std = r.real("rescale_std", 0.0);
  const std::size_t vocab_size = r.size("vocab_size", 2000);
  ModelConfig mcfg = read_model_config(r, 64);
  FineTuneConfig fc;
  fc.seed = seed;
  fc.head = r.parsed<HeadConfig>("head", "bi", parse_head_spec);
  fc.freeze = r.parsed<FreezeSpec>("freeze", to_string(fc.freeze), parse_freeze_spec);
  fc.negatives = r.parsed<NegativesMode>("negatives", "in_batch", [](const std::string& s) {
    if (s == "in_batch") return NegativesMode::InBatch;
    if (s == "external") return NegativesMode::External;
    throw ConfigError("expected in_batch or external, got '" + s + "'");
  });
  fc.batch_size = r.size("batch_size", fc.batch_size);
  fc.num_candidates = r.size("num_candidates", fc.num_candidates);
  fc.limits = read_limits(r);
  fc.optimizer = read_optimizer(r, fc.optimizer);
  if (fc.batch_size < 1) r.problem("batch_size: must be >= 1");
  if (rescale_std < 0) r.problem("rescale_std: must be >= 0");
  Manifest man("train", manifest_path(r, "train", out));
  r.finish();

  man.config(r.resolved());
  man.input("data", data);
  if (valid_path) man.input("valid", *valid_path);
  if (base) man.input("base", *base);
  man.output("checkpoint", out);
  man.write();

  const auto train = read_examples(data, augment);
  const std::vector<Example> valid = valid_path ? load_jsonl(*valid_path) : std::vector<Example>{};
  Model model;
  OptimizerState st;
  Vocabulary vocab = vocab_in.empty() ? Vocabulary::build(corpus_strings(train), vocab_size) : Vocabulary::load(vocab_in);
  if (base) {
    Checkpoint ck = load_checkpoint(*base);
    if (ck.model.head.arch != Architecture::Pretrain && ck.model.head == fc.head) {
      model = std::move(ck.model);
      if (ck.optimizer) st = std::move(*ck.optimizer);
    } else {
      model = finetune_from(ck.model, fc.head, seed);
    }
  } else {
    mcfg.vocab_size = vocab.size();
    mcfg.validate();
    model = init_model(mcfg, fc.head, seed);
  }
  if (rescale_std > 0 && st.step == 0) {
    const SequenceLimits lim = effective_limits(fc.limits, model.config);
    std::vector<TokenizedPair> probe;
    for (std::size_t i = 0; i < std::min<std::size_t>(train.size(), 32); ++i)
      probe.push_back(encode_context(flatten_context(train[i].context), vocab, lim));
    const SeqBatch pb = SeqBatch::from(probe);
    std::vector<std::string_view> prefixes{context_prefix(model.head)};
    if (candidate_prefix(model.head) != context_prefix(model.head)) prefixes.push_back(candidate_prefix(model.head));
    for (auto p : prefixes) rescale_final_layer(model, p, pb, rescale_std);
  }
  MetricsFile metrics(metrics_path);
  const auto res = fine_tune(model, st, vocab, train, valid, fc, steps, metrics.sink());
  save_checkpoint(out, model, &st);
  vocab.save(out + ".vocab");
  man.finish_output("checkpoint", out);
  std::cout << json{{"steps", st.step},
                    {"last_loss", res.step_losses.empty() ? 0.0 : res.step_losses.back()},
                    {"checkpoint", out}}
                   .dump()
            << '\n';
  return kOk;
}

struct LoadedModel {
  Model model;
  Vocabulary vocab;
};

LoadedModel load_for_inference(const std::string& ckpt, const std::string& vocab_path) {
  Checkpoint ck = load_checkpoint(ckpt);
  return {std::move(ck.model), Vocabulary::load(vocab_path)};
}

void emit(const std::optional<std::string>& out, const std::string& text) {
  if (out) {
    binio::write_file(*out, text);
  } else {
    std::cout << text;
  }
}

int cmd_eval(ConfigReader& r) {
  const std::string ckpt = r.required_str("checkpoint");
  const std::string data = r.required_str("data");
  const std::string vocab_path = r.str("vocab", ckpt + ".vocab");
  const auto out = r.optional_str("out");
  const auto ks = r.size_list("ks", {1, 5, 10});
  const SequenceLimits lim = read_limits(r);
  for (std::size_t k : ks)
    if (k == 0) r.problem("ks: entries must be >= 1");
  Manifest man("eval", manifest_path(r, "eval", out.value_or("")));
  r.finish();

  man.config(r.resolved());
  man.input("checkpoint", ckpt);
  man.input("data", data);
  man.write();

  const auto examples = read_examples(data, false);
  auto lm = load_for_inference(ckpt, vocab_path);
  const Retriever ret(lm.model, std::move(lm.vocab), lim);
  std::vector<RankResult> results;
  std::size_t c_min = SIZE_MAX, c_max = 0;
  for (const auto& ex : examples) {
    const std::string ctx = flatten_context(ex.context);
    results.push_back(ret.rank_uncached(ctx, ex.candidates, 1, ex.label_index));
    c_min = std::min(c_min, ex.candidates.size());
    c_max = std::max(c_max, ex.candidates.size());
  }
  const std::string suffix = c_min == c_max ? "/" + std::to_string(c_max) : "";
  json j;
  j["examples"] = examples.size();
  j["candidates"] = c_max;
  for (std::size_t k : ks) {
    if (k > c_min) continue;
    j["R@" + std::to_string(k) + suffix] = recall_at_k(results, k);
  }
  j["mrr"] = mrr(results);
  emit(out, j.dump() + "\n");
  return kOk;
}

int cmd_index(ConfigReader& r) {
  const std::string ckpt = r.required_str("checkpoint");
  const std::string cands = r.required_str("candidates");
  const std::string out = r.required_str("out");
  const std::string vocab_path = r.str("vocab", ckpt + ".vocab");
  const SequenceLimits lim = read_limits(r);
  Manifest man("index", manifest_path(r, "index", out));
  r.finish();

  man.config(r.resolved());
  man.input("checkpoint", ckpt);
  man.input("candidates", cands);
  man.output("cache", out);
  man.write();

  auto lm = load_for_inference(ckpt, vocab_path);
  const Retriever ret(lm.model, std::move(lm.vocab), lim);
  const auto texts = read_lines(cands);
  if (texts.empty()) throw ParseError(cands + ": no candidates");
  save_cache(out, ret.build_cache(texts));
  man.finish_output("cache", out);
  std::cerr << "indexed " << texts.size() << " candidates\n";
  return kOk;
}

int cmd_rank(ConfigReader& r) {
  const std::string ckpt = r.required_str("checkpoint");
  const std::string queries = r.required_str("queries");
  const std::string vocab_path = r.str("vocab", ckpt + ".vocab");
  const auto cache_path = r.optional_str("cache");
  const auto cand_path = r.optional_str("candidates");
  const bool no_cache = r.flag("no_cache", false);
  std::size_t k = r.size("k", 10);
  const auto out = r.optional_str("out");
  const SequenceLimits lim = read_limits(r);
  if (k == 0) r.problem("k: must be >= 1");
  if ((no_cache || !cache_path) && !cand_path) r.problem("candidates: required without a cache");
  Manifest man("rank", manifest_path(r, "rank", out.value_or("")));
  r.finish();

  man.config(r.resolved());
  man.input("checkpoint", ckpt);
  man.input("queries", queries);
  if (cache_path && !no_cache) man.input("cache", *cache_path);
  if (cand_path) man.input("candidates", *cand_path);
  man.write();

  auto lm = load_for_inference(ckpt, vocab_path);
  const Retriever ret(lm.model, std::move(lm.vocab), lim);
  const bool cross = ret.arch() == Architecture::Cross;
  std::optional<CandidateCache> cache;
  std::vector<std::string> cands;
  if (!no_cache && cache_path && !cross) {
    cache = load_cache(*cache_path);
    ret.check_fresh(*cache);
  } else {
    if (!cand_path) throw ConfigError("candidates: required for cross-encoder ranking");
    cands = read_lines(*cand_path);
    if (cands.empty()) throw ParseError(*cand_path + ": no candidates");
  }
  const std::size_t count = cache ? cache->size() : cands.size();
  if (k > count) {
    std::cerr << "warning: k = " << k << " exceeds " << count << " candidates; using k = " << count << '\n';
    k = count;
  }

  std::istringstream in(binio::read_file(queries));
  std::string line, text;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json q;
    try {
      q = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(queries + " line " + std::to_string(n) + ": " + e.what());
    }
    if (!q.contains("context") || !q["context"].is_array())
      throw ParseError(queries + " line " + std::to_string(n) + ": missing context array");
    std::vector<std::string> turns;
    for (const auto& t : q["context"]) {
      if (!t.is_string()) throw ParseError(queries + " line " + std::to_string(n) + ": context turns must be strings");
      turns.push_back(t.get<std::string>());
    }
    const std::string ctx = flatten_context(turns);
    const RankResult res = cache ? ret.rank(ctx, *cache, k) : ret.rank_uncached(ctx, cands, k);
    json o;
    o["query_id"] = q.contains("query_id") ? q["query_id"] : json(n - 1);
    o["ranking"] = json::array();
    for (const auto& s : res.ranking) o["ranking"].push_back({{"id", s.id}, {"score", s.score}});
    text += o.dump() + "\n";
  }
  emit(out, text);
  return kOk;
}

int cmd_bench(ConfigReader& r) {
  const auto seed = r.required_u64("seed");
  BenchSpec spec;
  spec.seed = seed;
  const std::string arch_list = r.str("arch", "bi,poly16,poly64,poly360,cross");
  {
    std::istringstream in(arch_list);
    std::string a;
    while (std::getline(in, a, ',')) {
      try {
        spec.architectures.push_back(parse_bench_arch(a));
      } catch (const ConfigError& e) {
        r.problem(std::string("arch: ") + e.what());
      }
    }
  }
  spec.candidate_counts = r.size_list("candidates", spec.candidate_counts);
  spec.n_queries = r.size("queries", spec.n_queries);
  spec.warmup_queries = r.size("warmup", spec.warmup_queries);
  const std::size_t extrap = r.size("extrapolate_cross_from", 1000);
  if (extrap > 0) spec.extrapolate_cross_from = extrap;
  spec.context_tokens = r.size("context_tokens", spec.context_tokens);
  spec.candidate_tokens = r.size("candidate_tokens", spec.candidate_tokens);
  spec.threads = static_cast<int>(r.size("threads", 1));
  const std::size_t vocab_size = r.size("vocab_size", 1000);
  ModelConfig mcfg = read_model_config(r, 128);
  mcfg.dropout_p = 0;
  const auto out = r.optional_str("out");
  for (auto& p : spec.problems()) r.problem(p);
  if (vocab_size <= Vocabulary::kReserved) r.problem("vocab_size: must exceed the reserved tokens");
  Manifest man("bench", manifest_path(r, "bench", out.value_or("")));
  r.finish();

  man.config(r.resolved());
  if (out) man.output("report", *out);
  man.write();

  std::vector<std::string> words;
  for (std::size_t i = Vocabulary::kReserved; i < vocab_size; ++i) words.push_back("w" + std::to_string(i));
  const Vocabulary vocab = Vocabulary::from_tokens(words);
  mcfg.vocab_size = vocab.size();
  mcfg.validate();
  const BenchPool pool = synthetic_pool(vocab, spec);
  const BenchReport report = run_bench(spec, random_models(mcfg, seed), vocab, pool);
  std::cout << render_table(report);
  if (out) {
    binio::write_file(*out, render_jsonl(report));
    man.finish_output("report", *out);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-, Poly- and Cross-encoder training, ranking and benchmarking"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  struct Sub {
    std::string name;
    std::string help;
    int (*run)(ConfigReader&);
    std::vector<Key> keys;
  };
  const std::vector<Key> model_keys{{"model.layers", "transformer blocks"},
                                    {"model.heads", "attention heads"},
                                    {"model.hidden", "hidden size"},
                                    {"model.ffn_hidden", "feed-forward size"},
                                    {"model.max_positions", "position table length"},
                                    {"model.dropout", "dropout probability"}};
  const std::vector<Key> opt_keys{{"optimizer", "adam_decay | adamax"},
                                  {"lr", "peak learning rate"},
                                  {"beta1", ""},
                                  {"beta2", ""},
                                  {"eps", ""},
                                  {"weight_decay", ""},
                                  {"warmup", "linear warmup steps"},
                                  {"schedule", "inverse_sqrt | plateau"},
                                  {"plateau_factor", "lr multiplier on plateau"},
                                  {"plateau_patience", "evaluations without improvement before decay"},
                                  {"eval_interval", "steps between evaluations (0 = half epoch)"}};
  const std::vector<Key> limit_keys{{"context_len", "max context tokens"}, {"candidate_len", "max candidate tokens"}};
  auto cat = [](std::vector<Key> a, const std::vector<Key>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };

  std::vector<Sub> subs{
      {"pretrain", "MLM + next-utterance pre-training", cmd_pretrain,
       cat(cat({{"data", "dataset JSONL"},
                {"out", "output checkpoint"},
                {"seed", "random seed"},
                {"vocab", "vocabulary output (default <out>.vocab)"},
                {"vocab_size", "max vocabulary size"},
                {"steps", "optimizer steps"},
                {"batch_size", ""},
                {"tokens_per_batch", "length-bucketed batches of this many tokens (0 = off)"},
                {"max_len", "max pair length"},
                {"mlm_rate", ""},
                {"metrics", "metrics JSONL path"},
                {"manifest", "run manifest path"},
                {"augment_history", "use every earlier turn as a response too", true}},
               model_keys),
           opt_keys)},
      {"train", "fine-tune a bi | poly:<variant>:<m> | cross model", cmd_train,
       cat(cat(cat({{"data", "training JSONL"},
                    {"valid", "validation JSONL"},
                    {"base", "starting checkpoint"},
                    {"out", "output checkpoint"},
                    {"seed", "random seed"},
                    {"vocab", "vocabulary (default <base>.vocab)"},
                    {"vocab_size", "vocabulary size when no base is given"},
                    {"head", "bi | cross | poly:<learnt|first|last|last_h1>:<m>"},
                    {"freeze", "top_layer | top4_layers | all_but_embeddings | every_layer"},
                    {"negatives", "in_batch | external"},
                    {"num_candidates", "candidates per context with external negatives"},
                    {"batch_size", ""},
                    {"steps", "total optimizer steps"},
                    {"rescale_std", "rescale the last layer to this std before training (0 = off)"},
                    {"metrics", "metrics JSONL path"},
                    {"manifest", "run manifest path"},
                    {"augment_history", "use every earlier turn as a response too", true}},
                   model_keys),
               opt_keys),
           limit_keys)},
      {"eval", "R@k/C and MRR on a labelled JSONL", cmd_eval,
       cat({{"checkpoint", ""},
            {"data", "evaluation JSONL"},
            {"vocab", "vocabulary (default <checkpoint>.vocab)"},
            {"ks", "comma-separated k list"},
            {"out", "metrics JSON path (default stdout)"},
            {"manifest", "run manifest path"}},
           limit_keys)},
      {"index", "precompute candidate embeddings", cmd_index,
       cat({{"checkpoint", ""},
            {"candidates", "one candidate per line"},
            {"out", "cache file"},
            {"vocab", "vocabulary (default <checkpoint>.vocab)"},
            {"manifest", "run manifest path"}},
           limit_keys)},
      {"rank", "top-k candidates for each query", cmd_rank,
       cat({{"checkpoint", ""},
            {"queries", "JSONL of {\"context\": [...]}"},
            {"cache", "cache file from index"},
            {"candidates", "one candidate per line"},
            {"no_cache", "re-encode candidates instead of using the cache", true},
            {"k", ""},
            {"out", "rankings JSONL (default stdout)"},
            {"vocab", "vocabulary (default <checkpoint>.vocab)"},
            {"manifest", "run manifest path"}},
           limit_keys)},
      {"bench", "per-query latency by architecture and candidate count", cmd_bench,
       cat({{"arch", "comma-separated: bi, cross, poly<m>"},
            {"candidates", "comma-separated candidate counts"},
            {"queries", "timed queries"},
            {"warmup", "untimed warmup queries"},
            {"extrapolate_cross_from", "measure cross here and scale linearly above it (0 = off)"},
            {"out", "JSON-lines report"},
            {"seed", "random seed"},
            {"threads", "worker threads inside the timed region"},
            {"vocab_size", "synthetic vocabulary size"},
            {"context_tokens", "synthetic context length"},
            {"candidate_tokens", "synthetic candidate length"},
            {"manifest", "run manifest path"}},
           model_keys)},
  };

  std::vector<std::string> config_paths(subs.size());
  std::vector<std::vector<std::pair<std::string, CLI::Option*>>> options(subs.size());
  std::vector<std::vector<std::string>> values(subs.size());
  std::vector<CLI::App*> apps;
  for (std::size_t s = 0; s < subs.size(); ++s) {
    CLI::App* sub = app.add_subcommand(subs[s].name, subs[s].help);
    sub->add_option("--config", config_paths[s], "key = value config file");
    values[s].resize(subs[s].keys.size());
    for (std::size_t i = 0; i < subs[s].keys.size(); ++i) {
      const Key& k = subs[s].keys[i];
      CLI::Option* o = k.is_flag ? sub->add_flag(flag_name(k.name), k.help)
                                 : sub->add_option(flag_name(k.name), values[s][i], k.help);
      options[s].emplace_back(k.name, o);
    }
    apps.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInput;
  }

  for (std::size_t s = 0; s < subs.size(); ++s) {
    if (!apps[s]->parsed()) continue;
    try {
      KeyValues kv = config_paths[s].empty() ? KeyValues{} : load_config(config_paths[s]);
      for (std::size_t i = 0; i < options[s].size(); ++i) {
        const auto& [key, opt] = options[s][i];
        if (opt->count() == 0) continue;
        kv[key] = subs[s].keys[i].is_flag ? "true" : values[s][i];
      }
      ConfigReader reader(std::move(kv));
      return subs[s].run(reader);
    } catch (const StaleArtifactError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kStale;
    } catch (const ConfigError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kInput;
    } catch (const ParseError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kInput;
    } catch (const std::exception& e) {
      std::cerr << "internal error: " << e.what() << '\n';
      return kInternal;
    }
  }
  return kInternal;
}
