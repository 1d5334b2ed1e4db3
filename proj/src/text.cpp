#include "polyscore/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "polyscore/error.hpp"

namespace polyscore {

namespace {
const char* const kReservedTokens[] = {"[PAD]", "[S]", "[MASK]", "[UNK]"};
}

Vocabulary::Vocabulary() {
  for (const char* t : kReservedTokens) add(t);
}

void Vocabulary::add(std::string token) {
  const auto id = static_cast<TokenId>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, std::size_t max_size) {
  if (max_size < kReserved + 1) throw ContractError("vocabulary max_size must be at least 5");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : corpus)
    for (auto& w : tokenize(line)) ++counts[w];
  if (counts.empty()) throw ParseError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (auto& [w, _] : ranked) {
    if (v.size() >= max_size) break;
    if (v.contains(w)) continue;  // a corpus word spelled like a reserved token
    v.add(w);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& words) {
  Vocabulary v;
  for (const auto& w : words) {
    if (w.empty() || v.contains(w)) throw ParseError("vocabulary entry '" + w + "' is empty or duplicated");
    v.add(w);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vocabulary file " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    words.push_back(line);
  }
  return from_tokens(words);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write vocabulary file " + path.string());
  for (std::size_t i = kReserved; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.contains(std::string(token)); }

std::vector<TokenId> Vocabulary::encode_words(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : tokenize(text)) ids.push_back(id(w));
  return ids;
}

std::size_t TokenizedPair::real_length() const {
  return static_cast<std::size_t>(std::count(pad_mask.begin(), pad_mask.end(), std::uint8_t{1}));
}

TokenizedPair TokenizedPair::padded(std::size_t length) const {
  TokenizedPair out = *this;
  for (std::size_t i = size(); i < length; ++i) {
    out.token_ids.push_back(Vocabulary::kPad);
    out.position_ids.push_back(static_cast<TokenId>(i));
    out.segment_ids.push_back(0);
    out.pad_mask.push_back(0);
  }
  return out;
}

namespace {

void append_side(TokenizedPair& tp, const std::vector<TokenId>& ids, TokenId segment) {
  const auto push = [&](TokenId id) {
    tp.position_ids.push_back(static_cast<TokenId>(tp.token_ids.size()));
    tp.token_ids.push_back(id);
    tp.segment_ids.push_back(segment);
    tp.pad_mask.push_back(1);
  };
  push(Vocabulary::kSep);
  for (TokenId id : ids) push(id);
}

std::vector<TokenId> keep_tail(std::vector<TokenId> ids, std::size_t n) {
  if (ids.size() > n) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(n));
  return ids;
}

std::vector<TokenId> keep_head(std::vector<TokenId> ids, std::size_t n) {
  if (ids.size() > n) ids.resize(n);
  return ids;
}

}  // namespace

TokenizedPair encode_pair(std::string_view input, std::string_view label, const Vocabulary& vocab,
                          std::size_t max_len) {
  if (max_len < 4) throw ContractError("encode_pair: max_len must be at least 4");
  auto in = vocab.encode_words(input);
  auto lb = vocab.encode_words(label);
  const std::size_t budget = max_len - 2;
  if (in.size() + lb.size() > budget) {
    const std::size_t reserve_in = in.empty() ? 0 : 1;
    const std::size_t label_keep = std::min(lb.size(), budget - reserve_in);
    const std::size_t input_keep = std::min(in.size(), budget - label_keep);
    in = keep_tail(std::move(in), input_keep);
    lb = keep_head(std::move(lb), label_keep);
  }
  TokenizedPair tp;
  append_side(tp, in, 0);
  append_side(tp, lb, 1);
  return tp;
}

TokenizedPair encode_single(std::string_view text, const Vocabulary& vocab, std::size_t max_len, TokenId segment,
                            KeepSide keep) {
  if (max_len < 2) throw ContractError("encode_single: max_len must be at least 2");
  if (segment != 0 && segment != 1) throw ContractError("encode_single: segment must be 0 or 1");
  auto ids = vocab.encode_words(text);
  ids = keep == KeepSide::Tail ? keep_tail(std::move(ids), max_len - 1) : keep_head(std::move(ids), max_len - 1);
  TokenizedPair tp;
  append_side(tp, ids, segment);
  return tp;
}

std::string flatten_context(const std::vector<std::string>& turns) {
  std::string out;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    if (i) {
      out += ' ';
      out += kTurnSeparator;
      out += ' ';
    }
    out += turns[i];
  }
  return out;
}

Example parse_example(std::string_view line, std::size_t line_number) {
  const std::string where = "line " + std::to_string(line_number) + ": ";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(where + "invalid JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw ParseError(where + "expected a JSON object");
  for (const char* field : {"context", "candidates", "label"}) {
    if (!j.contains(field)) throw ParseError(where + "missing field '" + field + "'");
  }
  Example ex;
  try {
    ex.context = j.at("context").get<std::vector<std::string>>();
    ex.candidates = j.at("candidates").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(where + "'context' and 'candidates' must be arrays of strings");
  }
  const auto& label = j.at("label");
  if (!label.is_number_integer()) throw ParseError(where + "'label' must be an integer");
  if (ex.candidates.empty()) throw ParseError(where + "'candidates' is empty");
  const auto idx = label.get<long long>();
  if (idx < 0 || static_cast<std::size_t>(idx) >= ex.candidates.size()) {
    throw ParseError(where + "label " + std::to_string(idx) + " out of range for " +
                     std::to_string(ex.candidates.size()) + " candidates");
  }
  ex.label_index = static_cast<std::size_t>(idx);
  return ex;
}

std::vector<Example> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_example(line, n));
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write dataset " + path.string());
  for (const auto& ex : examples) {
    nlohmann::json j{{"context", ex.context}, {"candidates", ex.candidates}, {"label", ex.label_index}};
    out << j.dump() << '\n';
  }
}

std::vector<Example> augment_history(const std::vector<Example>& examples) {
  std::vector<Example> out;
  for (const auto& ex : examples) {
    out.push_back(ex);
    for (std::size_t t = 1; t < ex.context.size(); ++t) {
      Example aug;
      aug.context.assign(ex.context.begin(), ex.context.begin() + static_cast<std::ptrdiff_t>(t));
      aug.candidates.push_back(ex.context[t]);
      for (std::size_t c = 0; c < ex.candidates.size(); ++c)
        if (c != ex.label_index) aug.candidates.push_back(ex.candidates[c]);
      aug.label_index = 0;
      out.push_back(std::move(aug));
    }
  }
  return out;
}

std::vector<std::string> corpus_strings(const std::vector<Example>& examples) {
  std::vector<std::string> out;
  for (const auto& ex : examples) {
    out.push_back(flatten_context(ex.context));
    out.insert(out.end(), ex.candidates.begin(), ex.candidates.end());
  }
  return out;
}

}  // namespace polyscore
