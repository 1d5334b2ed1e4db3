#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace polyscore {

using TokenId = std::int32_t;

/// Word-level vocabulary with four reserved ids. The remaining ids are
/// assigned by descending corpus frequency, ties broken lexicographically.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kSep = 1;  // boundary token [S]
  static constexpr TokenId kMask = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocabulary();

  static Vocabulary build(const std::vector<std::string>& corpus, std::size_t max_size);
  static Vocabulary from_tokens(const std::vector<std::string>& words);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool contains(std::string_view token) const;
  static bool is_special(TokenId id) { return id >= 0 && id < static_cast<TokenId>(kReserved); }

  std::vector<TokenId> encode_words(std::string_view text) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Lowercased whitespace-separated words.
std::vector<std::string> tokenize(std::string_view text);

/// One encoder input: token ids with their position/segment ids and a mask
/// marking real (non-pad) positions. All four sequences share one length.
struct TokenizedPair {
  std::vector<TokenId> token_ids;
  std::vector<TokenId> position_ids;
  std::vector<TokenId> segment_ids;
  std::vector<std::uint8_t> pad_mask;

  std::size_t size() const { return token_ids.size(); }
  std::size_t real_length() const;
  // Appends pad positions up to `length`.
  TokenizedPair padded(std::size_t length) const;
  bool operator==(const TokenizedPair&) const = default;
};

enum class KeepSide { Head, Tail };

// [S] input [S] label. Over-long input is cut from the front (oldest tokens
// first), then the label loses its tail.
TokenizedPair encode_pair(std::string_view input, std::string_view label, const Vocabulary& vocab,
                          std::size_t max_len);

// [S] text, every segment id equal to `segment`. `keep` chooses which end
// survives truncation: contexts keep their most recent tokens.
TokenizedPair encode_single(std::string_view text, const Vocabulary& vocab, std::size_t max_len, TokenId segment,
                            KeepSide keep = KeepSide::Tail);

struct Example {
  std::vector<std::string> context;
  std::vector<std::string> candidates;
  std::size_t label_index = 0;

  const std::string& gold() const { return candidates.at(label_index); }
};

inline constexpr std::string_view kTurnSeparator = "__turn__";

// Dialogue turns joined by the turn separator word.
std::string flatten_context(const std::vector<std::string>& turns);

// One Example per JSON line with fields context / candidates / label.
std::vector<Example> load_jsonl(const std::filesystem::path& path);
Example parse_example(std::string_view line, std::size_t line_number);
void save_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples);

// Adds one example per earlier context turn, treating that turn as the
// response to the turns before it.
std::vector<Example> augment_history(const std::vector<Example>& examples);

// Every string a vocabulary should be built over: flattened contexts and
// all candidates.
std::vector<std::string> corpus_strings(const std::vector<Example>& examples);

}  // namespace polyscore
