#pragma once

// Hand-rolled random generators for property tests.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "polyscore/model.hpp"

namespace gen {

using Rng = std::mt19937_64;

template <typename T = double>
polyscore::Tensor<T> tensor(polyscore::Shape shape, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  std::vector<T> d(polyscore::shape_numel(shape));
  for (auto& v : d) v = static_cast<T>(n(rng));
  return polyscore::Tensor<T>(std::move(shape), std::move(d));
}

inline std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline std::vector<std::string> words(std::size_t n, const std::string& stem = "w") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(stem + std::to_string(i));
  return out;
}

inline polyscore::Vocabulary vocab(std::size_t n_words) { return polyscore::Vocabulary::from_tokens(words(n_words)); }

inline std::string sentence(Rng& rng, const polyscore::Vocabulary& v, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += v.token(static_cast<polyscore::TokenId>(uniform(rng, polyscore::Vocabulary::kReserved, v.size() - 1)));
  }
  return s;
}

// Arbitrary printable text including punctuation, case and odd spacing.
inline std::string messy_text(Rng& rng, std::size_t max_chars) {
  static const std::string alphabet = "abcXYZ  \t019.,!?-_'\"";
  std::string s;
  const std::size_t n = uniform(rng, 0, max_chars);
  for (std::size_t i = 0; i < n; ++i) s += alphabet[uniform(rng, 0, alphabet.size() - 1)];
  return s;
}

inline polyscore::ModelConfig desk_config(std::size_t vocab_size, double dropout = 0.0) {
  polyscore::ModelConfig c;
  c.vocab_size = vocab_size;
  c.dropout_p = dropout;
  return c;
}

// Parameters perturbed away from their init so that layer-norm gains,
// biases and zero-initialised vectors all take generic values.
inline void jitter(polyscore::Model& m, Rng& rng, double stddev = 0.1) {
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& [_, t] : m.params)
    for (double& v : t.data()) v += n(rng);
}

}  // namespace gen
