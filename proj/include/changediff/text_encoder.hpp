#pragma once

#include <string>
#include <vector>

#include "changediff/autodiff.hpp"
#include "changediff/prompt.hpp"

namespace changediff {

// Closed vocabulary over the prompt grammar: template words, punctuation,
// palette class names, and the 101 two-decimal ratio literals.
class Tokenizer {
 public:
  explicit Tokenizer(std::vector<std::string> class_names);

  const std::string& id() const { return kTokenizerIdStr; }
  int vocab_size() const { return static_cast<int>(vocab_.size()); }
  const std::vector<std::string>& class_names() const { return class_names_; }

  // Maps prompt tokens to vocabulary ids; unknown tokens and tokenizer-id
  // mismatches are errors.
  std::vector<int> encode(const TextPrompt& prompt) const;

  bool is_ratio_token(int token_id) const;
  double ratio_value(int token_id) const;  // only valid for ratio tokens
  const std::string& token_text(int token_id) const { return vocab_.at(token_id); }

 private:
  inline static const std::string kTokenizerIdStr = kTokenizerId;
  std::vector<std::string> class_names_;
  std::vector<std::string> vocab_;
  std::vector<double> ratio_values_;  // NaN for non-ratio tokens
  int lookup(const std::string& token) const;
};

// Desk-scale text encoder: trainable embedding table + fixed sinusoidal
// position code, plus a fixed sinusoidal value code on ratio literals so
// numerically close ratios embed close. Pluggable: anything producing one
// row per token can stand in.
class TextEncoder {
 public:
  TextEncoder(const Tokenizer& tokenizer, int text_dim, int context_len,
              uint64_t init_seed);

  // [n_tokens x text_dim]; n_tokens beyond context_len is an error.
  ad::Var encode(ad::Tape& tape, const Tokenizer& tokenizer,
                 const TextPrompt& prompt);

  int text_dim() const { return text_dim_; }
  int context_len() const { return context_len_; }
  std::vector<ad::Param*> params() { return {&table_}; }

 private:
  int text_dim_;
  int context_len_;
  ad::Param table_;  // [vocab x text_dim]
};

// Sinusoidal code used for token positions, ratio values, and timesteps.
Tensor sinusoidal_code(double position, int dim);

}  // namespace changediff
