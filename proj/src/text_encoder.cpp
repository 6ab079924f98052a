#include "changediff/text_encoder.hpp"

#include <cmath>
#include <limits>

#include "changediff/errors.hpp"
#include "changediff/rng.hpp"

namespace changediff {

Tensor sinusoidal_code(double position, int dim) {
  Tensor code({dim});
  int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    code.data[2 * i] = std::sin(position * freq);
    code.data[2 * i + 1] = std::cos(position * freq);
  }
  if (dim % 2) code.data[dim - 1] = std::sin(position);
  return code;
}

Tokenizer::Tokenizer(std::vector<std::string> class_names)
    : class_names_(std::move(class_names)) {
  for (const auto& n : class_names_)
    if (!valid_class_name(n))
      fail(ErrorKind::Palette, "class name is not a valid token: '" + n + "'");
  vocab_ = {"A", "remote", "sensing", "photo", "with", "(", ")", ":"};
  for (const auto& n : class_names_) vocab_.push_back(n);
  for (int i = 0; i <= 100; ++i) vocab_.push_back(format_ratio(i / 100.0));
  ratio_values_.assign(vocab_.size(), std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i <= 100; ++i)
    ratio_values_[vocab_.size() - 101 + i] = i / 100.0;
}

int Tokenizer::lookup(const std::string& token) const {
  for (size_t i = 0; i < vocab_.size(); ++i)
    if (vocab_[i] == token) return static_cast<int>(i);
  return -1;
}

std::vector<int> Tokenizer::encode(const TextPrompt& prompt) const {
  if (prompt.tokenizer_id != id())
    fail(ErrorKind::Registry, "prompt tokenizer '" + prompt.tokenizer_id +
                                  "' does not match '" + id() + "'");
  std::vector<int> ids;
  ids.reserve(prompt.tokens.size());
  for (const auto& tok : prompt.tokens) {
    int tid = lookup(tok);
    if (tid < 0) fail(ErrorKind::Parse, "token not in vocabulary: '" + tok + "'");
    ids.push_back(tid);
  }
  return ids;
}

bool Tokenizer::is_ratio_token(int token_id) const {
  return !std::isnan(ratio_values_.at(token_id));
}

double Tokenizer::ratio_value(int token_id) const { return ratio_values_.at(token_id); }

TextEncoder::TextEncoder(const Tokenizer& tokenizer, int text_dim, int context_len,
                         uint64_t init_seed)
    : text_dim_(text_dim), context_len_(context_len) {
  Tensor table({tokenizer.vocab_size(), text_dim});
  Rng rng(derive_seed(init_seed, 0x74657874));  // "text"
  for (auto& v : table.data) v = 0.02 * rng.normal();
  table_ = ad::Param("text.table", std::move(table));
}

ad::Var TextEncoder::encode(ad::Tape& tape, const Tokenizer& tokenizer,
                            const TextPrompt& prompt) {
  std::vector<int> ids = tokenizer.encode(prompt);
  if (static_cast<int>(ids.size()) > context_len_)
    fail(ErrorKind::Config, "prompt has " + std::to_string(ids.size()) +
                                " tokens, context length is " +
                                std::to_string(context_len_));
  int n = static_cast<int>(ids.size());
  Tensor fixed({n, text_dim_});
  for (int i = 0; i < n; ++i) {
    Tensor pos = sinusoidal_code(static_cast<double>(i), text_dim_);
    for (int j = 0; j < text_dim_; ++j) fixed.data[i * text_dim_ + j] = pos.data[j];
    if (tokenizer.is_ratio_token(ids[i])) {
      // Ratio literals carry their numeric value on the positional scale.
      Tensor val = sinusoidal_code(tokenizer.ratio_value(ids[i]) * 100.0, text_dim_);
      for (int j = 0; j < text_dim_; ++j) fixed.data[i * text_dim_ + j] += val.data[j];
    }
  }
  ad::Var rows = ad::gather_rows(tape, tape.use(table_), ids);
  return ad::add(tape, rows, tape.input(std::move(fixed)));
}

}  // namespace changediff
