#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "changediff/codec.hpp"

namespace changediff {

// Fixed template prefix for every prompt.
inline constexpr const char* kPromptPrefix = "A remote sensing photo with ";

// Lexer version identifier carried by prompts and checkpoints.
inline constexpr const char* kTokenizerId = "mcdg-lex-v1";

// Token indices below are positions in the lexed token sequence of `text`.
struct PhraseSpan {
  std::string class_name;
  int name_begin = 0, name_end = 0;    // [begin, end)
  int ratio_begin = 0, ratio_end = 0;  // [begin, end)
};

struct TextPrompt {
  std::string text;
  std::vector<std::string> tokens;
  std::vector<PhraseSpan> spans;  // textual order, one per phrase
  std::string tokenizer_id = kTokenizerId;
};

// Splits prompt text into tokens: template words, `(`, `)`, `:`, class names
// and ratio literals each become one token.
std::vector<std::string> lex_prompt(const std::string& text);

// Serializes each phrase as `(name: d.dd)` after the template prefix, phrases
// shuffled by order_seed, joined by single spaces. Ratios are fixed-point with
// two decimals.
TextPrompt build_prompt(const ClassDistribution& dist, uint64_t order_seed);

// Inverse of build_prompt: phrases in textual order, ratios parsed as decimal
// fractions. Unknown class names and out-of-range ratios are errors.
ClassDistribution parse_prompt(const std::string& text, const ClassPalette& palette);

// Scales every ratio by 1/sum so the output covers the full frame.
ClassDistribution amplify_ratios(const ClassDistribution& dist);

std::string format_ratio(double ratio);  // two-decimal fixed point

enum class EventMode { RatioReshape, ClassExpand, ClassReduce };

const char* event_mode_name(EventMode mode);
EventMode event_mode_from_name(const std::string& name);

// One time-varying land-cover event. Randomness is a pure function of seed.
struct EventSpec {
  EventMode mode = EventMode::RatioReshape;
  double perturbation = 0.1;       // reshape half-width, in [0, 1]
  double new_class_ratio_lo = 0.05;  // expand range, 0 < lo < hi < 1
  double new_class_ratio_hi = 0.30;
  uint64_t seed = 0;

  void validate() const;
};

// Applies one event to a full-coverage distribution (sumphrase ratios = 1):
//   reshape — per-phrase uniform perturbation in [-p, p], clamp to [eps, 1],
//             renormalize;
//   expand  — add one absent palette class at a uniform ratio from the range,
//             scale existing phrases by (1 - new ratio);
//   reduce  — drop one phrase uniformly, renormalize the rest.
ClassDistribution apply_event(const ClassDistribution& dist, const EventSpec& spec,
                              const ClassPalette& palette);

// Reshape clamp floor; keeps every surviving class representable at the
// two-decimal serialization.
inline constexpr double kReshapeFloor = 0.01;

// Single-line form stored in dataset manifests:
//   mode=<m> perturbation=<p> range=<lo>,<hi> seed=<s>
std::string format_event_spec(const EventSpec& spec);
EventSpec parse_event_spec(const std::string& line);

}  // namespace changediff
