#include "changediff/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "changediff/errors.hpp"
#include "changediff/rng.hpp"

namespace changediff {

std::string format_ratio(double ratio) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", ratio);
  return buf;
}

std::vector<std::string> lex_prompt(const std::string& text) {
  std::vector<std::string> tokens;
  size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == '(' || c == ')' || c == ':') {
      tokens.emplace_back(1, c);
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) &&
           text[j] != '(' && text[j] != ')' && text[j] != ':')
      ++j;
    tokens.push_back(text.substr(i, j - i));
    i = j;
  }
  return tokens;
}

namespace {

const std::vector<std::string>& prefix_tokens() {
  static const std::vector<std::string> toks = {"A", "remote", "sensing", "photo",
                                                "with"};
  return toks;
}

void validate_distribution(const ClassDistribution& dist) {
  for (const auto& p : dist.phrases) {
    if (!valid_class_name(p.class_name))
      fail(ErrorKind::Data, "class name is not a valid token: '" + p.class_name + "'");
    if (!(p.ratio >= 0.0 && p.ratio <= 1.0 + 1e-9))
      fail(ErrorKind::Data, "ratio out of [0,1] for class '" + p.class_name + "'");
  }
  for (size_t i = 0; i < dist.phrases.size(); ++i)
    for (size_t j = i + 1; j < dist.phrases.size(); ++j)
      if (dist.phrases[i].class_name == dist.phrases[j].class_name)
        fail(ErrorKind::Data, "duplicate class in distribution: '" +
                                  dist.phrases[i].class_name + "'");
}

bool is_ratio_literal(const std::string& tok) {
  auto dot = tok.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 >= tok.size()) return false;
  for (size_t i = 0; i < tok.size(); ++i) {
    if (i == dot) continue;
    if (!std::isdigit(static_cast<unsigned char>(tok[i]))) return false;
  }
  return true;
}

}  // namespace

TextPrompt build_prompt(const ClassDistribution& dist, uint64_t order_seed) {
  if (dist.phrases.empty()) fail(ErrorKind::Degenerate, "empty distribution");
  validate_distribution(dist);

  std::vector<Phrase> phrases = dist.phrases;
  Rng rng(order_seed);
  for (size_t i = phrases.size(); i > 1; --i)
    std::swap(phrases[i - 1], phrases[rng.uniform_index(static_cast<uint32_t>(i))]);

  TextPrompt prompt;
  prompt.text = kPromptPrefix;
  prompt.tokens = prefix_tokens();
  for (size_t k = 0; k < phrases.size(); ++k) {
    const Phrase& p = phrases[k];
    std::string ratio = format_ratio(p.ratio);
    if (k > 0) prompt.text += ' ';
    prompt.text += '(' + p.class_name + ": " + ratio + ')';

    PhraseSpan span;
    span.class_name = p.class_name;
    int base = static_cast<int>(prompt.tokens.size());
    prompt.tokens.emplace_back("(");
    span.name_begin = base + 1;
    span.name_end = base + 2;
    prompt.tokens.push_back(p.class_name);
    prompt.tokens.emplace_back(":");
    span.ratio_begin = base + 3;
    span.ratio_end = base + 4;
    prompt.tokens.push_back(ratio);
    prompt.tokens.emplace_back(")");
    prompt.spans.push_back(std::move(span));
  }
  return prompt;
}

ClassDistribution parse_prompt(const std::string& text, const ClassPalette& palette) {
  std::vector<std::string> tokens = lex_prompt(text);
  const auto& prefix = prefix_tokens();
  if (tokens.size() < prefix.size() ||
      !std::equal(prefix.begin(), prefix.end(), tokens.begin()))
    fail(ErrorKind::Parse,
         std::string("prompt must begin with '") + kPromptPrefix + "'");

  ClassDistribution dist;
  size_t i = prefix.size();
  if (i == tokens.size()) fail(ErrorKind::Parse, "prompt contains no phrases");
  while (i < tokens.size()) {
    size_t at = i;
    auto phrase_fail = [&](const std::string& what) {
      fail(ErrorKind::Parse, "phrase starting at token " + std::to_string(at) + ": " +
                                 what);
    };
    if (tokens[i] != "(") phrase_fail("expected '(', got '" + tokens[i] + "'");
    if (i + 4 >= tokens.size()) phrase_fail("truncated phrase");
    const std::string& name = tokens[i + 1];
    if (!valid_class_name(name)) phrase_fail("invalid class name '" + name + "'");
    if (tokens[i + 2] != ":") phrase_fail("expected ':', got '" + tokens[i + 2] + "'");
    const std::string& ratio_tok = tokens[i + 3];
    if (!is_ratio_literal(ratio_tok))
      phrase_fail("invalid ratio literal '" + ratio_tok + "'");
    if (tokens[i + 4] != ")") phrase_fail("expected ')', got '" + tokens[i + 4] + "'");

    if (!palette.has_name(name)) phrase_fail("unknown class name '" + name + "'");
    double ratio = std::strtod(ratio_tok.c_str(), nullptr);
    if (!(ratio >= 0.0 && ratio <= 1.0))
      phrase_fail("ratio " + ratio_tok + " outside [0,1]");
    if (dist.contains(name)) phrase_fail("duplicate class '" + name + "'");
    dist.phrases.push_back({name, ratio});
    i += 5;
  }
  if (dist.total() > 1.0 + 1e-9)
    fail(ErrorKind::Parse, "phrase ratios sum to " + std::to_string(dist.total()) +
                               " > 1");
  return dist;
}

ClassDistribution amplify_ratios(const ClassDistribution& dist) {
  validate_distribution(dist);
  double s = dist.total();
  if (!(s > 0.0))
    fail(ErrorKind::Degenerate, "distribution has zero total mass");
  if (s > 1.0 + 1e-9)
    fail(ErrorKind::Degenerate,
         "distribution mass " + std::to_string(s) + " exceeds 1");
  ClassDistribution out = dist;
  for (auto& p : out.phrases) p.ratio /= s;
  return out;
}

const char* event_mode_name(EventMode mode) {
  switch (mode) {
    case EventMode::RatioReshape: return "ratio_reshape";
    case EventMode::ClassExpand: return "class_expand";
    case EventMode::ClassReduce: return "class_reduce";
  }
  return "unknown";
}

EventMode event_mode_from_name(const std::string& name) {
  if (name == "ratio_reshape") return EventMode::RatioReshape;
  if (name == "class_expand") return EventMode::ClassExpand;
  if (name == "class_reduce") return EventMode::ClassReduce;
  fail(ErrorKind::Parse, "unknown event mode: '" + name + "'");
}

void EventSpec::validate() const {
  if (!(perturbation >= 0.0 && perturbation <= 1.0))
    fail(ErrorKind::Config, "event perturbation must be in [0,1]");
  if (!(new_class_ratio_lo > 0.0 && new_class_ratio_lo < new_class_ratio_hi &&
        new_class_ratio_hi < 1.0))
    fail(ErrorKind::Config, "event ratio range must satisfy 0 < lo < hi < 1");
}

ClassDistribution apply_event(const ClassDistribution& dist, const EventSpec& spec,
                              const ClassPalette& palette) {
  spec.validate();
  validate_distribution(dist);
  const char* mode = event_mode_name(spec.mode);
  if (std::abs(dist.total() - 1.0) > 1e-9)
    fail(ErrorKind::Event, std::string(mode) +
                               " requires a full-coverage distribution (sum = 1)");
  for (const auto& p : dist.phrases)
    if (!palette.has_name(p.class_name))
      fail(ErrorKind::Event, std::string(mode) + ": class '" + p.class_name +
                                 "' absent from palette");

  Rng rng(spec.seed);
  ClassDistribution out = dist;

  switch (spec.mode) {
    case EventMode::RatioReshape: {
      if (out.phrases.empty())
        fail(ErrorKind::Event, "ratio_reshape requires at least one phrase");
      double sum = 0.0;
      for (auto& p : out.phrases) {
        double r = p.ratio + rng.uniform(-spec.perturbation, spec.perturbation);
        p.ratio = std::clamp(r, kReshapeFloor, 1.0);
        sum += p.ratio;
      }
      for (auto& p : out.phrases) p.ratio /= sum;
      break;
    }
    case EventMode::ClassExpand: {
      std::vector<const PaletteEntry*> absent;
      for (const auto& e : palette.entries())
        if (!out.contains(e.name)) absent.push_back(&e);
      if (absent.empty())
        fail(ErrorKind::Event,
             "class_expand inapplicable: every palette class already present");
      const PaletteEntry* pick =
          absent[rng.uniform_index(static_cast<uint32_t>(absent.size()))];
      double fresh = rng.uniform(spec.new_class_ratio_lo, spec.new_class_ratio_hi);
      for (auto& p : out.phrases) p.ratio *= (1.0 - fresh);
      out.phrases.push_back({pick->name, fresh});
      break;
    }
    case EventMode::ClassReduce: {
      if (out.phrases.size() < 2)
        fail(ErrorKind::Event,
             "class_reduce inapplicable: needs at least two phrases");
      uint32_t drop = rng.uniform_index(static_cast<uint32_t>(out.phrases.size()));
      out.phrases.erase(out.phrases.begin() + drop);
      double sum = out.total();
      for (auto& p : out.phrases) p.ratio /= sum;
      break;
    }
  }
  return out;
}

std::string format_event_spec(const EventSpec& spec) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "mode=%s perturbation=%.17g range=%.17g,%.17g seed=%llu",
                event_mode_name(spec.mode), spec.perturbation, spec.new_class_ratio_lo,
                spec.new_class_ratio_hi,
                static_cast<unsigned long long>(spec.seed));
  return buf;
}

EventSpec parse_event_spec(const std::string& line) {
  EventSpec spec;
  std::istringstream ss(line);
  std::string field;
  bool have_mode = false, have_pert = false, have_range = false, have_seed = false;
  while (ss >> field) {
    auto eq = field.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::Parse, "event spec field without '=': '" + field + "'");
    std::string key = field.substr(0, eq);
    std::string value = field.substr(eq + 1);
    if (key == "mode") {
      spec.mode = event_mode_from_name(value);
      have_mode = true;
    } else if (key == "perturbation") {
      spec.perturbation = std::strtod(value.c_str(), nullptr);
      have_pert = true;
    } else if (key == "range") {
      auto comma = value.find(',');
      if (comma == std::string::npos)
        fail(ErrorKind::Parse, "event range needs '<lo>,<hi>': '" + value + "'");
      spec.new_class_ratio_lo = std::strtod(value.substr(0, comma).c_str(), nullptr);
      spec.new_class_ratio_hi = std::strtod(value.substr(comma + 1).c_str(), nullptr);
      have_range = true;
    } else if (key == "seed") {
      spec.seed = std::strtoull(value.c_str(), nullptr, 10);
      have_seed = true;
    } else {
      fail(ErrorKind::Parse, "unknown event spec key: '" + key + "'");
    }
  }
  if (!(have_mode && have_pert && have_range && have_seed))
    fail(ErrorKind::Parse, "event spec missing fields: '" + line + "'");
  spec.validate();
  return spec;
}

}  // namespace changediff
