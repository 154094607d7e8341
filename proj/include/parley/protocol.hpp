#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "parley/dataset.hpp"
#include "parley/error.hpp"
#include "parley/text.hpp"

namespace parley {

// ---------------------------------------------------------------------------
// Prompt templates.
//
// These strings are the protocol's contract: rendering must be a pure slot
// substitution so that collapsing the instantiated values back to their
// placeholders reproduces the template bytes exactly (the golden-file tests
// pin this). Note the typographic quotes around embedded responses and the
// apostrophe in "agents’" — they are part of the template.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kInitialTemplate =
    "What is the most appropriate {attribute} for describing this product?\n"
    "Context: Category: {category}, Title: {title}. Choose the best answer from: {options}.";

inline constexpr std::string_view kDebateHeaderTemplate =
    "What is the most appropriate {attribute} for describing this product?\n"
    "Context: Category: {category}, Title: {title}.\n"
    "You are agent {agent_num}. Your previous response: “{previous_response_1}”.";

// Repeated once per other agent, in agent-index order.
inline constexpr std::string_view kDebateOtherTemplate =
    "Response from other agents: “{previous_response_2}”.";

inline constexpr std::string_view kDebateFooterTemplate =
    "Using other agents’ reasoning as advice, reconsider and choose the best option from: {options}.";

// Sent as a separate system-level message for hosted backends; never mixed
// into the user-turn template above. Asking for a delimited Answer line keeps
// outputs parseable without touching the debate prompt itself.
inline constexpr std::string_view kSystemPreamble =
    "You are a product analysis agent. Look at the product image and text, reason briefly, and "
    "finish with a line of the form \"Answer: <option>\" where <option> is copied exactly from "
    "the option list. State whether your decision is based on visual evidence, textual cues, or both.";

// Marker embedded in later-round prompts in place of a failed cell's output.
inline constexpr std::string_view kNoResponseMarker = "[no response]";

// Display form of an unparseable answer. In-memory the absence of a parsed
// option is represented by std::nullopt.
inline constexpr std::string_view kInvalidMarker = "[INVALID]";

enum class ModalityBasis { visual, textual, both, unstated };

inline const char* to_string(ModalityBasis b) {
  switch (b) {
    case ModalityBasis::visual: return "visual";
    case ModalityBasis::textual: return "textual";
    case ModalityBasis::both: return "both";
    case ModalityBasis::unstated: return "unstated";
  }
  return "unstated";
}

inline ModalityBasis modality_from_string(std::string_view s) {
  if (s == "visual") return ModalityBasis::visual;
  if (s == "textual") return ModalityBasis::textual;
  if (s == "both") return ModalityBasis::both;
  return ModalityBasis::unstated;
}

// One agent turn.
struct AgentResponse {
  int agent_index = 0;  // 0-based
  int round = 1;        // 1-based
  std::string raw_text;
  std::optional<std::string> parsed_option;  // nullopt = INVALID
  std::string reasoning;
  ModalityBasis modality_basis = ModalityBasis::unstated;
  double latency_s = 0.0;
  long tokens_in = 0;
  long tokens_out = 0;
  bool ok = true;          // false: backend failed for this cell
  std::string error;       // populated when !ok

  bool operator==(const AgentResponse&) const = default;
};

// Everything needed to instantiate one prompt.
struct PromptContext {
  std::string attribute;
  std::string category;
  std::string title;
  std::vector<std::string> options;
  int agent_num = 0;  // 1-based; unused for round-1 prompts
  std::string previous_response_self;
  std::vector<std::string> previous_responses_others;  // agent-index order
};

inline PromptContext prompt_context_for(const Sample& s) {
  PromptContext ctx;
  ctx.attribute = s.attribute;
  ctx.category = s.category;
  ctx.title = s.title;
  ctx.options = s.options;
  return ctx;
}

inline std::string render_options(const std::vector<std::string>& options) {
  return join(options, ", ");
}

inline Result<std::string> render_initial_prompt(const PromptContext& ctx) {
  if (ctx.options.empty()) return make_error(ErrorKind::argument, "render_initial_prompt: empty options list");
  std::string out(kInitialTemplate);
  out = replace_all(std::move(out), "{attribute}", ctx.attribute);
  out = replace_all(std::move(out), "{category}", ctx.category);
  out = replace_all(std::move(out), "{title}", ctx.title);
  out = replace_all(std::move(out), "{options}", render_options(ctx.options));
  return out;
}

inline Result<std::string> render_debate_prompt(const PromptContext& ctx) {
  if (ctx.options.empty()) return make_error(ErrorKind::argument, "render_debate_prompt: empty options list");
  if (ctx.agent_num < 1) return make_error(ErrorKind::argument, "render_debate_prompt: agent_num must be >= 1");
  if (ctx.previous_response_self.empty())
    return make_error(ErrorKind::argument, "render_debate_prompt: missing own previous response");
  if (ctx.previous_responses_others.empty())
    return make_error(ErrorKind::argument, "render_debate_prompt: no previous responses from other agents");

  std::string out(kDebateHeaderTemplate);
  out = replace_all(std::move(out), "{attribute}", ctx.attribute);
  out = replace_all(std::move(out), "{category}", ctx.category);
  out = replace_all(std::move(out), "{title}", ctx.title);
  out = replace_all(std::move(out), "{agent_num}", std::to_string(ctx.agent_num));
  out = replace_all(std::move(out), "{previous_response_1}", ctx.previous_response_self);
  for (const auto& other : ctx.previous_responses_others) {
    out += '\n';
    out += replace_all(std::string(kDebateOtherTemplate), "{previous_response_2}", other);
  }
  out += '\n';
  out += replace_all(std::string(kDebateFooterTemplate), "{options}", render_options(ctx.options));
  return out;
}

// ---------------------------------------------------------------------------
// Answer parsing.
// ---------------------------------------------------------------------------

struct ParsedAnswer {
  std::optional<std::string> option;  // nullopt = INVALID
  std::string reasoning;
  ModalityBasis basis = ModalityBasis::unstated;
};

namespace detail {

// "Answer: <value>" (case-insensitive key, optional leading list/emphasis
// decoration). Returns the value part, or nullopt.
inline std::optional<std::string_view> answer_field_value(std::string_view line) {
  size_t i = 0;
  while (i < line.size() && (is_ascii_space(line[i]) || line[i] == '*' || line[i] == '#' ||
                             line[i] == '-' || line[i] == '>'))
    ++i;
  static constexpr std::string_view key = "answer";
  if (line.size() - i < key.size()) return std::nullopt;
  for (size_t k = 0; k < key.size(); ++k) {
    char c = line[i + k];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + 0x20);
    if (c != key[k]) return std::nullopt;
  }
  i += key.size();
  while (i < line.size() && (is_ascii_space(line[i]) || line[i] == '*')) ++i;
  if (i >= line.size() || line[i] != ':') return std::nullopt;
  ++i;
  return line.substr(i);
}

// Strips surrounding quotes (ASCII and typographic) and trailing sentence
// punctuation from an answer-field value.
inline std::string strip_answer_decoration(std::string_view v) {
  std::string s = trim(v);
  auto drop_suffix = [&](std::string_view suf) {
    if (s.size() >= suf.size() && std::string_view(s).substr(s.size() - suf.size()) == suf) {
      s.erase(s.size() - suf.size());
      return true;
    }
    return false;
  };
  auto drop_prefix = [&](std::string_view pre) {
    if (starts_with(s, pre)) {
      s.erase(0, pre.size());
      return true;
    }
    return false;
  };
  bool changed = true;
  while (changed && !s.empty()) {
    changed = false;
    for (std::string_view q : {"\"", "'", "“", "”", "‘", "’", "*"}) {
      changed |= drop_prefix(q);
      changed |= drop_suffix(q);
    }
    for (std::string_view p : {".", "!", ",", ";", ":"}) changed |= drop_suffix(p);
    std::string t = trim(s);
    if (t.size() != s.size()) {
      s = std::move(t);
      changed = true;
    }
  }
  return s;
}

struct Span {
  size_t begin = 0;
  size_t end = 0;  // past-the-end; empty when begin == end
};

inline ModalityBasis detect_modality(std::string_view raw) {
  bool visual = false, textual = false;
  size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() && !std::isalpha(static_cast<unsigned char>(raw[i]))) ++i;
    size_t b = i;
    while (i < raw.size() && std::isalpha(static_cast<unsigned char>(raw[i]))) ++i;
    if (b == i) continue;
    std::string word = fold_case(raw.substr(b, i - b));
    // Word-level match so "context" does not register as "text".
    if (starts_with(word, "image") || starts_with(word, "visual") || starts_with(word, "picture") ||
        starts_with(word, "photo"))
      visual = true;
    if (word == "text" || word == "texts" || starts_with(word, "textual") || starts_with(word, "title"))
      textual = true;
  }
  if (visual && textual) return ModalityBasis::both;
  if (visual) return ModalityBasis::visual;
  if (textual) return ModalityBasis::textual;
  return ModalityBasis::unstated;
}

}  // namespace detail

// Maps raw model output to an option (or INVALID), the residual reasoning
// text, and the stated modality basis. Total and deterministic: any string
// maps to options ∪ {INVALID}; trailing whitespace never changes the result.
//
// Matching cascade:
//   1. a delimited "Answer:" field whose value canonically equals an option;
//   2. any full line canonically equal to an option;
//   3. a unique option appearing as a canonical substring of the output;
//   4. INVALID.
inline ParsedAnswer parse_answer(std::string_view raw_in, std::span<const std::string> options) {
  std::string_view raw = trim_trailing_view(raw_in);
  ParsedAnswer result;
  result.basis = detail::detect_modality(raw);

  std::vector<std::string> canon(options.size());
  for (size_t i = 0; i < options.size(); ++i) canon[i] = canonicalize(options[i]);

  // Lines with their byte offsets in raw.
  struct Line {
    std::string_view text;
    size_t begin;
  };
  std::vector<Line> lines;
  {
    size_t start = 0;
    while (start <= raw.size()) {
      size_t nl = raw.find('\n', start);
      size_t end = nl == std::string_view::npos ? raw.size() : nl;
      lines.push_back({raw.substr(start, end - start), start});
      if (nl == std::string_view::npos) break;
      start = nl + 1;
    }
  }

  auto finish = [&](std::optional<size_t> opt_index, detail::Span span) {
    if (opt_index) result.option = options[*opt_index];
    std::string reasoning;
    reasoning.reserve(raw.size());
    reasoning.append(raw.substr(0, span.begin));
    reasoning.append(raw.substr(span.end));
    result.reasoning = trim(reasoning);
    return result;
  };

  // Rule 1: delimited answer field.
  for (const auto& line : lines) {
    auto value = detail::answer_field_value(line.text);
    if (!value) continue;
    std::string candidate = canonicalize(detail::strip_answer_decoration(*value));
    if (candidate.empty()) continue;
    for (size_t i = 0; i < canon.size(); ++i) {
      if (candidate == canon[i]) {
        size_t end = line.begin + line.text.size();
        if (end < raw.size()) ++end;  // swallow the newline
        return finish(i, {line.begin, end});
      }
    }
  }

  // Rule 2: a full line equal to an option.
  for (const auto& line : lines) {
    std::string c = canonicalize(line.text);
    if (c.empty()) continue;
    for (size_t i = 0; i < canon.size(); ++i) {
      if (c == canon[i]) {
        size_t end = line.begin + line.text.size();
        if (end < raw.size()) ++end;
        return finish(i, {line.begin, end});
      }
    }
  }

  // Rule 3: unique option substring. fold_case is length preserving, so
  // folded offsets map 1:1 onto raw.
  {
    std::string folded = fold_case(raw);
    std::optional<size_t> match;
    size_t match_pos = 0;
    int matched_options = 0;
    for (size_t i = 0; i < canon.size(); ++i) {
      if (canon[i].empty()) continue;
      size_t pos = folded.find(canon[i]);
      if (pos == std::string::npos) continue;
      ++matched_options;
      match = i;
      match_pos = pos;
    }
    if (matched_options == 1) return finish(match, {match_pos, match_pos + canon[*match].size()});
  }

  return finish(std::nullopt, {0, 0});
}

// ---------------------------------------------------------------------------
// Transcript.
// ---------------------------------------------------------------------------

// Full record of one debated sample: every response and every rendered
// prompt, indexed [round-1][agent]. Self-contained for replay and scoring.
struct Transcript {
  std::string scenario_id;
  uint64_t seed = 0;  // run seed the cell seeds were derived from
  Sample sample;
  int agent_count = 0;
  std::vector<std::vector<AgentResponse>> rounds;          // [round-1][agent]
  std::vector<std::vector<std::string>> prompts;           // same shape

  int completed_rounds() const { return static_cast<int>(rounds.size()); }

  const AgentResponse& response(int agent_index, int round) const {
    return rounds.at(static_cast<size_t>(round - 1)).at(static_cast<size_t>(agent_index));
  }
  const std::string& prompt(int agent_index, int round) const {
    return prompts.at(static_cast<size_t>(round - 1)).at(static_cast<size_t>(agent_index));
  }

  bool operator==(const Transcript&) const = default;
};

// Structural invariants every persisted transcript must satisfy.
inline Status validate_transcript(const Transcript& t) {
  if (t.agent_count < 1) return make_error(ErrorKind::schema, "transcript: agent_count < 1");
  if (t.rounds.empty()) return make_error(ErrorKind::schema, "transcript: no rounds");
  if (t.rounds.size() != t.prompts.size())
    return make_error(ErrorKind::schema, "transcript: rounds/prompts shape mismatch");
  std::vector<std::string> canon;
  canon.reserve(t.sample.options.size());
  for (const auto& o : t.sample.options) canon.push_back(canonicalize(o));
  for (size_t r = 0; r < t.rounds.size(); ++r) {
    if (t.rounds[r].size() != static_cast<size_t>(t.agent_count) ||
        t.prompts[r].size() != static_cast<size_t>(t.agent_count))
      return make_error(ErrorKind::schema, "transcript: incomplete round " + std::to_string(r + 1));
    for (size_t a = 0; a < t.rounds[r].size(); ++a) {
      const AgentResponse& resp = t.rounds[r][a];
      if (resp.agent_index != static_cast<int>(a) || resp.round != static_cast<int>(r + 1))
        return make_error(ErrorKind::schema, "transcript: cell index mismatch");
      if (resp.latency_s < 0 || resp.tokens_in < 0 || resp.tokens_out < 0)
        return make_error(ErrorKind::schema, "transcript: negative latency or token count");
      if (resp.parsed_option) {
        std::string c = canonicalize(*resp.parsed_option);
        bool found = false;
        for (const auto& co : canon) found |= (co == c);
        if (!found) return make_error(ErrorKind::schema, "transcript: parsed option not in sample options");
      }
    }
  }
  return Status::ok_status();
}

}  // namespace parley
