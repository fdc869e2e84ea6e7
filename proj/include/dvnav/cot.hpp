#pragma once

/**
 * Navigational chain-of-thought: prompt construction, parsing of sampled
 * model outputs into (Prediction, View match, Action) triples, ground-truth
 * label generation, and training-record formatting.
 */

#include <cctype>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dvnav/backend.hpp"
#include "dvnav/lexicon.hpp"
#include "dvnav/strings.hpp"
#include "dvnav/textualizer.hpp"
#include "dvnav/world.hpp"

namespace dvnav::cot {

struct CotError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The bundled in-context example demonstrating the reasoning format.
/// Overridable per run.
inline constexpr std::string_view kDefaultInContextExample =
    "Input: Instruction: Walk past the sofa and stop at the bathroom door. "
    "Observation: [A. stop, B. go forward to <a sofa>, C. turn right to <a bathroom door>]. "
    "History: Step 1. go forward to <a sofa>.\n"
    "Output: Prediction: bathroom door. View match: C supports the prediction. Action: C.";

/**
 * Byte-deterministic prompt layout: example block, blank line, Input block
 * with Instruction/Observation/History labels, then "Output:". History must
 * be the literal "none" at the first step.
 */
inline std::string build_nav_prompt(const std::string& instruction,
                                    const textual::ObservationDescription& observation,
                                    const std::string& history,
                                    std::string_view example = kDefaultInContextExample) {
  if (strutil::trim(instruction).empty()) throw CotError("build_nav_prompt: empty instruction");
  if (strutil::trim(history).empty()) throw CotError("build_nav_prompt: empty history (use \"none\")");
  if (strutil::trim(std::string(example)).empty()) throw CotError("build_nav_prompt: empty example");
  std::string prompt;
  prompt += example;
  prompt += "\n\nInput: Instruction: ";
  prompt += instruction;
  prompt += " Observation: ";
  prompt += observation.rendered;
  prompt += ". History: ";
  prompt += history;
  prompt += ".\nOutput:";
  return prompt;
}

struct CotTriple {
  std::string prediction;  // expected next landmark
  char view_match = 'A';   // option letter supporting the prediction
  char action = 'A';       // option letter to execute
  std::string raw;         // full model output

  friend bool operator==(const CotTriple&, const CotTriple&) = default;
};

struct CotParseError {
  enum class Kind { missing_field, invalid_letter };
  Kind kind = Kind::missing_field;
  std::string detail;  // field name or offending letter
  std::string raw;     // original text, for tracing

  std::string to_string() const {
    return (kind == Kind::missing_field ? "missing_field:" : "invalid_letter:") + detail;
  }
};

using CotParseResult = std::variant<CotTriple, CotParseError>;

inline bool parse_ok(const CotParseResult& r) { return std::holds_alternative<CotTriple>(r); }

namespace detail {

struct FieldSpans {
  std::size_t pred = std::string::npos;
  std::size_t vm = std::string::npos;
  std::size_t act = std::string::npos;
};

inline std::optional<char> take_letter_token(std::string_view text, std::size_t from,
                                             bool lenient) {
  std::size_t i = from;
  while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
  if (lenient) {  // tolerate wrappers like "(B)" or "*B*"
    while (i < text.size() && !std::isalnum(static_cast<unsigned char>(text[i]))) ++i;
  }
  if (i >= text.size()) return std::nullopt;
  const char c = text[i];
  if (!std::isalpha(static_cast<unsigned char>(c))) return std::nullopt;
  // Must be a standalone letter, not the start of a word.
  if (i + 1 < text.size() && std::isalnum(static_cast<unsigned char>(text[i + 1]))) {
    return std::nullopt;
  }
  return lenient ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : c;
}

inline std::optional<CotTriple> parse_pass(const std::string& raw, bool lenient,
                                           CotParseError& err) {
  static constexpr std::string_view kPred = "Prediction:";
  static constexpr std::string_view kVm = "View match:";
  static constexpr std::string_view kAct = "Action:";

  auto find = [&](std::string_view label, std::size_t from) {
    return lenient ? strutil::ifind(raw, label, from) : raw.find(label, from);
  };

  const std::size_t p_pred = find(kPred, 0);
  if (p_pred == std::string::npos) {
    err = {CotParseError::Kind::missing_field, "prediction", raw};
    return std::nullopt;
  }
  const std::size_t p_vm = find(kVm, p_pred + kPred.size());
  if (p_vm == std::string::npos) {
    err = {CotParseError::Kind::missing_field, "view_match", raw};
    return std::nullopt;
  }
  const std::size_t p_act = find(kAct, p_vm + kVm.size());
  if (p_act == std::string::npos) {
    err = {CotParseError::Kind::missing_field, "action", raw};
    return std::nullopt;
  }

  CotTriple triple;
  triple.raw = raw;

  std::string pred = strutil::trim(raw.substr(p_pred + kPred.size(), p_vm - p_pred - kPred.size()));
  while (!pred.empty() && (pred.back() == '.' || (lenient && std::ispunct(static_cast<unsigned char>(pred.back()))))) {
    pred.pop_back();
  }
  pred = strutil::trim(pred);
  if (pred.empty()) {
    err = {CotParseError::Kind::missing_field, "prediction", raw};
    return std::nullopt;
  }
  triple.prediction = pred;

  auto vm = take_letter_token(raw, p_vm + kVm.size(), lenient);
  if (!vm) {
    err = {CotParseError::Kind::missing_field, "view_match", raw};
    return std::nullopt;
  }
  triple.view_match = *vm;

  auto act = take_letter_token(raw, p_act + kAct.size(), lenient);
  if (!act) {
    err = {CotParseError::Kind::missing_field, "action", raw};
    return std::nullopt;
  }
  triple.action = *act;
  return triple;
}

}  // namespace detail

/**
 * Extracts the three labeled fields from a sampled output. The strict pass
 * requires exact labels; if it fails and strict_only is off, a lenient pass
 * accepts case-insensitive labels and stray punctuation. Letters are
 * validated against the observation. Never throws on malformed text; every
 * failure is a structured error carrying the raw text.
 */
inline CotParseResult parse_cot(const std::string& raw,
                                const textual::ObservationDescription& observation,
                                bool strict_only = false) {
  auto attempt = [&](bool lenient) -> CotParseResult {
    CotParseError err;
    auto triple = detail::parse_pass(raw, lenient, err);
    if (!triple) return err;
    if (!observation.has_letter(triple->view_match)) {
      return CotParseError{CotParseError::Kind::invalid_letter,
                           std::string(1, triple->view_match), raw};
    }
    if (!observation.has_letter(triple->action)) {
      return CotParseError{CotParseError::Kind::invalid_letter,
                           std::string(1, triple->action), raw};
    }
    return *triple;
  };

  CotParseResult strict = attempt(/*lenient=*/false);
  if (parse_ok(strict) || strict_only) return strict;
  CotParseResult lenient = attempt(/*lenient=*/true);
  if (parse_ok(lenient)) return lenient;
  return strict;  // report the strict diagnosis
}

struct EntityList {
  std::vector<std::string> entities;  // ordered by first appearance
  std::string source_instruction;

  bool empty() const { return entities.empty(); }
  std::size_t size() const { return entities.size(); }
};

namespace detail {

inline const std::set<std::string>& expansion_stopwords() {
  static const std::set<std::string> words = {
      "the",  "a",     "an",    "and",   "then", "to",      "at",    "past",  "in",
      "on",   "of",    "from",  "into",  "with", "your",    "left",  "right", "walk",
      "go",   "stop",  "turn",  "head",  "continue",        "straight",       "towards",
      "toward", "veer", "near", "front", "by",   "until",   "reach", "take",  "through",
      "exit", "enter", "up",    "down",  "before", "after", "you",   "is",    "are"};
  return words;
}

struct TokenSpan {
  std::string lower;
  std::size_t begin;
  std::size_t end;
};

inline std::vector<TokenSpan> token_spans(const std::string& text) {
  std::vector<TokenSpan> spans;
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isalnum(static_cast<unsigned char>(text[i]))) {
      std::size_t b = i;
      std::string lower;
      while (i < text.size() && std::isalnum(static_cast<unsigned char>(text[i]))) {
        lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
        ++i;
      }
      spans.push_back({std::move(lower), b, i});
    } else {
      ++i;
    }
  }
  return spans;
}

inline bool gap_is_spaces(const std::string& text, std::size_t from, std::size_t to) {
  for (std::size_t i = from; i < to; ++i) {
    if (text[i] != ' ') return false;
  }
  return true;
}

}  // namespace detail

/**
 * Rule-based extraction: longest lexicon phrase matches (expanded left over
 * adjacent modifier words) plus any <...>-bracketed spans. Deduplicated
 * case-insensitively, ordered by first appearance. Never fails; the list may
 * be empty.
 */
inline EntityList extract_entities_rule_based(const std::string& instruction,
                                              const Lexicon& lexicon = Lexicon::bundled()) {
  if (strutil::trim(instruction).empty()) throw CotError("extract_entities: empty instruction");

  std::vector<std::pair<std::size_t, std::string>> found;  // (position, entity)

  // <...> spans are entities verbatim.
  std::size_t pos = 0;
  while ((pos = instruction.find('<', pos)) != std::string::npos) {
    const std::size_t close = instruction.find('>', pos + 1);
    if (close == std::string::npos) break;
    const std::string inner = strutil::trim(instruction.substr(pos + 1, close - pos - 1));
    if (!inner.empty()) found.emplace_back(pos, inner);
    pos = close + 1;
  }

  const auto spans = detail::token_spans(instruction);
  const auto& stop = detail::expansion_stopwords();
  std::size_t i = 0;
  while (i < spans.size()) {
    std::size_t matched_len = 0;
    const std::size_t max_len = std::min(lexicon.max_words(), spans.size() - i);
    for (std::size_t len = max_len; len >= 1; --len) {
      std::string key;
      bool contiguous = true;
      for (std::size_t k = 0; k < len; ++k) {
        if (k) {
          if (!detail::gap_is_spaces(instruction, spans[i + k - 1].end, spans[i + k].begin)) {
            contiguous = false;
            break;
          }
          key += ' ';
        }
        key += spans[i + k].lower;
      }
      if (contiguous && lexicon.contains(key)) {
        matched_len = len;
        break;
      }
    }
    if (matched_len == 0) {
      ++i;
      continue;
    }
    // Expand left over up to two adjacent modifier words.
    std::size_t first = i;
    for (int hops = 0; hops < 2 && first > 0; ++hops) {
      const auto& prev = spans[first - 1];
      if (stop.count(prev.lower) || !std::isalpha(static_cast<unsigned char>(prev.lower[0]))) break;
      if (!detail::gap_is_spaces(instruction, prev.end, spans[first].begin)) break;
      --first;
    }
    const std::size_t begin = spans[first].begin;
    const std::size_t end = spans[i + matched_len - 1].end;
    found.emplace_back(begin, instruction.substr(begin, end - begin));
    i += matched_len;
  }

  std::sort(found.begin(), found.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  EntityList out;
  out.source_instruction = instruction;
  std::set<std::string> seen;
  for (auto& [p, entity] : found) {
    (void)p;
    const std::string key = strutil::collapse_whitespace(strutil::to_lower(entity));
    if (seen.insert(key).second) out.entities.push_back(entity);
  }
  return out;
}

/// Prompt used when extraction is delegated to a text-generation backend.
inline std::string build_entity_extraction_prompt(const std::string& instruction) {
  return "Extract all landmarks, objects, and scene phrases mentioned in the "
         "navigation instruction. Output one phrase per line, in order of "
         "appearance, with no extra text.\nInstruction: " +
         instruction + "\nEntities:";
}

/**
 * Backend-driven extraction: prompts for a line-separated entity list and
 * keeps phrases that actually occur in the instruction (ordering and
 * deduplication follow the same rules as the rule-based path). Backend
 * failures propagate.
 */
inline EntityList extract_entities_backend(const std::string& instruction,
                                           backend::TextBackend& be,
                                           const backend::SamplingParams& params = {}) {
  if (strutil::trim(instruction).empty()) throw CotError("extract_entities: empty instruction");
  const auto response = be.generate(build_entity_extraction_prompt(instruction), params);

  std::vector<std::pair<std::size_t, std::string>> found;
  for (auto& line : strutil::split_lines(response.text)) {
    std::string t = strutil::trim(line);
    while (!t.empty() && (std::ispunct(static_cast<unsigned char>(t.front())) ||
                          std::isdigit(static_cast<unsigned char>(t.front())))) {
      t.erase(t.begin());  // strip bullets / numbering
    }
    t = strutil::trim(t);
    if (t.empty()) continue;
    const std::size_t at = strutil::ifind(instruction, t);
    if (at == std::string::npos) continue;
    found.emplace_back(at, instruction.substr(at, t.size()));
  }
  std::sort(found.begin(), found.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  EntityList out;
  out.source_instruction = instruction;
  std::set<std::string> seen;
  for (auto& [p, entity] : found) {
    (void)p;
    const std::string key = strutil::collapse_whitespace(strutil::to_lower(entity));
    if (seen.insert(key).second) out.entities.push_back(entity);
  }
  return out;
}

/// Entity-vs-caption similarity. The default is lexical token overlap; an
/// embedding-based scorer can drop in behind the same interface.
class SimilarityScorer {
 public:
  virtual ~SimilarityScorer() = default;
  virtual double score(const std::string& entity, const std::string& caption) const = 0;
};

/// Counts distinct tokens shared between entity and caption.
class TokenOverlapScorer : public SimilarityScorer {
 public:
  double score(const std::string& entity, const std::string& caption) const override {
    const auto caption_tokens = strutil::tokenize_lower(caption);
    const std::set<std::string> caption_set(caption_tokens.begin(), caption_tokens.end());
    const auto entity_tokens = strutil::tokenize_lower(entity);
    const std::set<std::string> entity_set(entity_tokens.begin(), entity_tokens.end());
    double shared = 0;
    for (const auto& t : entity_set) {
      if (caption_set.count(t)) shared += 1;
    }
    return shared;
  }
};

/**
 * Argmax entity under the scorer against the ground-truth next view's
 * caption. Ties go to the earlier entity in the instruction.
 */
inline std::string gt_prediction_label(const EntityList& entities,
                                       const std::string& next_view_caption,
                                       const SimilarityScorer& scorer) {
  if (entities.empty()) throw CotError("gt_prediction_label: empty entity list");
  std::size_t best = 0;
  double best_score = scorer.score(entities.entities[0], next_view_caption);
  for (std::size_t i = 1; i < entities.entities.size(); ++i) {
    const double s = scorer.score(entities.entities[i], next_view_caption);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return entities.entities[best];
}

struct CotLabel {
  std::string prediction_label;
  char action_label = 'A';
  std::string rendered;
};

/// Canonical ground-truth CoT text.
inline CotLabel make_cot_label(const std::string& prediction, char action) {
  CotLabel label;
  label.prediction_label = prediction;
  label.action_label = action;
  label.rendered = "Prediction: " + prediction + ". View match: " + std::string(1, action) +
                   " matches the imagination. Action: " + std::string(1, action) + ".";
  return label;
}

enum class TrainingTask { pred, vm, act, full_cot };

inline std::string_view training_task_name(TrainingTask t) {
  switch (t) {
    case TrainingTask::pred: return "pred";
    case TrainingTask::vm: return "vm";
    case TrainingTask::act: return "act";
    case TrainingTask::full_cot: return "full_cot";
  }
  return "full_cot";
}

struct TrainingRecord {
  TrainingTask task = TrainingTask::full_cot;
  std::string input;   // full navigation prompt
  std::string target;  // canonical label text for the task
};

/**
 * Converts one expert trajectory into per-step training records: one record
 * per task in {pred, vm, act, full_cot} per step. View-match/action targets
 * use the ground-truth option letter; the final step's action target is the
 * stop letter. The prediction label is scored against the ground-truth next
 * view's caption (for the stop step, against the arriving view's caption).
 */
inline std::vector<TrainingRecord> emit_training_examples(
    const world::Episode& episode, const world::NavGraph& graph,
    const textual::CaptionProvider& captions, const SimilarityScorer& scorer,
    const Lexicon& lexicon = Lexicon::bundled(),
    std::string_view example = kDefaultInContextExample,
    const textual::DirectionRules& rules = {}) {
  if (auto reason = world::validate_episode(episode, graph)) {
    throw CotError("emit_training_examples: invalid episode " + episode.id + ": " + *reason);
  }

  const EntityList entities = extract_entities_rule_based(episode.instruction, lexicon);

  std::vector<TrainingRecord> records;
  std::vector<std::string> history_lines;
  double heading = episode.start_heading_deg;
  double elevation = 0.0;
  std::string arriving_caption;  // caption of the edge taken into the current viewpoint

  const auto& path = episode.gt_path;
  for (std::size_t t = 0; t < path.size(); ++t) {
    const auto obs = textual::build_observation(graph, path[t], heading, elevation, captions, rules);
    std::string history = "none";
    if (!history_lines.empty()) {
      history.clear();
      for (std::size_t i = 0; i < history_lines.size(); ++i) {
        if (i) history += "\n";
        history += history_lines[i];
      }
    }
    const std::string input = build_nav_prompt(episode.instruction, obs, history, example);

    char action = obs.stop_letter();
    std::string ref_caption;
    const bool is_stop_step = (t + 1 == path.size());
    if (!is_stop_step) {
      const textual::ObservationOption* gt_option = nullptr;
      for (const auto& opt : obs.options) {
        if (opt.edge && opt.edge->to == path[t + 1]) {
          gt_option = &opt;
          break;
        }
      }
      if (!gt_option) {
        throw CotError("emit_training_examples: gt step has no matching edge at " + path[t]);
      }
      action = gt_option->letter;
      ref_caption = captions.lookup(gt_option->edge->caption_key).value_or("");
      history_lines.push_back("Step " + std::to_string(history_lines.size() + 1) + ". " +
                              gt_option->text);
      heading = gt_option->edge->heading_deg;
      elevation = textual::is_vertical(*gt_option->direction) ? gt_option->edge->elevation_deg : 0.0;
      arriving_caption = ref_caption;
    } else {
      // Stop step: score against the view the agent arrives in; a one-step
      // episode has no arriving view, so fall back to the instruction text.
      ref_caption = arriving_caption.empty() ? episode.instruction : arriving_caption;
    }

    std::string prediction;
    if (!entities.empty()) {
      prediction = gt_prediction_label(entities, ref_caption, scorer);
    } else {
      prediction = strutil::trim(ref_caption);
      for (std::string_view article : {"a ", "an ", "the "}) {
        if (strutil::starts_with(strutil::to_lower(prediction), article)) {
          prediction = strutil::trim(prediction.substr(article.size()));
          break;
        }
      }
    }

    const CotLabel label = make_cot_label(prediction, action);
    records.push_back({TrainingTask::pred, input, "Prediction: " + prediction + "."});
    records.push_back({TrainingTask::vm, input,
                       "View match: " + std::string(1, action) + " matches the imagination."});
    records.push_back({TrainingTask::act, input, "Action: " + std::string(1, action) + "."});
    records.push_back({TrainingTask::full_cot, input, label.rendered});
  }
  return records;
}

}  // namespace dvnav::cot
