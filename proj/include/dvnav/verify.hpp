#pragma once

/**
 * Dual verification of sampled candidate actions. Each candidate is re-read
 * by the backend through two channels: boolean agreement queries over the
 * full reasoning (TFV) and recovery of masked instruction entities under the
 * assumption the candidate was executed (MEV). Per-sample outcomes add up to
 * an integer score; the highest-scoring candidate wins.
 */

#include <cctype>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dvnav/backend.hpp"
#include "dvnav/cot.hpp"
#include "dvnav/strings.hpp"
#include "dvnav/textualizer.hpp"

namespace dvnav::verify {

struct VerifyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VerifyConfig {
  int P = 4;  // boolean samples per candidate, and recovery samples per mask
  int R = 2;  // upper bound on masked instruction variants
  bool tfv_enabled = true;
  bool mev_enabled = true;
  bool include_full_cot = true;  // verify the whole triple, not just the action
  std::string mask_token = "[MASK]";
  backend::SamplingParams sampling{};

  void validate() const {
    if (P < 1) throw VerifyError("VerifyConfig: P must be >= 1");
    if (R < 0) throw VerifyError("VerifyConfig: R must be >= 0");
    if (!tfv_enabled && !mev_enabled) {
      throw VerifyError("VerifyConfig: at least one verification channel must be enabled");
    }
    if (mask_token.empty()) throw VerifyError("VerifyConfig: empty mask token");
    sampling.validate();
  }
};

struct TfvAnswer {
  bool value = false;
  bool unparsed = false;  // no recognizable True/False token; value defaults to false
};

/// First alphabetic word decides: true/yes or false/no, case-insensitive.
inline TfvAnswer parse_tfv(const std::string& text) {
  std::size_t i = 0;
  while (i < text.size() && !std::isalpha(static_cast<unsigned char>(text[i]))) ++i;
  std::string word;
  while (i < text.size() && std::isalpha(static_cast<unsigned char>(text[i]))) {
    word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
    ++i;
  }
  if (word == "true" || word == "yes") return {true, false};
  if (word == "false" || word == "no") return {false, false};
  return {false, true};
}

namespace detail {

inline std::string candidate_block(const cot::CotTriple& candidate, bool include_full_cot) {
  if (!include_full_cot) {
    return "Candidate: Action: " + std::string(1, candidate.action) + ".";
  }
  return "Candidate: Prediction: " + candidate.prediction + ". View match: " +
         std::string(1, candidate.view_match) + " supports the prediction. Action: " +
         std::string(1, candidate.action) + ".";
}

}  // namespace detail

/// Byte-deterministic TFV prompt.
inline std::string build_tfv_prompt(const std::string& instruction, const std::string& history,
                                    const textual::ObservationDescription& observation,
                                    const cot::CotTriple& candidate,
                                    bool include_full_cot = true) {
  std::string prompt = "You are verifying a navigation decision.\n";
  prompt += "Instruction: " + instruction + "\n";
  prompt += "History: " + history + "\n";
  prompt += "Observation: " + observation.rendered + "\n";
  prompt += detail::candidate_block(candidate, include_full_cot) + "\n";
  prompt +=
      "Question: Is the candidate the correct next step under the instruction, "
      "history, and observation? Answer with one word, True or False.\nAnswer:";
  return prompt;
}

struct MaskedInstruction {
  std::string masked_text;
  std::string entity;  // phrase hidden behind the mask token
};

/**
 * Masks the first occurrence of each of the first min(R, |entities|)
 * entities, one variant per entity. Entities absent from the instruction
 * (case-insensitively) are skipped.
 */
inline std::vector<MaskedInstruction> prepare_masks(const std::string& instruction,
                                                    const cot::EntityList& entities, int R,
                                                    const std::string& mask_token = "[MASK]") {
  if (R < 0) throw VerifyError("prepare_masks: R must be >= 0");
  if (mask_token.empty()) throw VerifyError("prepare_masks: empty mask token");
  std::vector<MaskedInstruction> masks;
  for (const auto& entity : entities.entities) {
    if (static_cast<int>(masks.size()) >= R) break;
    const std::size_t at = strutil::ifind(instruction, entity);
    if (at == std::string::npos) continue;
    std::string masked = instruction;
    masked.replace(at, entity.size(), mask_token);
    masks.push_back({std::move(masked), entity});
  }
  return masks;
}

/// Byte-deterministic MEV prompt.
inline std::string build_mev_prompt(const MaskedInstruction& masked, const std::string& history,
                                    const textual::ObservationDescription& observation,
                                    const cot::CotTriple& candidate, bool include_full_cot = true,
                                    const std::string& mask_token = "[MASK]") {
  std::string prompt = "You are verifying a navigation decision.\n";
  prompt += "Masked instruction: " + masked.masked_text + "\n";
  prompt += "History: " + history + "\n";
  prompt += "Observation: " + observation.rendered + "\n";
  prompt += detail::candidate_block(candidate, include_full_cot) + "\n";
  prompt += "Assume the candidate action is executed. Output only the phrase replaced by " +
            mask_token + " in the instruction.\nAnswer:";
  return prompt;
}

/// Lowercase, collapse whitespace, drop one leading article and trailing
/// punctuation, then compare. "The sofa." matches "a sofa".
inline bool entity_match(const std::string& recovered, const std::string& expected) {
  auto normalize = [](const std::string& s) {
    std::string t = strutil::collapse_whitespace(strutil::to_lower(s));
    while (!t.empty() && std::string(".,!?;:").find(t.back()) != std::string::npos) t.pop_back();
    t = strutil::trim(t);
    for (std::string_view article : {"a ", "an ", "the "}) {
      if (strutil::starts_with(t, article)) {
        t = strutil::trim(t.substr(article.size()));
        break;
      }
    }
    return t;
  };
  const std::string a = normalize(recovered);
  return !a.empty() && a == normalize(expected);
}

struct QueryTranscript {
  std::string channel;    // "tfv" or "mev"
  int mask_index = -1;    // -1 for tfv
  int sample_index = 0;
  std::string prompt;
  std::string response;
  bool value = false;     // tfv: parsed boolean; mev: entity recovered
  bool unparsed = false;  // tfv only: response had no True/False token
};

struct CandidateScore {
  std::size_t candidate_index = 0;
  int tfv_score = 0;
  int mev_score = 0;
  int total = 0;
  std::vector<bool> tfv_samples;               // size P when tfv enabled
  std::vector<std::vector<bool>> mev_samples;  // [mask][sample]
  std::vector<QueryTranscript> transcripts;
};

/**
 * Runs every verification query for one candidate: P TFV samples, then P
 * recovery samples per mask, in that order. Backend failures propagate.
 */
inline CandidateScore score_candidate(backend::TextBackend& be, const std::string& instruction,
                                      const std::string& history,
                                      const textual::ObservationDescription& observation,
                                      const cot::CotTriple& candidate,
                                      const std::vector<MaskedInstruction>& masks,
                                      const VerifyConfig& config) {
  config.validate();
  CandidateScore score;

  if (config.tfv_enabled) {
    const std::string prompt =
        build_tfv_prompt(instruction, history, observation, candidate, config.include_full_cot);
    for (int p = 0; p < config.P; ++p) {
      const auto response = be.generate(prompt, config.sampling);
      const TfvAnswer answer = parse_tfv(response.text);
      score.tfv_samples.push_back(answer.value);
      if (answer.value) ++score.tfv_score;
      score.transcripts.push_back(
          {"tfv", -1, p, prompt, response.text, answer.value, answer.unparsed});
    }
  }

  if (config.mev_enabled) {
    for (std::size_t r = 0; r < masks.size(); ++r) {
      const std::string prompt = build_mev_prompt(masks[r], history, observation, candidate,
                                                  config.include_full_cot, config.mask_token);
      std::vector<bool> samples;
      for (int p = 0; p < config.P; ++p) {
        const auto response = be.generate(prompt, config.sampling);
        // First non-empty line is the recovered phrase.
        std::string recovered;
        for (auto& line : strutil::split_lines(response.text)) {
          recovered = strutil::trim(line);
          if (!recovered.empty()) break;
        }
        const bool hit = entity_match(recovered, masks[r].entity);
        samples.push_back(hit);
        if (hit) ++score.mev_score;
        score.transcripts.push_back(
            {"mev", static_cast<int>(r), p, prompt, response.text, hit, false});
      }
      score.mev_samples.push_back(std::move(samples));
    }
  }

  score.total = score.tfv_score + score.mev_score;
  return score;
}

/**
 * Winner selection: highest total; ties broken by higher TFV score, then by
 * earliest decoding index. Returns the index into `scores`.
 */
inline std::size_t select_action(const std::vector<CandidateScore>& scores) {
  if (scores.empty()) throw VerifyError("select_action: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i].total > scores[best].total ||
        (scores[i].total == scores[best].total && scores[i].tfv_score > scores[best].tfv_score)) {
      best = i;
    }
  }
  return best;
}

/// All candidates proposing the same action letter short-circuits
/// verification entirely.
inline std::optional<char> consensus_check(const std::vector<cot::CotTriple>& candidates) {
  if (candidates.empty()) return std::nullopt;
  const char action = candidates.front().action;
  for (const auto& c : candidates) {
    if (c.action != action) return std::nullopt;
  }
  return action;
}

struct DedupResult {
  std::vector<std::size_t> representative;  // representative[i]: earliest identical candidate
  std::vector<std::size_t> distinct;        // earliest indices, in decoding order
};

/// Candidates identical in (prediction, view match, action) share one
/// verification pass; raw text differences do not matter.
inline DedupResult dedup_candidates(const std::vector<cot::CotTriple>& candidates) {
  DedupResult out;
  out.representative.resize(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    std::size_t rep = i;
    for (std::size_t j = 0; j < i; ++j) {
      if (candidates[j].prediction == candidates[i].prediction &&
          candidates[j].view_match == candidates[i].view_match &&
          candidates[j].action == candidates[i].action) {
        rep = out.representative[j];
        break;
      }
    }
    out.representative[i] = rep;
    if (rep == i) out.distinct.push_back(i);
  }
  return out;
}

struct VerifyOutcome {
  bool consensus = false;
  std::size_t selected_index = 0;           // index into the candidate list
  std::vector<CandidateScore> scores;       // per candidate; empty under consensus
  std::vector<std::string> masked_entities; // entities actually masked
  std::size_t distinct_count = 0;
  std::size_t queries_issued = 0;
};

/**
 * Full per-step verification: consensus shortcut, entity masking, duplicate
 * collapsing, per-candidate scoring, winner selection. Duplicate candidates
 * inherit their representative's score so selection still sees one entry per
 * decoding index.
 */
inline VerifyOutcome verify_candidates(backend::TextBackend& be, const std::string& instruction,
                                       const std::string& history,
                                       const textual::ObservationDescription& observation,
                                       const std::vector<cot::CotTriple>& candidates,
                                       const cot::EntityList& entities,
                                       const VerifyConfig& config) {
  config.validate();
  if (candidates.empty()) throw VerifyError("verify_candidates: no candidates");

  VerifyOutcome outcome;
  if (auto action = consensus_check(candidates)) {
    (void)action;
    outcome.consensus = true;
    outcome.selected_index = 0;
    return outcome;
  }

  std::vector<MaskedInstruction> masks;
  if (config.mev_enabled) {
    masks = prepare_masks(instruction, entities, config.R, config.mask_token);
    for (const auto& m : masks) outcome.masked_entities.push_back(m.entity);
  }

  const DedupResult dedup = dedup_candidates(candidates);
  outcome.distinct_count = dedup.distinct.size();

  std::vector<CandidateScore> distinct_scores(candidates.size());
  for (const std::size_t i : dedup.distinct) {
    distinct_scores[i] =
        score_candidate(be, instruction, history, observation, candidates[i], masks, config);
    distinct_scores[i].candidate_index = i;
    outcome.queries_issued += distinct_scores[i].transcripts.size();
  }

  outcome.scores.resize(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    outcome.scores[i] = distinct_scores[dedup.representative[i]];
    outcome.scores[i].candidate_index = i;
  }
  outcome.selected_index = select_action(outcome.scores);
  return outcome;
}

}  // namespace dvnav::verify
