#pragma once

/**
 * Calibrated in-memory backend over a synthetic world. It answers the same
 * prompt families a live model would (candidate generation, boolean
 * verification, masked-entity recovery) with configurable accuracy, which
 * makes mode comparisons reproducible: candidates are correct with a fixed
 * probability, and verification answers are faithful with one probability for
 * correct candidates and another for incorrect ones.
 */

#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dvnav/backend.hpp"
#include "dvnav/cot.hpp"
#include "dvnav/metrics.hpp"
#include "dvnav/rng.hpp"
#include "dvnav/strings.hpp"
#include "dvnav/textualizer.hpp"
#include "dvnav/verify.hpp"
#include "dvnav/world.hpp"

namespace dvnav::backend {

struct SimConfig {
  double p_candidate_correct = 0.5;   // chance a sampled candidate proposes the right action
  double p_true_given_correct = 0.8;  // verification fidelity on correct candidates
  double p_true_given_incorrect = 0.3;
  double success_radius = 3.0;        // agents this close to the goal should stop
  std::uint64_t seed = 0;

  void validate() const {
    for (double p : {p_candidate_correct, p_true_given_correct, p_true_given_incorrect}) {
      if (!(p >= 0.0 && p <= 1.0)) throw BackendError("SimConfig: probabilities must be in [0,1]");
    }
    if (!(success_radius > 0.0)) throw BackendError("SimConfig: success_radius must be > 0");
  }
};

/**
 * Prompt classification relies on the fixed prompt layouts; anything
 * unrecognizable raises UnknownPromptError. Temperature zero makes a draw a
 * pure function of the prompt; positive temperature advances a per-prompt
 * counter so repeated samples differ. All state is mutex-guarded.
 */
class SimBackend final : public TextBackend {
 public:
  SimBackend(world::SynthWorld world, SimConfig config)
      : world_(std::move(world)),
        config_(config),
        oracle_(world_.graph, metrics::DistanceMode::geodesic) {
    config_.validate();
    for (const auto& e : world_.graph.edges()) {
      auto it = world_.captions.find(e.caption_key);
      if (it == world_.captions.end()) continue;
      caption_to_vp_[it->second] = e.to;
      vp_to_desc_[e.to] = strip_article(it->second);
    }
    for (std::size_t i = 0; i < world_.episodes.size(); ++i) {
      by_instruction_[world_.episodes[i].instruction] = i;
    }
  }

  BackendResponse generate(const std::string& prompt, const SamplingParams& params) override {
    params.validate();
    std::lock_guard<std::mutex> lock(mutex_);
    BackendResponse resp;
    resp.backend_id = id();
    if (strutil::starts_with(prompt, "You are verifying a navigation decision.")) {
      if (prompt.find("\nMasked instruction: ") != std::string::npos) {
        ++calls_mev_;
        resp.text = answer_mev(prompt, params);
      } else {
        ++calls_tfv_;
        resp.text = answer_tfv(prompt, params);
      }
    } else if (strutil::ends_with(prompt, "Output:")) {
      ++calls_nav_;
      resp.text = answer_nav(prompt, params);
    } else if (strutil::starts_with(prompt, "Extract all landmarks")) {
      ++calls_extract_;
      resp.text = answer_extract(prompt);
    } else {
      throw UnknownPromptError(strutil::collapse_whitespace(prompt));
    }
    return resp;
  }

  std::string id() const override { return "sim"; }

  std::size_t nav_calls() const { return calls_nav_; }
  std::size_t tfv_calls() const { return calls_tfv_; }
  std::size_t mev_calls() const { return calls_mev_; }

  const world::SynthWorld& world() const { return world_; }

 private:
  static std::string strip_article(const std::string& caption) {
    std::string t = strutil::trim(caption);
    for (std::string_view article : {"a ", "an ", "the "}) {
      if (strutil::starts_with(strutil::to_lower(t), article)) {
        return strutil::trim(t.substr(article.size()));
      }
    }
    return t;
  }

  static std::string slice(const std::string& text, const std::string& from,
                           const std::string& to, std::size_t start = 0) {
    const std::size_t a = text.find(from, start);
    if (a == std::string::npos) throw BackendError("sim: prompt missing marker '" + from + "'");
    const std::size_t b = text.find(to, a + from.size());
    if (b == std::string::npos) throw BackendError("sim: prompt missing marker '" + to + "'");
    return text.substr(a + from.size(), b - a - from.size());
  }

  /// Deterministic stream: temperature zero keys on the prompt alone;
  /// otherwise a per-prompt counter separates repeated samples.
  rng::SplitMix64 stream_for(const std::string& prompt, const SamplingParams& params) {
    const std::uint64_t key = rng::mix(config_.seed, strutil::fnv1a64(prompt));
    std::uint64_t counter = 0;
    if (params.temperature > 0.0) counter = ++counters_[key];
    return rng::SplitMix64(rng::mix(key, counter));
  }

  const world::Episode& episode_by_instruction(const std::string& instruction) const {
    auto it = by_instruction_.find(instruction);
    if (it == by_instruction_.end()) {
      throw BackendError("sim: no episode with instruction '" + instruction + "'");
    }
    return world_.episodes[it->second];
  }

  /// Walks the history lines ("Step i. go ... to <a teal sofa>") from the
  /// episode start by matching each line's caption to an outgoing edge.
  std::string replay_history(const world::Episode& episode, const std::string& history) const {
    std::string at = episode.start;
    if (strutil::trim(history) == "none") return at;
    for (const auto& line : strutil::split_lines(history)) {
      const std::size_t open = line.find('<');
      const std::size_t close = line.rfind('>');
      if (open == std::string::npos || close == std::string::npos || close < open) continue;
      const std::string caption = line.substr(open + 1, close - open - 1);
      for (const auto& e : world_.graph.navigable_from(at)) {
        auto it = world_.captions.find(e.caption_key);
        if (it != world_.captions.end() && it->second == caption) {
          at = e.to;
          break;
        }
      }
    }
    return at;
  }

  /// The letter an ideal agent would pick from this rendered observation:
  /// stop within the arrival radius, otherwise the move whose destination is
  /// geodesically closest to the goal (first such letter on ties).
  char correct_letter(const std::string& at, const std::string& goal,
                      const std::vector<std::pair<char, std::string>>& options) const {
    if (oracle_(at, goal) <= config_.success_radius) return 'A';
    char best = 'A';
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [letter, text] : options) {
      if (letter == 'A') continue;
      const std::size_t open = text.find('<');
      const std::size_t close = text.rfind('>');
      if (open == std::string::npos || close == std::string::npos || close < open) continue;
      auto it = caption_to_vp_.find(text.substr(open + 1, close - open - 1));
      if (it == caption_to_vp_.end()) continue;
      const double d = oracle_(it->second, goal);
      if (d < best_d) {
        best_d = d;
        best = letter;
      }
    }
    return best;
  }

  std::string answer_nav(const std::string& prompt, const SamplingParams& params) {
    // The in-context example also contains an Input block; the live one is last.
    const std::size_t input_at = prompt.rfind("Input: Instruction: ");
    if (input_at == std::string::npos) throw BackendError("sim: nav prompt missing input block");
    const std::string instruction =
        slice(prompt, "Input: Instruction: ", " Observation: ", input_at);
    const std::string rendered = slice(prompt, " Observation: ", ". History: ", input_at);
    const std::size_t h_at = prompt.find(". History: ", input_at);
    const std::size_t h_end = prompt.rfind(".\nOutput:");
    if (h_end == std::string::npos || h_end <= h_at) {
      throw BackendError("sim: nav prompt missing history block");
    }
    const std::string history = prompt.substr(h_at + 11, h_end - h_at - 11);

    const auto& episode = episode_by_instruction(instruction);
    const std::string at = replay_history(episode, history);
    const auto options = textual::parse_rendered_observation(rendered);
    const char right = correct_letter(at, episode.gt_path.back(), options);

    auto gen = stream_for(prompt, params);
    char letter = right;
    if (!gen.bernoulli(config_.p_candidate_correct)) {
      std::vector<char> wrong;
      for (const auto& [l, text] : options) {
        (void)text;
        if (l != right) wrong.push_back(l);
      }
      if (!wrong.empty()) {
        letter = wrong[static_cast<std::size_t>(
            gen.next_int(0, static_cast<std::int64_t>(wrong.size()) - 1))];
      }
    }

    std::string prediction = "here";
    if (letter == 'A') {
      auto it = vp_to_desc_.find(at);
      if (it != vp_to_desc_.end()) prediction = it->second;
    } else {
      for (const auto& [l, text] : options) {
        if (l != letter) continue;
        const std::size_t open = text.find('<');
        const std::size_t close = text.rfind('>');
        if (open != std::string::npos && close != std::string::npos && close > open) {
          prediction = strip_article(text.substr(open + 1, close - open - 1));
        }
        break;
      }
    }
    return "Prediction: " + prediction + ". View match: " + std::string(1, letter) +
           " supports the prediction. Action: " + std::string(1, letter) + ".";
  }

  struct VerifyContext {
    bool candidate_correct = false;
    std::string at;
    const world::Episode* episode = nullptr;
  };

  VerifyContext verify_context(const std::string& prompt, const world::Episode& episode,
                               const std::string& history) const {
    VerifyContext ctx;
    ctx.episode = &episode;
    ctx.at = replay_history(episode, history);
    const std::string rendered = slice(prompt, "\nObservation: ", "\nCandidate: ");
    const auto options = textual::parse_rendered_observation(rendered);
    const std::size_t act_at = prompt.rfind("Action: ");
    if (act_at == std::string::npos || act_at + 8 >= prompt.size()) {
      throw BackendError("sim: candidate block missing action");
    }
    const char action = prompt[act_at + 8];
    ctx.candidate_correct = (action == correct_letter(ctx.at, episode.gt_path.back(), options));
    return ctx;
  }

  std::string answer_tfv(const std::string& prompt, const SamplingParams& params) {
    const std::string instruction = slice(prompt, "\nInstruction: ", "\n");
    const std::string history = slice(prompt, "\nHistory: ", "\nObservation: ");
    const auto ctx = verify_context(prompt, episode_by_instruction(instruction), history);
    auto gen = stream_for(prompt, params);
    const double p =
        ctx.candidate_correct ? config_.p_true_given_correct : config_.p_true_given_incorrect;
    return gen.bernoulli(p) ? "True" : "False";
  }

  std::string answer_mev(const std::string& prompt, const SamplingParams& params) {
    const std::string masked = slice(prompt, "\nMasked instruction: ", "\n");
    const std::string history = slice(prompt, "\nHistory: ", "\nObservation: ");
    const std::string token = slice(prompt, "Output only the phrase replaced by ",
                                    " in the instruction.");
    const std::size_t mask_at = masked.find(token);
    if (mask_at == std::string::npos) throw BackendError("sim: masked instruction has no mask");
    const std::string prefix = masked.substr(0, mask_at);
    const std::string suffix = masked.substr(mask_at + token.size());

    const world::Episode* episode = nullptr;
    std::string entity;
    for (const auto& ep : world_.episodes) {
      const auto& instr = ep.instruction;
      if (instr.size() < prefix.size() + suffix.size()) continue;
      if (!strutil::starts_with(instr, prefix) || !strutil::ends_with(instr, suffix)) continue;
      episode = &ep;
      entity = instr.substr(prefix.size(), instr.size() - prefix.size() - suffix.size());
      break;
    }
    if (!episode) throw BackendError("sim: no episode matches masked instruction");

    const auto ctx = verify_context(prompt, *episode, history);
    auto gen = stream_for(prompt, params);
    const double p =
        ctx.candidate_correct ? config_.p_true_given_correct : config_.p_true_given_incorrect;
    if (gen.bernoulli(p)) return entity;

    // A wrong but plausible phrase: another caption from the observation.
    const std::string rendered = slice(prompt, "\nObservation: ", "\nCandidate: ");
    for (const auto& [letter, text] : textual::parse_rendered_observation(rendered)) {
      (void)letter;
      const std::size_t open = text.find('<');
      const std::size_t close = text.rfind('>');
      if (open == std::string::npos || close == std::string::npos || close < open) continue;
      const std::string caption = text.substr(open + 1, close - open - 1);
      if (!verify::entity_match(caption, entity)) return caption;
    }
    return "something else";
  }

  std::string answer_extract(const std::string& prompt) const {
    const std::string instruction = slice(prompt, "\nInstruction: ", "\nEntities:");
    const auto entities = cot::extract_entities_rule_based(instruction);
    std::string out;
    for (std::size_t i = 0; i < entities.entities.size(); ++i) {
      if (i) out += "\n";
      out += entities.entities[i];
    }
    return out;
  }

  world::SynthWorld world_;
  SimConfig config_;
  metrics::DistanceOracle oracle_;
  std::map<std::string, std::string> caption_to_vp_;
  std::map<std::string, std::string> vp_to_desc_;
  std::map<std::string, std::size_t> by_instruction_;
  std::map<std::uint64_t, std::uint64_t> counters_;
  std::size_t calls_nav_ = 0;
  std::size_t calls_tfv_ = 0;
  std::size_t calls_mev_ = 0;
  std::size_t calls_extract_ = 0;
  std::mutex mutex_;
};

}  // namespace dvnav::backend
