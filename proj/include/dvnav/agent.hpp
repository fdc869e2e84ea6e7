#pragma once

/**
 * The navigation loop: textualize the current view, sample candidate
 * reasoning chains, pick an action (greedy, majority vote, or verified
 * re-ranking), execute, repeat until the agent stops or runs out of steps.
 */

#include <atomic>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "dvnav/backend.hpp"
#include "dvnav/cot.hpp"
#include "dvnav/lexicon.hpp"
#include "dvnav/metrics.hpp"
#include "dvnav/textualizer.hpp"
#include "dvnav/verify.hpp"
#include "dvnav/world.hpp"

namespace dvnav::agent {

struct AgentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class AgentMode { greedy, sample_vote, verify };

inline std::string_view mode_name(AgentMode m) {
  switch (m) {
    case AgentMode::greedy: return "greedy";
    case AgentMode::sample_vote: return "sample_vote";
    case AgentMode::verify: return "verify";
  }
  return "verify";
}

inline std::optional<AgentMode> mode_from_string(std::string_view s) {
  if (s == "greedy") return AgentMode::greedy;
  if (s == "sample_vote" || s == "vote") return AgentMode::sample_vote;
  if (s == "verify" || s == "dual") return AgentMode::verify;
  return std::nullopt;
}

struct AgentConfig {
  AgentMode mode = AgentMode::verify;
  int K = 4;          // candidates sampled per step
  int max_steps = 15; // moves before forced termination
  backend::SamplingParams sampling{};       // candidate decoding
  verify::VerifyConfig verification{};      // P, R, channels, verify decoding
  bool strict_parse_only = false;
  std::string in_context_example{cot::kDefaultInContextExample};

  void validate() const {
    if (K < 1) throw AgentError("AgentConfig: K must be >= 1");
    if (max_steps < 1) throw AgentError("AgentConfig: max_steps must be >= 1");
    if (in_context_example.empty()) throw AgentError("AgentConfig: empty in-context example");
    sampling.validate();
    if (mode == AgentMode::verify) verification.validate();
  }

  /// Greedy means one deterministic sample; other modes pass through.
  AgentConfig normalized() const {
    AgentConfig c = *this;
    if (c.mode == AgentMode::greedy) {
      c.K = 1;
      c.sampling.temperature = 0.0;
    }
    return c;
  }
};

struct CandidateRecord {
  std::string raw;
  bool parsed = false;
  std::string parse_error;  // set when !parsed
  std::string prediction;
  char view_match = 'A';
  char action = 'A';
};

struct StepRecord {
  int t = 0;
  textual::ObservationDescription observation;
  std::string history;                         // history text shown in the prompt
  std::vector<CandidateRecord> candidates;     // decoding order
  bool consensus = false;
  bool degenerate = false;                     // nothing parseable; forced stop
  std::vector<verify::CandidateScore> scores;  // per parsed candidate; empty unless verified
  std::vector<std::string> masked_entities;
  char chosen = 'A';
  std::optional<world::NavEdge> executed_edge; // empty when the step stopped
  std::string history_line;                    // line appended after executing
};

enum class Termination { stop_action, max_steps, backend_failure };

inline std::string_view termination_name(Termination t) {
  switch (t) {
    case Termination::stop_action: return "stop_action";
    case Termination::max_steps: return "max_steps";
    case Termination::backend_failure: return "backend_failure";
  }
  return "stop_action";
}

struct EpisodeResult {
  std::string episode_id;
  std::vector<std::string> trajectory;  // visited viewpoints, start included
  std::vector<StepRecord> steps;
  Termination terminated_by = Termination::stop_action;
  std::string failure;  // backend error note; empty otherwise
  std::optional<metrics::EpisodeMetrics> scores;
  std::size_t generation_queries = 0;
  std::size_t verification_queries = 0;
};

/// Joins executed-step lines; the literal "none" before the first move.
inline std::string render_history(const std::vector<std::string>& lines) {
  if (lines.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += "\n";
    out += lines[i];
  }
  return out;
}

namespace detail {

/// Modal action letter; ties go to the letter sampled earliest.
inline char vote(const std::vector<cot::CotTriple>& triples) {
  std::map<char, int> counts;
  for (const auto& t : triples) ++counts[t.action];
  char best = triples.front().action;
  int best_count = 0;
  for (const auto& t : triples) {  // decoding order resolves ties
    const int c = counts[t.action];
    if (c > best_count) {
      best_count = c;
      best = t.action;
    }
  }
  return best;
}

}  // namespace detail

/**
 * Runs one episode. Backend errors do not throw; they terminate the episode
 * with a partial trajectory and a failure note. Metrics are attached
 * whenever the (possibly partial) trajectory is scoreable.
 */
inline EpisodeResult run_episode(backend::TextBackend& be, const world::NavGraph& graph,
                                 const textual::CaptionProvider& captions,
                                 const world::Episode& episode, const AgentConfig& raw_config,
                                 const cot::Lexicon& lexicon = cot::Lexicon::bundled(),
                                 const metrics::MetricsConfig& mcfg = {},
                                 const textual::DirectionRules& rules = {}) {
  raw_config.validate();
  mcfg.validate();
  const AgentConfig config = raw_config.normalized();
  if (auto reason = world::validate_episode(episode, graph)) {
    throw AgentError("run_episode: invalid episode " + episode.id + ": " + *reason);
  }

  EpisodeResult result;
  result.episode_id = episode.id;
  result.trajectory.push_back(episode.start);

  cot::EntityList entities;
  if (config.mode == AgentMode::verify && config.verification.mev_enabled) {
    entities = cot::extract_entities_rule_based(episode.instruction, lexicon);
  }

  std::string at = episode.start;
  double heading = episode.start_heading_deg;
  double elevation = 0.0;
  std::vector<std::string> history_lines;
  bool stopped = false;

  for (int t = 0; t < config.max_steps && !stopped; ++t) {
    StepRecord step;
    step.t = t;
    step.observation = textual::build_observation(graph, at, heading, elevation, captions, rules);
    step.history = render_history(history_lines);
    const std::string prompt = cot::build_nav_prompt(episode.instruction, step.observation,
                                                     step.history, config.in_context_example);

    std::vector<backend::BackendResponse> responses;
    try {
      responses = be.generate_n(prompt, config.K, config.sampling);
    } catch (const backend::BackendError& e) {
      result.terminated_by = Termination::backend_failure;
      result.failure = std::string("generation failed at step ") + std::to_string(t) + ": " +
                       e.what();
      result.steps.push_back(std::move(step));
      break;
    }
    result.generation_queries += responses.size();

    std::vector<cot::CotTriple> triples;
    for (const auto& r : responses) {
      CandidateRecord rec;
      rec.raw = r.text;
      const auto parsed = cot::parse_cot(r.text, step.observation, config.strict_parse_only);
      if (cot::parse_ok(parsed)) {
        const auto& triple = std::get<cot::CotTriple>(parsed);
        rec.parsed = true;
        rec.prediction = triple.prediction;
        rec.view_match = triple.view_match;
        rec.action = triple.action;
        triples.push_back(triple);
      } else {
        rec.parse_error = std::get<cot::CotParseError>(parsed).to_string();
      }
      step.candidates.push_back(std::move(rec));
    }

    if (triples.empty()) {
      // Nothing usable; stopping beats walking a random edge.
      step.degenerate = true;
      step.chosen = step.observation.stop_letter();
      result.steps.push_back(std::move(step));
      result.terminated_by = Termination::stop_action;
      stopped = true;
      break;
    }

    char chosen = step.observation.stop_letter();
    if (config.mode == AgentMode::greedy) {
      chosen = triples.front().action;
    } else if (config.mode == AgentMode::sample_vote) {
      chosen = detail::vote(triples);
    } else {
      try {
        const auto outcome = verify::verify_candidates(be, episode.instruction, step.history,
                                                       step.observation, triples, entities,
                                                       config.verification);
        step.consensus = outcome.consensus;
        step.scores = outcome.scores;
        step.masked_entities = outcome.masked_entities;
        result.verification_queries += outcome.queries_issued;
        chosen = triples[outcome.selected_index].action;
      } catch (const backend::BackendError& e) {
        result.terminated_by = Termination::backend_failure;
        result.failure = std::string("verification failed at step ") + std::to_string(t) + ": " +
                         e.what();
        result.steps.push_back(std::move(step));
        break;
      }
    }
    step.chosen = chosen;

    if (chosen == step.observation.stop_letter()) {
      result.steps.push_back(std::move(step));
      result.terminated_by = Termination::stop_action;
      stopped = true;
      break;
    }

    const auto& option = step.observation.option(chosen);
    step.executed_edge = option.edge;
    step.history_line =
        "Step " + std::to_string(history_lines.size() + 1) + ". " + option.text;
    history_lines.push_back(step.history_line);
    at = option.edge->to;
    heading = option.edge->heading_deg;
    elevation = textual::is_vertical(*option.direction) ? option.edge->elevation_deg : 0.0;
    result.trajectory.push_back(at);
    result.steps.push_back(std::move(step));
    if (t + 1 == config.max_steps) result.terminated_by = Termination::max_steps;
  }

  try {
    result.scores = metrics::compute_metrics(graph, result.trajectory, episode.gt_path, mcfg);
  } catch (const metrics::MetricsError&) {
    result.scores.reset();  // unscoreable partial trajectory
  }
  return result;
}

struct SplitOutcome {
  std::vector<EpisodeResult> results;  // episode order preserved
  std::optional<metrics::SplitMetrics> aggregate;
  std::vector<std::pair<std::string, std::string>> failures;  // (episode id, note)
};

/**
 * Runs a whole split, optionally across threads. The backend must tolerate
 * concurrent calls when jobs > 1. Per-episode failures are collected, never
 * fatal for the split.
 */
inline SplitOutcome run_split(backend::TextBackend& be, const world::GraphRegistry& registry,
                              const textual::CaptionProvider& captions,
                              const std::vector<world::Episode>& episodes,
                              const AgentConfig& config, const cot::Lexicon& lexicon = cot::Lexicon::bundled(),
                              const metrics::MetricsConfig& mcfg = {}, int jobs = 1,
                              const textual::DirectionRules& rules = {}) {
  config.validate();
  if (jobs < 1) throw AgentError("run_split: jobs must be >= 1");

  SplitOutcome outcome;
  outcome.results.resize(episodes.size());
  std::vector<std::string> errors(episodes.size());

  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= episodes.size()) return;
      try {
        outcome.results[i] = run_episode(be, registry.at(episodes[i].scan), captions,
                                         episodes[i], config, lexicon, mcfg, rules);
      } catch (const std::exception& e) {
        outcome.results[i].episode_id = episodes[i].id;
        outcome.results[i].terminated_by = Termination::backend_failure;
        outcome.results[i].failure = e.what();
        errors[i] = e.what();
      }
    }
  };

  if (jobs == 1 || episodes.size() <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    const int n = std::min<int>(jobs, static_cast<int>(episodes.size()));
    pool.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<metrics::EpisodeMetrics> scored;
  for (std::size_t i = 0; i < outcome.results.size(); ++i) {
    const auto& r = outcome.results[i];
    if (!r.failure.empty()) outcome.failures.emplace_back(r.episode_id, r.failure);
    if (r.scores) scored.push_back(*r.scores);
  }
  if (!scored.empty()) outcome.aggregate = metrics::aggregate_metrics(scored);
  return outcome;
}

}  // namespace dvnav::agent
