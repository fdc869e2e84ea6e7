#pragma once

/**
 * Run traces: one JSONL file per episode holding the full decision record
 * (prompts, candidates, verification transcripts, chosen actions, metrics).
 * Serialization is byte-deterministic (sorted keys, shortest round-trip
 * numerals) so identical runs produce identical files, and a parsed trace
 * re-serializes to the same bytes.
 */

#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dvnav/agent.hpp"
#include "dvnav/metrics.hpp"
#include "dvnav/verify.hpp"
#include "dvnav/world.hpp"

namespace dvnav::trace {

struct TraceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using nlohmann::json;

/// Episode ids become filenames; anything outside [A-Za-z0-9._-] is '_'.
inline std::string trace_filename(const std::string& episode_id) {
  std::string name;
  for (char c : episode_id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '.' || c == '_' || c == '-';
    name.push_back(ok ? c : '_');
  }
  if (name.empty()) name = "episode";
  return name + ".trace.jsonl";
}

namespace detail {

inline json sampling_to_json(const backend::SamplingParams& p) {
  json j;
  j["temperature"] = p.temperature;
  j["top_p"] = p.top_p;
  j["max_new_tokens"] = p.max_new_tokens;
  j["seed"] = p.seed ? json(*p.seed) : json(nullptr);
  return j;
}

inline backend::SamplingParams sampling_from_json(const json& j) {
  backend::SamplingParams p;
  p.temperature = j.at("temperature").get<double>();
  p.top_p = j.at("top_p").get<double>();
  p.max_new_tokens = j.at("max_new_tokens").get<int>();
  if (!j.at("seed").is_null()) p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

inline json config_to_json(const agent::AgentConfig& c) {
  json j;
  j["mode"] = std::string(agent::mode_name(c.mode));
  j["k"] = c.K;
  j["max_steps"] = c.max_steps;
  j["strict_parse_only"] = c.strict_parse_only;
  j["in_context_example"] = c.in_context_example;
  j["sampling"] = sampling_to_json(c.sampling);
  json v;
  v["p"] = c.verification.P;
  v["r"] = c.verification.R;
  v["tfv_enabled"] = c.verification.tfv_enabled;
  v["mev_enabled"] = c.verification.mev_enabled;
  v["include_full_cot"] = c.verification.include_full_cot;
  v["mask_token"] = c.verification.mask_token;
  v["sampling"] = sampling_to_json(c.verification.sampling);
  j["verification"] = v;
  return j;
}

inline agent::AgentConfig config_from_json(const json& j) {
  agent::AgentConfig c;
  const auto mode = agent::mode_from_string(j.at("mode").get<std::string>());
  if (!mode) throw TraceError("trace: unknown agent mode " + j.at("mode").get<std::string>());
  c.mode = *mode;
  c.K = j.at("k").get<int>();
  c.max_steps = j.at("max_steps").get<int>();
  c.strict_parse_only = j.at("strict_parse_only").get<bool>();
  c.in_context_example = j.at("in_context_example").get<std::string>();
  c.sampling = sampling_from_json(j.at("sampling"));
  const auto& v = j.at("verification");
  c.verification.P = v.at("p").get<int>();
  c.verification.R = v.at("r").get<int>();
  c.verification.tfv_enabled = v.at("tfv_enabled").get<bool>();
  c.verification.mev_enabled = v.at("mev_enabled").get<bool>();
  c.verification.include_full_cot = v.at("include_full_cot").get<bool>();
  c.verification.mask_token = v.at("mask_token").get<std::string>();
  c.verification.sampling = sampling_from_json(v.at("sampling"));
  return c;
}

inline json edge_to_json(const world::NavEdge& e) {
  json j;
  j["from"] = e.from;
  j["to"] = e.to;
  j["heading_deg"] = e.heading_deg;
  j["elevation_deg"] = e.elevation_deg;
  j["caption_key"] = e.caption_key;
  return j;
}

inline world::NavEdge edge_from_json(const json& j) {
  world::NavEdge e;
  e.from = j.at("from").get<std::string>();
  e.to = j.at("to").get<std::string>();
  e.heading_deg = j.at("heading_deg").get<double>();
  e.elevation_deg = j.at("elevation_deg").get<double>();
  e.caption_key = j.at("caption_key").get<std::string>();
  return e;
}

inline json metrics_to_json(const metrics::EpisodeMetrics& m) {
  json j;
  j["navigation_error"] = m.navigation_error;
  j["success"] = m.success;
  j["oracle_success"] = m.oracle_success;
  j["spl"] = m.spl;
  j["ndtw"] = m.ndtw;
  j["sdtw"] = m.sdtw;
  j["cls"] = m.cls;
  j["trajectory_length"] = m.trajectory_length;
  j["shortest_length"] = m.shortest_length;
  return j;
}

inline metrics::EpisodeMetrics metrics_from_json(const json& j) {
  metrics::EpisodeMetrics m;
  m.navigation_error = j.at("navigation_error").get<double>();
  m.success = j.at("success").get<double>();
  m.oracle_success = j.at("oracle_success").get<double>();
  m.spl = j.at("spl").get<double>();
  m.ndtw = j.at("ndtw").get<double>();
  m.sdtw = j.at("sdtw").get<double>();
  m.cls = j.at("cls").get<double>();
  m.trajectory_length = j.at("trajectory_length").get<double>();
  m.shortest_length = j.at("shortest_length").get<double>();
  return m;
}

inline json score_to_json(const verify::CandidateScore& s) {
  json j;
  j["candidate"] = s.candidate_index;
  j["tfv"] = s.tfv_score;
  j["mev"] = s.mev_score;
  j["total"] = s.total;
  j["tfv_samples"] = s.tfv_samples;
  j["mev_samples"] = s.mev_samples;
  json ts = json::array();
  for (const auto& t : s.transcripts) {
    json tj;
    tj["channel"] = t.channel;
    tj["mask"] = t.mask_index;
    tj["sample"] = t.sample_index;
    tj["prompt"] = t.prompt;
    tj["response"] = t.response;
    tj["value"] = t.value;
    tj["unparsed"] = t.unparsed;
    ts.push_back(std::move(tj));
  }
  j["transcripts"] = ts;
  return j;
}

inline verify::CandidateScore score_from_json(const json& j) {
  verify::CandidateScore s;
  s.candidate_index = j.at("candidate").get<std::size_t>();
  s.tfv_score = j.at("tfv").get<int>();
  s.mev_score = j.at("mev").get<int>();
  s.total = j.at("total").get<int>();
  s.tfv_samples = j.at("tfv_samples").get<std::vector<bool>>();
  s.mev_samples = j.at("mev_samples").get<std::vector<std::vector<bool>>>();
  for (const auto& tj : j.at("transcripts")) {
    verify::QueryTranscript t;
    t.channel = tj.at("channel").get<std::string>();
    t.mask_index = tj.at("mask").get<int>();
    t.sample_index = tj.at("sample").get<int>();
    t.prompt = tj.at("prompt").get<std::string>();
    t.response = tj.at("response").get<std::string>();
    t.value = tj.at("value").get<bool>();
    t.unparsed = tj.at("unparsed").get<bool>();
    s.transcripts.push_back(std::move(t));
  }
  return s;
}

inline json step_to_json(const agent::StepRecord& s) {
  json j;
  j["type"] = "step";
  j["t"] = s.t;
  json obs;
  obs["at"] = s.observation.viewpoint;
  obs["heading_deg"] = s.observation.agent_heading_deg;
  obs["elevation_deg"] = s.observation.agent_elevation_deg;
  obs["rendered"] = s.observation.rendered;
  j["observation"] = obs;
  j["history"] = s.history;
  json cands = json::array();
  for (const auto& c : s.candidates) {
    json cj;
    cj["raw"] = c.raw;
    cj["parsed"] = c.parsed;
    cj["error"] = c.parse_error;
    cj["prediction"] = c.prediction;
    cj["view_match"] = std::string(1, c.view_match);
    cj["action"] = std::string(1, c.action);
    cands.push_back(std::move(cj));
  }
  j["candidates"] = cands;
  j["consensus"] = s.consensus;
  j["degenerate"] = s.degenerate;
  j["masked_entities"] = s.masked_entities;
  json scores = json::array();
  for (const auto& sc : s.scores) scores.push_back(score_to_json(sc));
  j["scores"] = scores;
  j["chosen"] = std::string(1, s.chosen);
  j["executed"] = s.executed_edge ? edge_to_json(*s.executed_edge) : json(nullptr);
  j["history_line"] = s.history_line;
  return j;
}

inline agent::StepRecord step_from_json(const json& j) {
  agent::StepRecord s;
  s.t = j.at("t").get<int>();
  const auto& obs = j.at("observation");
  s.observation.viewpoint = obs.at("at").get<std::string>();
  s.observation.agent_heading_deg = obs.at("heading_deg").get<double>();
  s.observation.agent_elevation_deg = obs.at("elevation_deg").get<double>();
  s.observation.rendered = obs.at("rendered").get<std::string>();
  s.history = j.at("history").get<std::string>();
  for (const auto& cj : j.at("candidates")) {
    agent::CandidateRecord c;
    c.raw = cj.at("raw").get<std::string>();
    c.parsed = cj.at("parsed").get<bool>();
    c.parse_error = cj.at("error").get<std::string>();
    c.prediction = cj.at("prediction").get<std::string>();
    c.view_match = cj.at("view_match").get<std::string>().at(0);
    c.action = cj.at("action").get<std::string>().at(0);
    s.candidates.push_back(std::move(c));
  }
  s.consensus = j.at("consensus").get<bool>();
  s.degenerate = j.at("degenerate").get<bool>();
  s.masked_entities = j.at("masked_entities").get<std::vector<std::string>>();
  for (const auto& sj : j.at("scores")) s.scores.push_back(score_from_json(sj));
  s.chosen = j.at("chosen").get<std::string>().at(0);
  if (!j.at("executed").is_null()) s.executed_edge = edge_from_json(j.at("executed"));
  s.history_line = j.at("history_line").get<std::string>();
  return s;
}

}  // namespace detail

struct Trace {
  world::Episode episode;
  agent::AgentConfig config;
  agent::EpisodeResult result;
};

inline void write_trace(std::ostream& out, const world::Episode& episode,
                        const agent::AgentConfig& config, const agent::EpisodeResult& result) {
  json header;
  header["type"] = "episode";
  header["id"] = episode.id;
  header["scan"] = episode.scan;
  header["instruction"] = episode.instruction;
  header["start"] = episode.start;
  header["start_heading_deg"] = episode.start_heading_deg;
  header["gt_path"] = episode.gt_path;
  header["config"] = detail::config_to_json(config);
  out << header.dump() << "\n";

  for (const auto& step : result.steps) {
    out << detail::step_to_json(step).dump() << "\n";
  }

  json tail;
  tail["type"] = "result";
  tail["trajectory"] = result.trajectory;
  tail["terminated_by"] = std::string(agent::termination_name(result.terminated_by));
  tail["failure"] = result.failure;
  tail["generation_queries"] = result.generation_queries;
  tail["verification_queries"] = result.verification_queries;
  tail["metrics"] = result.scores ? detail::metrics_to_json(*result.scores) : json(nullptr);
  out << tail.dump() << "\n";
}

inline Trace read_trace(std::istream& in) {
  Trace trace;
  std::string line;
  bool have_header = false;
  bool have_tail = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (strutil::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw TraceError("trace line " + std::to_string(line_no) + ": " + e.what());
    }
    const std::string type = j.value("type", "");
    if (type == "episode") {
      if (have_header) throw TraceError("trace: duplicate episode header");
      have_header = true;
      trace.episode.id = j.at("id").get<std::string>();
      trace.episode.scan = j.at("scan").get<std::string>();
      trace.episode.instruction = j.at("instruction").get<std::string>();
      trace.episode.start = j.at("start").get<std::string>();
      trace.episode.start_heading_deg = j.at("start_heading_deg").get<double>();
      trace.episode.gt_path = j.at("gt_path").get<std::vector<std::string>>();
      trace.config = detail::config_from_json(j.at("config"));
      trace.result.episode_id = trace.episode.id;
    } else if (type == "step") {
      if (!have_header) throw TraceError("trace: step before episode header");
      trace.result.steps.push_back(detail::step_from_json(j));
    } else if (type == "result") {
      if (!have_header) throw TraceError("trace: result before episode header");
      if (have_tail) throw TraceError("trace: duplicate result line");
      have_tail = true;
      trace.result.trajectory = j.at("trajectory").get<std::vector<std::string>>();
      const std::string term = j.at("terminated_by").get<std::string>();
      if (term == "stop_action") {
        trace.result.terminated_by = agent::Termination::stop_action;
      } else if (term == "max_steps") {
        trace.result.terminated_by = agent::Termination::max_steps;
      } else if (term == "backend_failure") {
        trace.result.terminated_by = agent::Termination::backend_failure;
      } else {
        throw TraceError("trace: unknown termination " + term);
      }
      trace.result.failure = j.at("failure").get<std::string>();
      trace.result.generation_queries = j.at("generation_queries").get<std::size_t>();
      trace.result.verification_queries = j.at("verification_queries").get<std::size_t>();
      if (!j.at("metrics").is_null()) {
        trace.result.scores = detail::metrics_from_json(j.at("metrics"));
      }
    } else {
      throw TraceError("trace: unknown line type '" + type + "'");
    }
  }
  if (!have_header) throw TraceError("trace: missing episode header");
  if (!have_tail) throw TraceError("trace: missing result line");
  return trace;
}

}  // namespace dvnav::trace
