#pragma once

/**
 * Command implementations behind the CLI: run, sweep, labels, synth, score.
 * They live in the library so tests drive them directly; the binary only
 * parses flags. All file writes go through a temp-then-rename so a crashed
 * run never leaves half-written outputs.
 */

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dvnav/agent.hpp"
#include "dvnav/backend.hpp"
#include "dvnav/cot.hpp"
#include "dvnav/http_backend.hpp"
#include "dvnav/lexicon.hpp"
#include "dvnav/metrics.hpp"
#include "dvnav/sim_backend.hpp"
#include "dvnav/textualizer.hpp"
#include "dvnav/trace.hpp"
#include "dvnav/world.hpp"

namespace dvnav::cli {

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;
using nlohmann::json;

inline void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CliError("cannot open for writing: " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw CliError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError("cannot open: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct WorldPaths {
  std::string graph;
  world::GraphFormat graph_format = world::GraphFormat::native;
  std::string captions;
  std::string episodes;
};

struct LoadedWorld {
  world::GraphRegistry registry;
  std::string scan;  // scan of the (single) loaded graph
  textual::CaptionTable captions;
  std::vector<world::Episode> episodes;
  std::vector<world::EpisodeRejection> rejected;
  std::vector<std::string> warnings;
};

inline LoadedWorld load_world(const WorldPaths& paths) {
  if (paths.graph.empty()) throw CliError("missing --graph");
  if (paths.captions.empty()) throw CliError("missing --captions");

  LoadedWorld w;
  {
    std::ifstream in(paths.graph, std::ios::binary);
    if (!in) throw CliError("cannot open graph: " + paths.graph);
    world::LoadReport report;
    std::string scan;
    auto loaded = world::load_graph(in, paths.graph_format, &report, &scan);
    w.scan = scan.empty() ? "default" : scan;
    for (auto& warning : report.warnings) w.warnings.push_back(warning);
    w.registry.add(w.scan, std::move(loaded));
  }
  {
    std::ifstream in(paths.captions, std::ios::binary);
    if (!in) throw CliError("cannot open captions: " + paths.captions);
    w.captions = textual::CaptionTable::from_stream(in);
    for (auto& warning : w.captions.warnings()) w.warnings.push_back(warning);
  }
  if (!paths.episodes.empty()) {
    std::ifstream in(paths.episodes, std::ios::binary);
    if (!in) throw CliError("cannot open episodes: " + paths.episodes);
    auto loaded = world::load_episodes(in, w.registry);
    w.episodes = std::move(loaded.episodes);
    w.rejected = std::move(loaded.rejected);
  }
  return w;
}

struct BackendSpec {
  enum class Kind { sim, scripted, http };
  Kind kind = Kind::sim;
  std::string arg;  // script path or base url
};

/// Accepted forms: "sim", "scripted:<path>", "http:<url>".
inline BackendSpec parse_backend_spec(const std::string& spec) {
  BackendSpec out;
  if (spec == "sim") {
    out.kind = BackendSpec::Kind::sim;
    return out;
  }
  if (strutil::starts_with(spec, "scripted:")) {
    out.kind = BackendSpec::Kind::scripted;
    out.arg = spec.substr(9);
    if (out.arg.empty()) throw CliError("scripted backend needs a script path");
    return out;
  }
  if (strutil::starts_with(spec, "http:") || strutil::starts_with(spec, "https:")) {
    out.kind = BackendSpec::Kind::http;
    out.arg = spec;
    return out;
  }
  throw CliError("unknown backend spec '" + spec + "' (expected sim, scripted:FILE, or http(s)://...)");
}

/// Script file: JSON object mapping prompt text to an array of responses,
/// consumed in order.
inline std::unique_ptr<backend::ScriptedBackend> load_scripted_backend(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw CliError(std::string("malformed script file: ") + e.what());
  }
  if (!doc.is_object()) throw CliError("script file must be a JSON object");
  auto be = std::make_unique<backend::ScriptedBackend>();
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!it.value().is_array()) throw CliError("script entry '" + it.key() + "' must be an array");
    std::vector<std::string> responses;
    for (const auto& r : it.value()) responses.push_back(r.get<std::string>());
    be->script(it.key(), responses);
  }
  return be;
}

inline std::unique_ptr<backend::TextBackend> make_backend(const BackendSpec& spec,
                                                          const LoadedWorld& w,
                                                          const backend::SimConfig& sim_config,
                                                          backend::HttpBackendConfig http_config) {
  switch (spec.kind) {
    case BackendSpec::Kind::sim: {
      world::SynthWorld sw;
      sw.scan = w.scan;
      sw.graph = w.registry.at(w.scan);
      sw.episodes = w.episodes;
      sw.captions = w.captions.entries();
      return std::make_unique<backend::SimBackend>(std::move(sw), sim_config);
    }
    case BackendSpec::Kind::scripted:
      return load_scripted_backend(spec.arg);
    case BackendSpec::Kind::http:
      http_config.base_url = spec.arg;
      return std::make_unique<backend::HttpBackend>(std::move(http_config));
  }
  throw CliError("unreachable backend kind");
}

namespace detail {

inline json split_metrics_to_json(const metrics::SplitMetrics& s) {
  json j;
  j["episodes"] = s.episodes;
  j["navigation_error"] = s.navigation_error;
  j["success_rate"] = s.success_rate;
  j["oracle_success_rate"] = s.oracle_success_rate;
  j["spl"] = s.spl;
  j["ndtw"] = s.ndtw;
  j["sdtw"] = s.sdtw;
  j["cls"] = s.cls;
  return j;
}

inline std::string format_cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%8.4f", v);
  return buf;
}

inline std::string metrics_table(const metrics::SplitMetrics& s) {
  std::ostringstream out;
  out << "episodes            " << s.episodes << "\n";
  out << "navigation_error    " << format_cell(s.navigation_error) << "\n";
  out << "success_rate        " << format_cell(s.success_rate) << "\n";
  out << "oracle_success_rate " << format_cell(s.oracle_success_rate) << "\n";
  out << "spl                 " << format_cell(s.spl) << "\n";
  out << "ndtw                " << format_cell(s.ndtw) << "\n";
  out << "sdtw                " << format_cell(s.sdtw) << "\n";
  out << "cls                 " << format_cell(s.cls) << "\n";
  return out.str();
}

}  // namespace detail

struct RunOptions {
  WorldPaths world;
  std::string backend = "sim";
  agent::AgentConfig agent;
  backend::SimConfig sim;
  backend::HttpBackendConfig http;
  metrics::MetricsConfig metrics;
  int jobs = 1;
  std::string out_dir;
  std::string lexicon_path;  // optional custom entity lexicon
};

struct RunOutput {
  agent::SplitOutcome outcome;
  fs::path out_dir;
  std::size_t traces_written = 0;
};

/**
 * Runs every episode, writes one trace per episode plus summary.json and
 * summary.txt under out_dir. Episode failures are reported in the summary,
 * not fatal.
 */
inline RunOutput run_command(const RunOptions& options, std::ostream& log = std::cout) {
  options.agent.validate();
  options.metrics.validate();
  if (options.out_dir.empty()) throw CliError("missing --out");
  if (options.world.episodes.empty()) throw CliError("missing --episodes");

  LoadedWorld w = load_world(options.world);
  for (const auto& warning : w.warnings) log << "warning: " << warning << "\n";
  for (const auto& r : w.rejected) {
    log << "warning: episode record " << r.record_index << " rejected: " << r.reason << "\n";
  }
  if (w.episodes.empty()) throw CliError("no valid episodes to run");

  const cot::Lexicon lexicon =
      options.lexicon_path.empty() ? cot::Lexicon::bundled() : cot::Lexicon::from_file(options.lexicon_path);
  const BackendSpec spec = parse_backend_spec(options.backend);
  auto be = make_backend(spec, w, options.sim, options.http);

  RunOutput out;
  out.out_dir = options.out_dir;
  out.outcome = agent::run_split(*be, w.registry, w.captions, w.episodes, options.agent, lexicon,
                                 options.metrics, options.jobs);

  const fs::path traces_dir = out.out_dir / "traces";
  for (std::size_t i = 0; i < w.episodes.size(); ++i) {
    std::ostringstream buf;
    trace::write_trace(buf, w.episodes[i], options.agent, out.outcome.results[i]);
    write_file_atomic(traces_dir / trace::trace_filename(w.episodes[i].id), buf.str());
    ++out.traces_written;
  }

  json summary;
  summary["backend"] = be->id();
  summary["config"] = trace::detail::config_to_json(options.agent);
  summary["episodes_run"] = w.episodes.size();
  json failures = json::array();
  std::size_t generation_queries = 0;
  std::size_t verification_queries = 0;
  for (const auto& r : out.outcome.results) {
    generation_queries += r.generation_queries;
    verification_queries += r.verification_queries;
  }
  for (const auto& [id, note] : out.outcome.failures) {
    failures.push_back({{"episode", id}, {"note", note}});
  }
  summary["failures"] = failures;
  summary["generation_queries"] = generation_queries;
  summary["verification_queries"] = verification_queries;
  summary["metrics"] =
      out.outcome.aggregate ? detail::split_metrics_to_json(*out.outcome.aggregate) : json(nullptr);
  write_file_atomic(out.out_dir / "summary.json", summary.dump(2) + "\n");

  std::string table = "mode " + std::string(agent::mode_name(options.agent.mode)) + " backend " +
                      be->id() + "\n";
  if (out.outcome.aggregate) table += detail::metrics_table(*out.outcome.aggregate);
  if (!out.outcome.failures.empty()) {
    table += "failures            " + std::to_string(out.outcome.failures.size()) + "\n";
  }
  write_file_atomic(out.out_dir / "summary.txt", table);
  log << table;
  return out;
}

struct SweepOptions {
  RunOptions base;
  std::vector<int> k_values{1, 2, 4};
  std::vector<int> p_values{1, 2, 4};
};

struct SweepOutput {
  std::vector<std::pair<std::pair<int, int>, metrics::SplitMetrics>> cells;  // ((k,p), metrics)
  fs::path out_dir;
};

/// Grid over candidate count and verification samples; one run directory per
/// cell plus a cross-cell matrix.json / matrix.txt.
inline SweepOutput sweep_command(const SweepOptions& options, std::ostream& log = std::cout) {
  if (options.k_values.empty() || options.p_values.empty()) {
    throw CliError("sweep needs at least one K and one P value");
  }
  if (options.base.out_dir.empty()) throw CliError("missing --out");

  SweepOutput out;
  out.out_dir = options.base.out_dir;
  json matrix;
  matrix["cells"] = json::array();
  std::ostringstream table;
  table << "   k    p      sr     spl    ndtw\n";
  for (int k : options.k_values) {
    for (int p : options.p_values) {
      RunOptions cell = options.base;
      cell.agent.K = k;
      cell.agent.verification.P = p;
      cell.out_dir =
          (fs::path(options.base.out_dir) / ("k" + std::to_string(k) + "_p" + std::to_string(p)))
              .string();
      log << "sweep cell k=" << k << " p=" << p << "\n";
      const RunOutput run = run_command(cell, log);
      if (!run.outcome.aggregate) throw CliError("sweep cell produced no scoreable episodes");
      const auto& m = *run.outcome.aggregate;
      out.cells.push_back({{k, p}, m});
      json cj;
      cj["k"] = k;
      cj["p"] = p;
      cj["metrics"] = detail::split_metrics_to_json(m);
      matrix["cells"].push_back(std::move(cj));
      char row[128];
      std::snprintf(row, sizeof(row), "%4d %4d %7.4f %7.4f %7.4f\n", k, p, m.success_rate, m.spl,
                    m.ndtw);
      table << row;
    }
  }
  write_file_atomic(out.out_dir / "matrix.json", matrix.dump(2) + "\n");
  write_file_atomic(out.out_dir / "matrix.txt", table.str());
  log << table.str();
  return out;
}

struct LabelsOptions {
  WorldPaths world;
  std::string out_file;
  std::string lexicon_path;
};

struct LabelsOutput {
  std::size_t episodes = 0;
  std::size_t records = 0;
  fs::path out_file;
};

/// Expert trajectories to supervised records, JSONL with a leading header.
inline LabelsOutput labels_command(const LabelsOptions& options, std::ostream& log = std::cout) {
  if (options.out_file.empty()) throw CliError("missing --out");
  if (options.world.episodes.empty()) throw CliError("missing --episodes");
  LoadedWorld w = load_world(options.world);
  for (const auto& warning : w.warnings) log << "warning: " << warning << "\n";
  for (const auto& r : w.rejected) {
    log << "warning: episode record " << r.record_index << " rejected: " << r.reason << "\n";
  }

  const cot::Lexicon lexicon =
      options.lexicon_path.empty() ? cot::Lexicon::bundled() : cot::Lexicon::from_file(options.lexicon_path);
  const cot::TokenOverlapScorer scorer;

  std::ostringstream body;
  std::size_t records = 0;
  for (const auto& ep : w.episodes) {
    const auto step_records = cot::emit_training_examples(ep, w.registry.at(ep.scan), w.captions,
                                                          scorer, lexicon);
    for (const auto& rec : step_records) {
      json j;
      j["type"] = "record";
      j["episode"] = ep.id;
      j["task"] = std::string(cot::training_task_name(rec.task));
      j["input"] = rec.input;
      j["target"] = rec.target;
      body << j.dump() << "\n";
      ++records;
    }
  }

  json header;
  header["type"] = "header";
  header["episodes"] = w.episodes.size();
  header["records"] = records;
  write_file_atomic(options.out_file, header.dump() + "\n" + body.str());

  LabelsOutput out;
  out.episodes = w.episodes.size();
  out.records = records;
  out.out_file = options.out_file;
  log << "wrote " << records << " records for " << out.episodes << " episodes\n";
  return out;
}

struct SynthOptions {
  std::uint64_t seed = 0;
  int viewpoints = 16;
  int branching = 2;
  int episodes = 10;
  std::string out_dir;
};

/// Materializes a synthetic world as graph.json + captions.json +
/// episodes.json, the same formats `run` consumes.
inline world::SynthWorld synth_command(const SynthOptions& options, std::ostream& log = std::cout) {
  if (options.out_dir.empty()) throw CliError("missing --out");
  const auto w = world::synth_world(options.seed, options.viewpoints, options.branching,
                                    options.episodes);
  {
    std::ostringstream buf;
    world::save_graph(w.graph, buf, w.scan);
    write_file_atomic(fs::path(options.out_dir) / "graph.json", buf.str());
  }
  {
    const json captions(w.captions);
    write_file_atomic(fs::path(options.out_dir) / "captions.json", captions.dump(2) + "\n");
  }
  {
    std::ostringstream buf;
    world::save_episodes(w.episodes, buf);
    write_file_atomic(fs::path(options.out_dir) / "episodes.json", buf.str());
  }
  log << "synth world " << w.scan << ": " << w.graph.viewpoint_count() << " viewpoints, "
      << w.graph.edge_count() << " edges, " << w.episodes.size() << " episodes\n";
  return w;
}

struct ScoreOptions {
  std::string graph;
  world::GraphFormat graph_format = world::GraphFormat::native;
  std::string traces_dir;
  std::string out_file;  // optional; summary also returned
  metrics::MetricsConfig metrics;
};

struct ScoreOutput {
  std::vector<std::pair<std::string, metrics::EpisodeMetrics>> per_episode;
  metrics::SplitMetrics aggregate;
};

/**
 * Re-derives metrics from stored traces and the graph alone; stored metric
 * blocks in the traces are ignored. Files are processed in name order.
 */
inline ScoreOutput score_command(const ScoreOptions& options, std::ostream& log = std::cout) {
  if (options.graph.empty()) throw CliError("missing --graph");
  if (options.traces_dir.empty()) throw CliError("missing --traces");
  options.metrics.validate();

  world::NavGraph graph = [&] {
    std::ifstream in(options.graph, std::ios::binary);
    if (!in) throw CliError("cannot open graph: " + options.graph);
    return world::load_graph(in, options.graph_format);
  }();

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(options.traces_dir)) {
    if (entry.is_regular_file() && strutil::ends_with(entry.path().filename().string(),
                                                      ".trace.jsonl")) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw CliError("no *.trace.jsonl files in " + options.traces_dir);

  ScoreOutput out;
  std::vector<metrics::EpisodeMetrics> all;
  for (const auto& file : files) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw CliError("cannot open trace: " + file.string());
    const trace::Trace t = trace::read_trace(in);
    const auto m = metrics::compute_metrics(graph, t.result.trajectory, t.episode.gt_path,
                                            options.metrics);
    out.per_episode.emplace_back(t.episode.id, m);
    all.push_back(m);
  }
  out.aggregate = metrics::aggregate_metrics(all);

  json summary;
  summary["metrics"] = detail::split_metrics_to_json(out.aggregate);
  json per = json::array();
  for (const auto& [id, m] : out.per_episode) {
    per.push_back({{"episode", id}, {"metrics", trace::detail::metrics_to_json(m)}});
  }
  summary["per_episode"] = per;
  if (!options.out_file.empty()) {
    write_file_atomic(options.out_file, summary.dump(2) + "\n");
  }
  log << detail::metrics_table(out.aggregate);
  return out;
}

}  // namespace dvnav::cli
