// Command-line front end. Flag parsing only; behavior lives in the library
// headers so tests can call the same entry points in-process.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dvnav/commands.hpp"

namespace {

struct FormatOption {
  std::string value = "native";

  dvnav::world::GraphFormat parsed() const {
    if (value == "native") return dvnav::world::GraphFormat::native;
    if (value == "matterport") return dvnav::world::GraphFormat::matterport_connectivity;
    throw dvnav::cli::CliError("unknown graph format '" + value + "'");
  }
};

void add_world_flags(CLI::App* cmd, dvnav::cli::WorldPaths* world, FormatOption* format,
                     bool episodes_required) {
  cmd->add_option("--graph", world->graph, "Navigation graph JSON file")->required();
  cmd->add_option("--graph-format", format->value, "Graph file format: native or matterport")
      ->check(CLI::IsMember({"native", "matterport"}));
  cmd->add_option("--captions", world->captions, "Caption table JSON file")->required();
  auto* ep = cmd->add_option("--episodes", world->episodes, "Episode JSON array file");
  if (episodes_required) ep->required();
}

void add_agent_flags(CLI::App* cmd, dvnav::cli::RunOptions* options, std::string* mode,
                     std::string* example_file) {
  cmd->add_option("--backend", options->backend,
                  "Backend: sim, scripted:FILE, or http(s)://host[:port][/prefix]");
  cmd->add_option("--mode", *mode, "Action selection: greedy, vote, or verify")
      ->check(CLI::IsMember({"greedy", "vote", "sample_vote", "verify", "dual"}));
  cmd->add_option("--k", options->agent.K, "Candidates sampled per step");
  cmd->add_option("--p", options->agent.verification.P, "Verification samples per query");
  cmd->add_option("--r", options->agent.verification.R, "Masked instruction variants");
  cmd->add_option("--max-steps", options->agent.max_steps, "Step budget per episode");
  cmd->add_option("--temperature", options->agent.sampling.temperature, "Candidate temperature");
  cmd->add_option("--top-p", options->agent.sampling.top_p, "Candidate nucleus mass");
  cmd->add_option("--max-new-tokens", options->agent.sampling.max_new_tokens,
                  "Generation length cap");
  cmd->add_option("--verify-temperature", options->agent.verification.sampling.temperature,
                  "Verification temperature");
  cmd->add_flag_callback(
      "--no-tfv", [options] { options->agent.verification.tfv_enabled = false; },
      "Disable boolean verification");
  cmd->add_flag_callback(
      "--no-mev", [options] { options->agent.verification.mev_enabled = false; },
      "Disable masked-entity verification");
  cmd->add_flag_callback(
      "--action-only", [options] { options->agent.verification.include_full_cot = false; },
      "Verify the bare action instead of the full reasoning");
  cmd->add_option("--mask-token", options->agent.verification.mask_token, "Mask placeholder");
  cmd->add_flag("--strict-parse", options->agent.strict_parse_only,
                "Reject outputs that need lenient parsing");
  cmd->add_option("--example-file", *example_file,
                  "File holding the in-context example block");
  cmd->add_option("--lexicon", options->lexicon_path, "Entity lexicon word list");
  cmd->add_option("--jobs", options->jobs, "Parallel episode workers");
  cmd->add_option("--success-radius", options->metrics.success_radius,
                  "Arrival radius in meters");
  cmd->add_option("--sim-seed", options->sim.seed, "Simulation backend seed");
  cmd->add_option("--sim-p-correct", options->sim.p_candidate_correct,
                  "Sim chance a candidate is correct");
  cmd->add_option("--sim-p-true-correct", options->sim.p_true_given_correct,
                  "Sim verification fidelity on correct candidates");
  cmd->add_option("--sim-p-true-incorrect", options->sim.p_true_given_incorrect,
                  "Sim verification fidelity on incorrect candidates");
  cmd->add_option("--http-model", options->http.model, "Model name for the HTTP backend");
  cmd->add_option("--http-timeout", options->http.timeout_seconds, "HTTP timeout seconds");
  cmd->add_option("--http-retries", options->http.max_retries, "HTTP retry attempts");
  cmd->add_option("--api-key-env", options->http.api_key_env,
                  "Environment variable holding the API key");
}

void finalize_agent(dvnav::cli::RunOptions* options, const std::string& mode,
                    const std::string& example_file, const FormatOption& format,
                    std::uint64_t seed, bool seed_set) {
  options->world.graph_format = format.parsed();
  const auto parsed_mode = dvnav::agent::mode_from_string(mode);
  if (!parsed_mode) throw dvnav::cli::CliError("unknown mode '" + mode + "'");
  options->agent.mode = *parsed_mode;
  if (seed_set) {
    options->agent.sampling.seed = seed;
    options->agent.verification.sampling.seed = seed;
  }
  if (!example_file.empty()) {
    std::string text = dvnav::cli::read_file(example_file);
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    options->agent.in_context_example = text;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate-then-verify navigation engine"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read defaults from an INI/TOML file");
  app.set_version_flag("--version", "dvnav 1.0.0");

  // run
  dvnav::cli::RunOptions run_options;
  FormatOption run_format;
  std::string run_mode = "verify";
  std::string run_example_file;
  std::uint64_t run_seed = 0;
  auto* run = app.add_subcommand("run", "Run episodes and write traces");
  add_world_flags(run, &run_options.world, &run_format, true);
  add_agent_flags(run, &run_options, &run_mode, &run_example_file);
  auto* run_seed_opt = run->add_option("--seed", run_seed, "Sampling seed");
  run->add_option("--out", run_options.out_dir, "Output directory")->required();

  // sweep
  dvnav::cli::SweepOptions sweep_options;
  FormatOption sweep_format;
  std::string sweep_mode = "verify";
  std::string sweep_example_file;
  std::uint64_t sweep_seed = 0;
  auto* sweep = app.add_subcommand("sweep", "Grid over K and P, one run per cell");
  add_world_flags(sweep, &sweep_options.base.world, &sweep_format, true);
  add_agent_flags(sweep, &sweep_options.base, &sweep_mode, &sweep_example_file);
  auto* sweep_seed_opt = sweep->add_option("--seed", sweep_seed, "Sampling seed");
  sweep->add_option("--k-values", sweep_options.k_values, "Candidate counts to sweep")
      ->delimiter(',');
  sweep->add_option("--p-values", sweep_options.p_values, "Verification sample counts to sweep")
      ->delimiter(',');
  sweep->add_option("--out", sweep_options.base.out_dir, "Output directory")->required();

  // labels
  dvnav::cli::LabelsOptions labels_options;
  FormatOption labels_format;
  auto* labels = app.add_subcommand("labels", "Emit supervised training records");
  add_world_flags(labels, &labels_options.world, &labels_format, true);
  labels->add_option("--lexicon", labels_options.lexicon_path, "Entity lexicon word list");
  labels->add_option("--out", labels_options.out_file, "Output JSONL file")->required();

  // synth
  dvnav::cli::SynthOptions synth_options;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic world");
  synth->add_option("--seed", synth_options.seed, "World seed");
  synth->add_option("--viewpoints", synth_options.viewpoints, "Viewpoint count");
  synth->add_option("--branching", synth_options.branching, "Extra links per viewpoint");
  synth->add_option("--episodes", synth_options.episodes, "Episode count");
  synth->add_option("--out", synth_options.out_dir, "Output directory")->required();

  // score
  dvnav::cli::ScoreOptions score_options;
  FormatOption score_format;
  auto* score = app.add_subcommand("score", "Recompute metrics from stored traces");
  score->add_option("--graph", score_options.graph, "Navigation graph JSON file")->required();
  score->add_option("--graph-format", score_format.value, "Graph file format")
      ->check(CLI::IsMember({"native", "matterport"}));
  score->add_option("--traces", score_options.traces_dir, "Directory of *.trace.jsonl")
      ->required();
  score->add_option("--out", score_options.out_file, "Summary JSON file");
  score->add_option("--success-radius", score_options.metrics.success_radius,
                    "Arrival radius in meters");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      finalize_agent(&run_options, run_mode, run_example_file, run_format,
                     run_seed, run_seed_opt->count() > 0);
      dvnav::cli::run_command(run_options);
    } else if (sweep->parsed()) {
      finalize_agent(&sweep_options.base, sweep_mode, sweep_example_file, sweep_format,
                     sweep_seed, sweep_seed_opt->count() > 0);
      dvnav::cli::sweep_command(sweep_options);
    } else if (labels->parsed()) {
      labels_options.world.graph_format = labels_format.parsed();
      dvnav::cli::labels_command(labels_options);
    } else if (synth->parsed()) {
      dvnav::cli::synth_command(synth_options);
    } else if (score->parsed()) {
      score_options.graph_format = score_format.parsed();
      dvnav::cli::score_command(score_options);
    }
  } catch (const dvnav::cli::CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
