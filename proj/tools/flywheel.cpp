// flywheel: command-line front end for the campaign simulator.

#include "flywheel/config.hpp"
#include "flywheel/curation.hpp"
#include "flywheel/evaluation.hpp"
#include "flywheel/orchestrator.hpp"
#include "flywheel/policy.hpp"
#include "flywheel/reward.hpp"
#include "flywheel/serialization.hpp"
#include "flywheel/world.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace flywheel;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitGateBlock = 2;
constexpr int kExitStageError = 3;

World load_world(const std::string& world_path, const std::optional<CycleConfig>& config, const fs::path& config_dir) {
  if (!world_path.empty()) return World::from_json(read_json_file(world_path));
  if (fs::exists(config_dir / "world.json")) return World::from_json(read_json_file(config_dir / "world.json"));
  const CycleConfig c = config.value_or(default_cycle_config());
  return World::from_seed(c.world_seed, c.dim);
}

std::optional<CycleConfig> maybe_config(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_config(path);
}

fs::path parent_or_cwd(const std::string& path) {
  const fs::path p = fs::path(path).parent_path();
  return p.empty() ? fs::path(".") : p;
}

std::vector<EncodedPrompt> prompts_from_traffic(const World& world, const std::string& path) {
  std::vector<EncodedPrompt> out;
  for (const Conversation& c : read_jsonl<Conversation>(path)) {
    if (c.candidate_sets.size() != c.model_turn_count() || c.model_turn_count() == 0) continue;
    out.push_back(world.encoder().encode_prompt(prompt_from_conversation(c)));
  }
  if (out.empty()) throw InvalidArgument("no prompts with recorded candidate sets in " + path);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-loop engagement-optimization simulator"};
  app.require_subcommand(1);

  // init
  auto* init = app.add_subcommand("init", "Create a campaign directory with a world and a default config");
  std::uint64_t init_world_seed = 1;
  std::uint64_t init_seed = 0;
  Index init_dim = kDefaultDim;
  std::string init_out;
  init->add_option("--world-seed", init_world_seed, "World seed")->required();
  init->add_option("--seed", init_seed, "Campaign seed (defaults to the world seed)");
  init->add_option("--dim", init_dim, "Feature dimension");
  init->add_option("--out", init_out, "Output directory")->required();

  // run
  auto* run = app.add_subcommand("run", "Run a fresh campaign");
  std::string run_config;
  int run_cycles = 0;
  std::string run_dir;
  run->add_option("--config", run_config, "Config file")->required();
  run->add_option("--cycles", run_cycles, "Override the number of cycles");
  run->add_option("--dir", run_dir, "Campaign directory (defaults to the config's directory)");

  // report
  auto* report = app.add_subcommand("report", "Print the version-by-metric report of a campaign");
  std::string report_dir;
  std::string report_format = "csv";
  report->add_option("--dir", report_dir, "Campaign directory")->required();
  report->add_option("--format", report_format, "csv, json or series")
      ->check(CLI::IsMember({"csv", "json", "series"}));

  // curate
  auto* curate_cmd = app.add_subcommand("curate", "Run the curation pipeline over a traffic file");
  std::string curate_in, curate_out, curate_config, curate_world, curate_report;
  curate_cmd->add_option("--in", curate_in, "Traffic JSONL")->required();
  curate_cmd->add_option("--out", curate_out, "Curated JSONL")->required();
  curate_cmd->add_option("--config", curate_config, "Config file")->required();
  curate_cmd->add_option("--world", curate_world, "World JSON");
  curate_cmd->add_option("--report", curate_report, "Report path (default: next to --out)");

  // train-rm
  auto* train_rm = app.add_subcommand("train-rm", "Train a reward or signal model");
  std::string rm_pairs, rm_kind = "pointwise", rm_out, rm_config, rm_world, rm_traffic, rm_signal;
  train_rm->add_option("--pairs", rm_pairs, "Preference pairs JSONL");
  train_rm->add_option("--kind", rm_kind, "pointwise, pairwise or signal")
      ->check(CLI::IsMember({"pointwise", "pairwise", "signal"}));
  train_rm->add_option("--out", rm_out, "Model JSON")->required();
  train_rm->add_option("--config", rm_config, "Config file");
  train_rm->add_option("--world", rm_world, "World JSON");
  train_rm->add_option("--traffic", rm_traffic, "Traffic JSONL (signal models)");
  train_rm->add_option("--signal", rm_signal, "Signal name (signal models)");

  // train-policy
  auto* train_policy = app.add_subcommand("train-policy", "Run one policy stage");
  std::string tp_stage, tp_config, tp_in, tp_out, tp_traffic, tp_rm, tp_pairs, tp_log, tp_world, tp_version;
  train_policy->add_option("--stage", tp_stage, "sft, dpo or rl")->required()->check(CLI::IsMember({"sft", "dpo", "rl"}));
  train_policy->add_option("--config", tp_config, "Config file")->required();
  train_policy->add_option("--in", tp_in, "Input checkpoint")->required();
  train_policy->add_option("--out", tp_out, "Output checkpoint")->required();
  train_policy->add_option("--traffic", tp_traffic, "Traffic JSONL supplying prompts (sft, rl)");
  train_policy->add_option("--rm", tp_rm, "Pointwise reward model (sft, rl)");
  train_policy->add_option("--pairs", tp_pairs, "Preference pairs (dpo)");
  train_policy->add_option("--log", tp_log, "Per-step JSONL training log");
  train_policy->add_option("--world", tp_world, "World JSON");
  train_policy->add_option("--version", tp_version, "Version of the output checkpoint");

  // ab-test
  auto* ab = app.add_subcommand("ab-test", "Simulate an online A/B test between two checkpoints");
  std::string ab_world, ab_test, ab_control, ab_out, ab_csv;
  AbConfig ab_config;
  std::uint64_t ab_seed = 0;
  ab->add_option("--world", ab_world, "World JSON")->required();
  ab->add_option("--test", ab_test, "Test checkpoint")->required();
  ab->add_option("--control", ab_control, "Control checkpoint")->required();
  ab->add_option("--units", ab_config.n_units, "Eligible units");
  ab->add_option("--days", ab_config.window_days, "Window length in days");
  ab->add_option("--fraction", ab_config.traffic_fraction, "Traffic share per arm");
  ab->add_option("--z", ab_config.z, "Critical value");
  ab->add_option("--seed", ab_seed, "Seed");
  ab->add_option("--out", ab_out, "Readout JSON")->required();
  ab->add_option("--csv", ab_csv, "Summary CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*init) {
      fs::create_directories(init_out);
      const World world = World::from_seed(init_world_seed, init_dim);
      CycleConfig config = default_cycle_config();
      config.world_seed = init_world_seed;
      config.seed = init->count("--seed") ? init_seed : init_world_seed;
      config.dim = init_dim;
      write_json_file(fs::path(init_out) / "world.json", world.to_json());
      write_text_file(fs::path(init_out) / "config.toml", to_toml(config));
      std::cout << "initialized " << init_out << "\n";
      return kExitOk;
    }

    if (*run) {
      CycleConfig config = load_config(run_config);
      if (run_cycles > 0) config.n_cycles = run_cycles;
      const fs::path dir = run_dir.empty() ? parent_or_cwd(run_config) : fs::path(run_dir);
      const World world = load_world("", config, dir);
      fs::remove_all(dir / "cycles");
      fs::remove_all(dir / "checkpoints");
      const CampaignResult result = run_campaign(world, config, dir);
      for (const CycleRecord& r : result.records) {
        std::cout << "cycle " << r.cycle << " " << r.version << " gate=" << to_string(r.gate_decision)
                  << " decision=" << r.decision << " baseline=" << r.promoted_baseline << "\n";
      }
      return result.records.back().gate_decision == GateDecision::block ? kExitGateBlock : kExitOk;
    }

    if (*report) {
      const std::vector<Json> rows = read_jsonl<Json>(fs::path(report_dir) / "records.jsonl");
      if (report_format == "json") {
        std::cout << Json{{"records", rows}, {"columns", report_columns()}}.dump(2) << "\n";
      } else if (report_format == "series") {
        std::cout << engagement_series_csv(rows);
      } else {
        std::cout << report_csv(rows);
      }
      return kExitOk;
    }

    if (*curate_cmd) {
      const CycleConfig config = load_config(curate_config);
      const World world = load_world(curate_world, config, parent_or_cwd(curate_config));
      const CurationResult result = curate(read_jsonl<Conversation>(curate_in), config.curation, world.encoder());
      write_jsonl(curate_out, result.conversations);
      const fs::path report_path =
          curate_report.empty() ? parent_or_cwd(curate_out) / "curation_report.json" : fs::path(curate_report);
      write_json_file(report_path, result.report);
      return kExitOk;
    }

    if (*train_rm) {
      const auto config = maybe_config(rm_config);
      const World world = load_world(rm_world, config, rm_config.empty() ? fs::path(".") : parent_or_cwd(rm_config));
      const TrainConfig tc = config ? config->rm_train : TrainConfig{};
      const ModelKind kind = model_kind_from_string(rm_kind);
      std::vector<Example> data;
      if (kind == ModelKind::signal) {
        if (rm_traffic.empty() || rm_signal.empty()) throw InvalidArgument("signal models need --traffic and --signal");
        data = signal_examples(read_jsonl<Conversation>(rm_traffic), world.encoder(), rm_signal);
      } else {
        if (rm_pairs.empty()) throw InvalidArgument("--pairs is required for preference models");
        const auto pairs = read_jsonl<PreferencePair>(rm_pairs);
        data = kind == ModelKind::pointwise ? pointwise_examples(pairs, world.encoder())
                                            : pairwise_examples(pairs, world.encoder());
      }
      const RewardModel model = train(RewardModel::zeros(kind, world.dim(), rm_signal), data, tc);
      write_json_file(rm_out, Json(model));
      return kExitOk;
    }

    if (*train_policy) {
      const CycleConfig config = load_config(tp_config);
      const World world = load_world(tp_world, config, parent_or_cwd(tp_config));
      PolicyCheckpoint in = read_json_file(tp_in).get<PolicyCheckpoint>();
      PolicyCheckpoint out = in;
      std::vector<Json> log;
      if (tp_stage == "dpo") {
        if (tp_pairs.empty()) throw InvalidArgument("--pairs is required for the dpo stage");
        std::vector<EncodedPrompt> prompts;
        std::vector<DpoExample> data;
        for (const PreferencePair& p : read_jsonl<PreferencePair>(tp_pairs)) {
          prompts.push_back(world.encoder().encode_prompt(PromptInstance{p.id, p.context, {p.y0, p.y1}}));
          const int t = p.labels.front().t;
          data.push_back(DpoExample{prompts.size() - 1, t == 1 ? 0 : 1, t == 1 ? 1 : 0});
        }
        out = dpo_train(in, in, prompts, data, config.dpo);
        log.push_back(Json{{"stage", "dpo"}, {"examples", data.size()},
                           {"final_loss", dpo_objective(out, in, prompts, data, config.dpo.beta)}});
      } else {
        if (tp_traffic.empty() || tp_rm.empty()) throw InvalidArgument("--traffic and --rm are required");
        const std::vector<EncodedPrompt> prompts = prompts_from_traffic(world, tp_traffic);
        const CompositeScorer scorer(read_json_file(tp_rm).get<RewardModel>());
        if (tp_stage == "sft") {
          const auto rjs = rejection_sample(prompts, {in}, scorer, config.rjs, derive_seed(config.seed, {fnv1a("rjs")}));
          if (rjs.empty()) throw InvalidArgument("rejection sampling accepted no responses");
          for (int s = 0; s < config.sft.steps; ++s) {
            out = sft_step(out, prompts, rjs, config.sft.learning_rate);
            log.push_back(Json{{"stage", "sft"}, {"step", s}, {"objective", sft_objective(out, prompts, rjs)}});
          }
        } else {
          RlConfig rl = config.rl;
          rl.seed = derive_seed(config.seed, {fnv1a("rl")});
          const RlResult result = rl_train(in, prompts, scorer, rl, config.prompt_source);
          out = result.policy;
          for (const RlStepLog& l : result.log) log.push_back(to_json(l));
        }
      }
      out.policy_version = tp_version.empty() ? in.version() + "-" + tp_stage : tp_version;
      out.parent = in.version();
      write_json_file(tp_out, Json(out));
      if (!tp_log.empty()) write_jsonl<Json>(tp_log, log);
      return kExitOk;
    }

    if (*ab) {
      const World world = World::from_json(read_json_file(ab_world));
      const auto test = read_json_file(ab_test).get<PolicyCheckpoint>();
      const auto control = read_json_file(ab_control).get<PolicyCheckpoint>();
      const AbReadout readout = run_ab_test(world, test, control, ab_config, ab_seed);
      write_json_file(ab_out, to_json(readout, true));
      if (!ab_csv.empty()) write_text_file(ab_csv, readout_csv(readout));
      return kExitOk;
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitOk;
}
