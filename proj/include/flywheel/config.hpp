#pragma once

#include "flywheel/curation.hpp"
#include "flywheel/evaluation.hpp"
#include "flywheel/policy.hpp"
#include "flywheel/reward.hpp"

#include <filesystem>
#include <string>

namespace flywheel {

struct SftConfig {
  double learning_rate = 0.2;
  int steps = 3;
};

struct CycleConfig {
  int n_cycles = 5;
  int traffic_per_cycle = 2000;
  int internal_sessions = 300;
  int max_session_turns = 6;
  std::uint64_t seed = 1;
  std::uint64_t world_seed = 1;
  Index dim = kDefaultDim;

  CurationConfig curation;
  TrainConfig rm_train;
  RjsConfig rjs{8, -1e9, 4};
  SftConfig sft;
  DpoConfig dpo;
  RlConfig rl;
  int downsample_k = 4;
  double downsample_keep_fraction = 0.5;
  GateThresholds gates;
  AbConfig ab;

  double signal_weight = 0.25;   // signal logits in the rejection-sampling ranker only
  int eval_samples_per_prompt = 4;
  int true_engagement_prompts = 300;
  double non_inferiority_margin = -0.5;  // breadth CI lower bound, percent

  PromptSource prompt_source = PromptSource::near_policy;
  int off_policy_lag = 3;

  // Scripted failure: this (1-based) cycle trains the user RM on a narrow
  // slice of its own pairs and runs RL with kl_coeff 0.
  int failure_cycle = 0;
  double failure_slice_fraction = 0.05;
};

CycleConfig default_cycle_config();
void validate(const CycleConfig& config);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

CycleConfig load_config(const std::filesystem::path& path);
CycleConfig parse_config(const std::string& toml_text);
std::string to_toml(const CycleConfig& config);

}  // namespace flywheel
