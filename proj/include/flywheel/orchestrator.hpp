#pragma once

#include "flywheel/config.hpp"
#include "flywheel/evaluation.hpp"
#include "flywheel/policy.hpp"
#include "flywheel/reward.hpp"
#include "flywheel/world.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace flywheel {

/// A stage failure inside a cycle; the campaign state stays at the prior baseline.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage " + stage + " failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct CycleRecord {
  int cycle = 0;
  std::string version;           // the candidate trained this cycle
  std::string baseline_version;  // baseline it was compared against
  std::string batch_id;
  bool failure_injected = false;

  std::size_t traffic_sessions = 0;
  std::size_t curated = 0;
  std::size_t user_pairs = 0;
  std::size_t internal_pairs = 0;
  std::size_t rjs_accepted = 0;
  std::size_t rl_prompts = 0;
  double user_rm_accuracy_eval = 0.0;

  double rm_winrate_internal = 0.5;
  double rm_winrate_user = 0.5;
  GateDecision gate_decision = GateDecision::ok;
  AbReadout ab;
  ArtifactReport artifact_report;
  ResponseCharacteristics response_characteristics;
  std::string decision;  // promote, hold or block
  std::string promoted_baseline;

  // Oracle diagnostics; nothing in the cycle reads these.
  double true_engagement_candidate = 0.0;
  double true_engagement_baseline = 0.0;
  double true_engagement_promoted = 0.0;
  double rl_emoji_start = 0.0;
  double rl_emoji_end = 0.0;
};

Json to_json(const CycleRecord& record);

struct CampaignState {
  World world;
  PolicyCheckpoint baseline;
  std::vector<PolicyCheckpoint> promoted;  // every promoted baseline, oldest first
  std::vector<PreferencePair> user_pairs;
  std::vector<PreferencePair> internal_pairs;
  std::vector<EncodedPrompt> oracle_prompts;
  int next_version = 1;
};

/// Fresh campaign: V0 is the zero-weight (uniform) policy.
CampaignState initial_state(const World& world, const CycleConfig& config);

/// Oracle mean continuation probability over a fixed prompt set.
double true_engagement(const World& world, const ResponsePolicy& policy, const std::vector<EncodedPrompt>& prompts);

/// Date-stamped batch id: 240923 advanced 30 days per cycle.
std::string batch_id_for_cycle(int cycle);

struct CycleOptions {
  std::optional<std::filesystem::path> out_dir;
  bool inject_failure = false;
  // Overrides the RL prompt source for this cycle only.
  std::optional<PromptSource> prompt_source;
};

struct CycleOutcome {
  CycleRecord record;
  CampaignState state;
  PolicyCheckpoint candidate;
};

CycleOutcome run_cycle(const CampaignState& state, const CycleConfig& config, int cycle,
                       const CycleOptions& options = {});

struct CampaignResult {
  std::vector<CycleRecord> records;
  CampaignState state;
  std::string report_csv;
  Json report_json;
  std::string engagement_series_csv;
};

CampaignResult run_campaign(const World& world, const CycleConfig& config,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Columns of the version-by-metric table.
const std::vector<std::string>& report_columns();
/// Both tables are built from the JSON records so `report` can rebuild them from logs.
std::string report_csv(const std::vector<Json>& records);
std::string engagement_series_csv(const std::vector<Json>& records);

}  // namespace flywheel
