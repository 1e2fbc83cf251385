#pragma once

#include "flywheel/core.hpp"
#include "flywheel/serialization.hpp"
#include "flywheel/world.hpp"

#include <optional>
#include <string>
#include <vector>

namespace flywheel {

class UndefinedEstimand : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Mean over units of the fraction of window days with engagement.
double breadth_estimate(const std::vector<std::vector<int>>& daily_indicators);
double breadth_from_unit_means(const std::vector<double>& unit_means);

/// sum S_i / sum 1[S_i > 0].
double depth_estimate(const std::vector<double>& aggregates);

/// 100 (mu_test / mu_control - 1).
double lift(double mu_test, double mu_control);

/// Lift interval in percent; `bounded` is false in Fieller's unbounded case.
struct LiftInterval {
  bool bounded = false;
  double lo = 0.0;
  double hi = 0.0;

  bool covers(double lift_percent) const { return !bounded || (lo <= lift_percent && lift_percent <= hi); }
  bool significant() const { return bounded && !covers(0.0); }
};

Json to_json(const LiftInterval& ci);

LiftInterval fieller_ci(double mu_t, double mu_c, double sigma_t, double sigma_c, double z = 1.96);

struct ArmReadout {
  std::string arm;
  std::size_t n = 0;
  std::vector<double> unit_breadth;  // Ybar_i
  std::vector<double> unit_depth;    // S_i
  double mu_breadth = 0.0;
  std::optional<double> mu_depth;
  double sigma_breadth = 0.0;
  double sigma_depth = 0.0;
  std::size_t engaged_units = 0;
};

/// Standard errors of the arm estimates. Depth uses the engaged units only.
void summarize(ArmReadout& arm);

struct AbReadout {
  ArmReadout test;
  ArmReadout control;
  std::optional<double> lift_breadth;
  std::optional<double> lift_depth;
  LiftInterval ci_breadth;
  LiftInterval ci_depth;
  int window_days = 7;
  double traffic_fraction = 0.10;
  double z = 1.96;
  std::size_t eligible_units = 0;
  std::string test_version;
  std::string control_version;
};

/// Fills lifts and intervals from the two summarized arms.
void compute_lifts(AbReadout& readout);

Json to_json(const AbReadout& readout, bool include_units = false);
std::string readout_csv(const AbReadout& readout);

struct AbConfig {
  std::size_t n_units = 10000;
  int window_days = 7;
  double traffic_fraction = 0.10;
  double z = 1.96;
  int max_turns = 0;  // 0 uses the world default
};

/// Each eligible unit lands in test with probability f, control with probability f,
/// and is otherwise not simulated. Each day a unit visits with probability
/// visit_probability(last session quality) and runs one session.
AbReadout run_ab_test(const World& world, const ResponsePolicy& policy_test, const ResponsePolicy& policy_control,
                      const AbConfig& config, std::uint64_t seed);

struct ResponseCharacteristics {
  std::size_t n = 0;
  double avg_token_count = 0.0;
  double list_pct = 0.0;
  double emoji_pct = 0.0;
  double templated_pct = 0.0;
  double wall_of_text_pct = 0.0;
};

ResponseCharacteristics response_characteristics(const std::vector<Response>& responses,
                                                 double wall_of_text_length = 150.0);
Json to_json(const ResponseCharacteristics& c);

struct ArtifactFeature {
  std::string name;
  Index slot = 0;
  bool binary = false;
  double threshold = 0.0;
};

std::vector<ArtifactFeature> default_artifact_features();

struct ArtifactEntry {
  std::string name;
  bool binary = false;
  double chosen = 0.0;    // prevalence for binary features, mean otherwise
  double rejected = 0.0;
  double delta = 0.0;
  bool flagged = false;
};

struct ArtifactReport {
  std::vector<ArtifactEntry> features;
  bool any_flagged() const;
};

ArtifactReport artifact_report(const std::vector<Response>& chosen, const std::vector<Response>& rejected,
                               const std::vector<ArtifactFeature>& features = default_artifact_features());
Json to_json(const ArtifactReport& report);

}  // namespace flywheel
