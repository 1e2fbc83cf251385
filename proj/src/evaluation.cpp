#include "flywheel/evaluation.hpp"

#include "flywheel/math.hpp"
#include "flywheel/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace flywheel {
namespace {

double mean_of(const std::vector<double>& xs) {
  return compensated_sum<double>(xs) / static_cast<double>(xs.size());
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

}  // namespace

double breadth_from_unit_means(const std::vector<double>& unit_means) {
  if (unit_means.empty()) throw InvalidArgument("breadth_estimate: no units");
  return mean_of(unit_means);
}

double breadth_estimate(const std::vector<std::vector<int>>& daily_indicators) {
  if (daily_indicators.empty()) throw InvalidArgument("breadth_estimate: no units");
  const std::size_t days = daily_indicators.front().size();
  if (days == 0) throw InvalidArgument("breadth_estimate: empty window");
  std::vector<double> means;
  means.reserve(daily_indicators.size());
  for (const auto& unit : daily_indicators) {
    if (unit.size() != days) throw InvalidArgument("breadth_estimate: units have different window lengths");
    const auto engaged = std::count_if(unit.begin(), unit.end(), [](int y) { return y != 0; });
    means.push_back(static_cast<double>(engaged) / static_cast<double>(days));
  }
  return breadth_from_unit_means(means);
}

double depth_estimate(const std::vector<double>& aggregates) {
  CompensatedSum<double> total;
  std::size_t engaged = 0;
  for (double s : aggregates) {
    if (s < 0.0) throw InvalidArgument("depth_estimate: negative aggregate");
    total.add(s);
    if (s > 0.0) ++engaged;
  }
  if (engaged == 0) throw UndefinedEstimand("depth_estimate: no unit has positive engagement");
  return total.value() / static_cast<double>(engaged);
}

double lift(double mu_test, double mu_control) {
  if (mu_control == 0.0) throw UndefinedEstimand("lift: control mean is zero");
  return 100.0 * (mu_test / mu_control - 1.0);
}

Json to_json(const LiftInterval& ci) {
  if (!ci.bounded) return Json{{"bounded", false}};
  return Json{{"bounded", true}, {"lo", ci.lo}, {"hi", ci.hi}};
}

LiftInterval fieller_ci(double mu_t, double mu_c, double sigma_t, double sigma_c, double z) {
  if (sigma_t < 0.0 || sigma_c < 0.0) throw InvalidArgument("fieller_ci: negative standard error");
  if (!(z > 0.0)) throw InvalidArgument("fieller_ci: z must be positive");
  const double z2 = z * z;
  const double vt = sigma_t * sigma_t;
  const double vc = sigma_c * sigma_c;
  const double denom = mu_c * mu_c - z2 * vc;
  const double disc = mu_t * mu_t * vc + mu_c * mu_c * vt - z2 * vt * vc;
  if (denom <= 0.0 || disc < 0.0) return LiftInterval{};
  const double root = z * std::sqrt(disc);
  const double r_minus = (mu_t * mu_c - root) / denom;
  const double r_plus = (mu_t * mu_c + root) / denom;
  return LiftInterval{true, 100.0 * (r_minus - 1.0), 100.0 * (r_plus - 1.0)};
}

void summarize(ArmReadout& arm) {
  arm.n = arm.unit_breadth.size();
  arm.engaged_units = static_cast<std::size_t>(
      std::count_if(arm.unit_depth.begin(), arm.unit_depth.end(), [](double s) { return s > 0.0; }));
  if (arm.n == 0) return;
  arm.mu_breadth = breadth_from_unit_means(arm.unit_breadth);
  arm.sigma_breadth = std::sqrt(sample_variance<double>(arm.unit_breadth) / static_cast<double>(arm.n));
  if (arm.engaged_units == 0) {
    arm.mu_depth.reset();
    arm.sigma_depth = 0.0;
    return;
  }
  arm.mu_depth = depth_estimate(arm.unit_depth);
  std::vector<double> engaged;
  for (double s : arm.unit_depth) {
    if (s > 0.0) engaged.push_back(s);
  }
  arm.sigma_depth = std::sqrt(sample_variance<double>(engaged) / static_cast<double>(engaged.size()));
}

void compute_lifts(AbReadout& r) {
  r.lift_breadth.reset();
  r.lift_depth.reset();
  r.ci_breadth = LiftInterval{};
  r.ci_depth = LiftInterval{};
  if (r.test.n > 0 && r.control.n > 0 && r.control.mu_breadth != 0.0) {
    r.lift_breadth = lift(r.test.mu_breadth, r.control.mu_breadth);
    r.ci_breadth = fieller_ci(r.test.mu_breadth, r.control.mu_breadth, r.test.sigma_breadth,
                              r.control.sigma_breadth, r.z);
  }
  if (r.test.mu_depth && r.control.mu_depth) {
    r.lift_depth = lift(*r.test.mu_depth, *r.control.mu_depth);
    r.ci_depth = fieller_ci(*r.test.mu_depth, *r.control.mu_depth, r.test.sigma_depth, r.control.sigma_depth, r.z);
  }
}

namespace {

Json arm_json(const ArmReadout& a, bool include_units) {
  Json j{{"arm", a.arm},
         {"n", a.n},
         {"engaged_units", a.engaged_units},
         {"mu_breadth", a.mu_breadth},
         {"sigma_breadth", a.sigma_breadth},
         {"mu_depth", a.mu_depth ? Json(*a.mu_depth) : Json(nullptr)},
         {"sigma_depth", a.sigma_depth}};
  if (include_units) {
    j["unit_breadth"] = a.unit_breadth;
    j["unit_depth"] = a.unit_depth;
  }
  return j;
}

Json optional_json(const std::optional<double>& x) { return x ? Json(*x) : Json(nullptr); }

}  // namespace

Json to_json(const AbReadout& r, bool include_units) {
  return Json{{"test", arm_json(r.test, include_units)},
              {"control", arm_json(r.control, include_units)},
              {"lift_breadth", optional_json(r.lift_breadth)},
              {"lift_depth", optional_json(r.lift_depth)},
              {"ci_breadth", to_json(r.ci_breadth)},
              {"ci_depth", to_json(r.ci_depth)},
              {"window_days", r.window_days},
              {"traffic_fraction", r.traffic_fraction},
              {"z", r.z},
              {"eligible_units", r.eligible_units},
              {"test_version", r.test_version},
              {"control_version", r.control_version}};
}

std::string readout_csv(const AbReadout& r) {
  auto opt = [](const std::optional<double>& x) { return x ? fmt(*x) : std::string("NA"); };
  auto lo = [](const LiftInterval& ci) { return ci.bounded ? fmt(ci.lo) : std::string("unbounded"); };
  auto hi = [](const LiftInterval& ci) { return ci.bounded ? fmt(ci.hi) : std::string("unbounded"); };
  std::string out = "metric,test_mean,control_mean,lift,ci_lo,ci_hi,significant\n";
  out += "breadth," + fmt(r.test.mu_breadth) + "," + fmt(r.control.mu_breadth) + "," + opt(r.lift_breadth) + "," +
         lo(r.ci_breadth) + "," + hi(r.ci_breadth) + "," + (r.ci_breadth.significant() ? "1" : "0") + "\n";
  out += "depth," + opt(r.test.mu_depth) + "," + opt(r.control.mu_depth) + "," + opt(r.lift_depth) + "," +
         lo(r.ci_depth) + "," + hi(r.ci_depth) + "," + (r.ci_depth.significant() ? "1" : "0") + "\n";
  return out;
}

AbReadout run_ab_test(const World& world, const ResponsePolicy& policy_test, const ResponsePolicy& policy_control,
                      const AbConfig& config, std::uint64_t seed) {
  if (config.n_units < 2) throw InvalidArgument("run_ab_test needs n_units >= 2");
  if (config.window_days < 1) throw InvalidArgument("run_ab_test needs window_days >= 1");
  if (!(config.traffic_fraction > 0.0 && config.traffic_fraction <= 0.5)) {
    throw InvalidArgument("traffic_fraction must be in (0, 0.5]");
  }
  const int max_turns = config.max_turns > 0 ? config.max_turns : world.config().max_session_turns;

  AbReadout r;
  r.test.arm = "test";
  r.control.arm = "control";
  r.window_days = config.window_days;
  r.traffic_fraction = config.traffic_fraction;
  r.z = config.z;
  r.eligible_units = config.n_units;
  r.test_version = policy_test.version();
  r.control_version = policy_control.version();

  for (std::size_t i = 0; i < config.n_units; ++i) {
    const std::uint64_t unit_seed = derive_seed(seed, {fnv1a("ab-unit"), i});
    Rng rng(unit_seed);
    const double u = rng.uniform();
    ArmReadout* arm = nullptr;
    const ResponsePolicy* policy = nullptr;
    if (u < config.traffic_fraction) {
      arm = &r.test;
      policy = &policy_test;
    } else if (u < 2.0 * config.traffic_fraction) {
      arm = &r.control;
      policy = &policy_control;
    } else {
      continue;
    }
    const Character& character = world.sample_character(rng);
    double last_quality = 0.0;
    int engaged_days = 0;
    double turns = 0.0;
    for (int d = 0; d < config.window_days; ++d) {
      if (!rng.bernoulli(visit_probability(world.config(), last_quality))) continue;
      const SessionResult s =
          world.run_session(character, *policy, max_turns, derive_seed(unit_seed, {fnv1a("ab-day"), static_cast<std::uint64_t>(d)}),
                            "ab" + std::to_string(i) + "d" + std::to_string(d));
      ++engaged_days;
      turns += static_cast<double>(s.qualities.size());
      last_quality = std::accumulate(s.qualities.begin(), s.qualities.end(), 0.0) /
                     static_cast<double>(s.qualities.size());
    }
    arm->unit_breadth.push_back(static_cast<double>(engaged_days) / static_cast<double>(config.window_days));
    arm->unit_depth.push_back(turns);
  }
  summarize(r.test);
  summarize(r.control);
  compute_lifts(r);
  return r;
}

ResponseCharacteristics response_characteristics(const std::vector<Response>& responses,
                                                 double wall_of_text_length) {
  ResponseCharacteristics c;
  c.n = responses.size();
  if (responses.empty()) return c;
  CompensatedSum<double> length;
  std::size_t lists = 0, emoji = 0, templated = 0, walls = 0;
  for (const Response& r : responses) {
    length.add(r.token_length());
    if (r.contains_list()) ++lists;
    if (r.emoji_count() > 0.0) ++emoji;
    if (r.templated_phrase()) ++templated;
    if (r.token_length() > wall_of_text_length && !r.contains_list()) ++walls;
  }
  const auto n = static_cast<double>(c.n);
  c.avg_token_count = length.value() / n;
  c.list_pct = 100.0 * static_cast<double>(lists) / n;
  c.emoji_pct = 100.0 * static_cast<double>(emoji) / n;
  c.templated_pct = 100.0 * static_cast<double>(templated) / n;
  c.wall_of_text_pct = 100.0 * static_cast<double>(walls) / n;
  return c;
}

Json to_json(const ResponseCharacteristics& c) {
  return Json{{"n", c.n},
              {"avg_token_count", c.avg_token_count},
              {"list_pct", c.list_pct},
              {"emoji_pct", c.emoji_pct},
              {"templated_pct", c.templated_pct},
              {"wall_of_text_pct", c.wall_of_text_pct}};
}

std::vector<ArtifactFeature> default_artifact_features() {
  return {{"token_length", slot::kTokenLength, false, 20.0},
          {"emoji_count", slot::kEmojiCount, false, 1.0},
          {"contains_list", slot::kContainsList, true, 0.15},
          {"templated_phrase", slot::kTemplatedPhrase, true, 0.10},
          {"sentiment", slot::kSentiment, false, 0.3}};
}

bool ArtifactReport::any_flagged() const {
  return std::any_of(features.begin(), features.end(), [](const ArtifactEntry& e) { return e.flagged; });
}

ArtifactReport artifact_report(const std::vector<Response>& chosen, const std::vector<Response>& rejected,
                               const std::vector<ArtifactFeature>& features) {
  if (chosen.empty() || rejected.empty()) throw InvalidArgument("artifact_report needs both sides nonempty");
  auto side = [](const std::vector<Response>& rs, const ArtifactFeature& f) {
    CompensatedSum<double> acc;
    for (const Response& r : rs) {
      const double v = r.text_features[f.slot];
      acc.add(f.binary ? (v > 0.5 ? 1.0 : 0.0) : v);
    }
    return acc.value() / static_cast<double>(rs.size());
  };
  ArtifactReport report;
  for (const ArtifactFeature& f : features) {
    ArtifactEntry e{f.name, f.binary, side(chosen, f), side(rejected, f), 0.0, false};
    e.delta = e.chosen - e.rejected;
    e.flagged = std::abs(e.delta) > f.threshold;
    report.features.push_back(e);
  }
  return report;
}

Json to_json(const ArtifactReport& report) {
  Json features = Json::object();
  for (const ArtifactEntry& e : report.features) {
    features[e.name] = Json{{e.binary ? "chosen_prevalence" : "chosen_mean", e.chosen},
                            {e.binary ? "rejected_prevalence" : "rejected_mean", e.rejected},
                            {"delta", e.delta},
                            {"flagged", e.flagged}};
  }
  return features;
}

}  // namespace flywheel
