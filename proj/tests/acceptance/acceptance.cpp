// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--criterion N] [--cli PATH] [--scratch DIR]

#include "flywheel/config.hpp"
#include "flywheel/curation.hpp"
#include "flywheel/evaluation.hpp"
#include "flywheel/orchestrator.hpp"
#include "flywheel/policy.hpp"
#include "flywheel/reward.hpp"
#include "flywheel/world.hpp"
#include "oracles/oracles.hpp"
#include "support.hpp"

#include <CLI11.hpp>

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace flywheel;
using testsupport::random_context;
using testsupport::random_response;
using testsupport::random_vector;

namespace {

struct Args {
  std::string cli;
  fs::path scratch = fs::temp_directory_path() / "flywheel_acceptance";
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string f3(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

EncodedPrompt random_prompt(Rng& rng, const std::string& id, Index k, Index d) {
  EncodedPrompt p;
  p.prompt.id = id;
  p.raw = Matrix(k, d);
  for (Index i = 0; i < k; ++i) {
    p.raw.row(i) = random_vector(rng, d).transpose();
    p.prompt.candidates.push_back(Response{id + "/" + std::to_string(i), p.raw.row(i).transpose(), {}});
  }
  p.features = p.raw;
  return p;
}

Vector pack(const RewardModel& m) {
  Vector v(m.weights.size() + 1);
  v << m.weights, m.bias;
  return v;
}

RewardModel unpack(RewardModel m, const Vector& v) {
  m.weights = v.head(v.size() - 1);
  m.bias = v[v.size() - 1];
  return m;
}

// ---- C1 -------------------------------------------------------------------

Outcome c1(const Args&) {
  const World world = World::from_seed(11);
  const Encoder& enc = world.encoder();
  const Index d = world.dim();
  Rng rng(101);
  double worst_value = 0, worst_grad = 0;
  auto value = [&](double got, double want) { worst_value = std::max(worst_value, std::abs(got - want)); };
  auto grad = [&](const Vector& a, const Vector& n) { worst_grad = std::max(worst_grad, oracle::max_relative_error(a, n)); };
  const int n = 25;

  for (int i = 0; i < n; ++i) {
    const Context x = random_context(world, rng, static_cast<int>(rng.index(7)));
    const Response y0 = random_response(rng, d, "a"), y1 = random_response(rng, d, "b");
    const Vector p0 = oracle::encode(enc, x, y0).cwiseProduct(enc.input_scale());
    const Vector p1 = oracle::encode(enc, x, y1).cwiseProduct(enc.input_scale());
    const Vector ctx = oracle::encode(enc, x, Response{"", Vector::Zero(d), {}}).cwiseProduct(enc.input_scale());
    const int t = static_cast<int>(rng.index(2));

    RewardModel pw = RewardModel::zeros(ModelKind::pointwise, d);
    pw.weights = random_vector(rng, d);
    pw.bias = rng.uniform(-1, 1);
    value(pointwise_loss(pw, enc, x, y0, y1), oracle::pointwise(pw.weights, pw.bias, p0, p1));

    RewardModel pr = RewardModel::zeros(ModelKind::pairwise, d);
    pr.weights = random_vector(rng, 2 * d);
    pr.bias = rng.uniform(-1, 1);
    const double s = pr.weights.head(d).dot(p0 - p1) + pr.weights.tail(d).dot(ctx) + pr.bias;
    value(pairwise_loss(pr, enc, x, y0, y1, t), oracle::bce(s, t));

    RewardModel sg = RewardModel::zeros(ModelKind::signal, d, "thumb_up");
    sg.weights = random_vector(rng, d);
    sg.bias = rng.uniform(-1, 1);
    value(signal_loss(sg, enc, x, y0, t), oracle::bce(sg.weights.dot(p0) + sg.bias, t));

    // Objective gradients of every model kind on a small random dataset.
    for (ModelKind kind : {ModelKind::pointwise, ModelKind::pairwise, ModelKind::signal}) {
      const Index dd = kind == ModelKind::pairwise ? 2 * d : d;
      RewardModel m = RewardModel::zeros(kind, d, "thumb_up");
      m.weights = random_vector(rng, dd);
      m.bias = rng.uniform(-1, 1);
      std::vector<Example> data;
      for (int e = 0; e < 6; ++e) data.push_back({random_vector(rng, dd), random_vector(rng, dd), int(rng.index(2)), "b"});
      const Gradient g = objective_gradient(m, data, 0.01);
      Vector analytic(dd + 1);
      analytic << g.weights, g.bias;
      grad(analytic, oracle::central_difference([&](const Vector& v) { return objective(unpack(m, v), data, 0.01); },
                                                pack(m)));
    }
  }

  for (int i = 0; i < n; ++i) {
    const Index k = 3 + static_cast<Index>(rng.index(4));
    const EncodedPrompt p = random_prompt(rng, "p", k, 5);
    const double temp = rng.uniform(0.5, 2);
    const PolicyCheckpoint pi("V", random_vector(rng, 5, 2), temp), ref("R", random_vector(rng, 5, 2), temp);
    const double beta = rng.uniform(0.05, 2);
    const Index c = 0, r = k - 1;
    value(dpo_loss(pi, ref, p, c, r, beta), oracle::dpo(p.features, pi.weights, ref.weights, temp, c, r, beta));
    grad(dpo_gradient(pi, ref, p, c, r, beta),
         oracle::central_difference([&](const Vector& w) { return dpo_loss(PolicyCheckpoint("V", w, temp), ref, p, c, r, beta); },
                                    pi.weights));

    const std::vector<EncodedPrompt> ps{p};
    const std::vector<RjsSample> data{RjsSample{0, c, p.prompt.candidates[0].id, 0, "V"}};
    grad(sft_gradient(pi, ps, data),
         oracle::central_difference([&](const Vector& w) { return sft_objective(PolicyCheckpoint("V", w, temp), ps, data); },
                                    pi.weights));
  }

  for (int i = 0; i < n; ++i) {
    const Index k = 3 + static_cast<Index>(rng.index(3));
    const EncodedPrompt p = random_prompt(rng, "g", k, 4);
    const double temp = rng.uniform(0.5, 1.5);
    const PolicyCheckpoint theta("T", random_vector(rng, 4), temp);
    const PolicyCheckpoint old("O", theta.weights + random_vector(rng, 4, 0.3), temp);
    const PolicyCheckpoint gen("G", theta.weights + random_vector(rng, 4, 0.3), temp);
    const PolicyCheckpoint ref("R", random_vector(rng, 4), temp);
    RlGroup g;
    g.prompt = &p;
    std::vector<double> rewards;
    const int gs = 4 + static_cast<int>(rng.index(4));
    for (int s = 0; s < gs; ++s) {
      g.samples.push_back(static_cast<Index>(rng.index(static_cast<std::size_t>(k))));
      rewards.push_back(rng.uniform(-1, 1));
    }
    g.rewards = Eigen::Map<const Vector>(rewards.data(), gs);
    RlConfig cfg;
    cfg.clip_epsilon = rng.uniform(0.05, 0.4);
    cfg.kl_coeff = rng.uniform(0, 2);
    const Vector p_gen = oracle::probs(p.features, gen.weights, temp);
    value(grpo_loss(theta, old, gen, ref, g, cfg),
          oracle::grpo(p.features, theta.weights, old.weights, p_gen, ref.weights, temp, g.samples, rewards,
                       cfg.clip_epsilon, cfg.kl_coeff));
    grad(grpo_gradient(theta, old, gen, ref, g, cfg),
         oracle::central_difference(
             [&](const Vector& w) { return grpo_loss(PolicyCheckpoint("T", w, temp), old, gen, ref, g, cfg); },
             theta.weights));
  }

  return {worst_value <= 1e-10 && worst_grad < 1e-4,
          std::to_string(n) + " instances per loss, max |loss - oracle| = " + f3(worst_value) +
              ", max FD relative error = " + f3(worst_grad)};
}

// ---- C2 -------------------------------------------------------------------

Outcome c2(const Args&) {
  const World world = World::from_seed(12);
  const std::vector<EncodedPrompt> prompts = testsupport::session_prompts(world, 100, 7, 4);
  Rng rng(3);
  RewardModel rm = RewardModel::zeros(ModelKind::pointwise, world.dim());
  rm.weights = random_vector(rng, world.dim());
  rm.bias = 0.2;
  const CompositeScorer scorer(rm);
  const std::vector<PolicyCheckpoint> models{PolicyCheckpoint("V1", random_vector(rng, world.dim()), 0.8),
                                             PolicyCheckpoint("V2", random_vector(rng, world.dim()), 1.0),
                                             PolicyCheckpoint("V3", random_vector(rng, world.dim()), 1.4)};
  const RjsConfig cfg{6, 0.3, 4};
  std::vector<Matrix> feats;
  std::vector<std::string> ids;
  std::vector<Vector> scores;
  for (const EncodedPrompt& p : prompts) {
    feats.push_back(p.features);
    ids.push_back(p.prompt.id);
    scores.push_back((p.features * rm.weights).array() + rm.bias);
  }
  std::vector<std::pair<Vector, double>> om;
  for (const auto& m : models) om.emplace_back(m.weights, m.temperature);
  const auto got = rejection_sample(prompts, models, scorer, cfg, 2024);
  const auto want = oracle::rejection_trace(feats, ids, scores, om, cfg.k, cfg.tau, cfg.probe_samples, 2024);
  bool same = got.size() == want.size();
  for (std::size_t j = 0; same && j < got.size(); ++j) {
    same = got[j].prompt_index == want[j].prompt && got[j].candidate == want[j].candidate &&
           got[j].reward == want[j].reward && got[j].model_version == models[want[j].model].policy_version &&
           got[j].response_id == prompts[want[j].prompt].prompt.candidates[static_cast<std::size_t>(want[j].candidate)].id;
  }
  std::map<std::string, int> routed;
  for (const auto& s : got) ++routed[s.model_version];
  std::string mix;
  for (const auto& [v, c] : routed) mix += " " + v + ":" + std::to_string(c);
  return {same, "100 prompts, " + std::to_string(got.size()) + " kept (oracle " + std::to_string(want.size()) +
                    "), routing" + mix + (same ? ", identical" : ", MISMATCH")};
}

// ---- C3 -------------------------------------------------------------------

// One arm of a synthetic unit population: heterogeneous visit rates and
// per-day turn counts, identical in both arms.
ArmReadout null_arm(Rng& rng, std::size_t n, int days) {
  ArmReadout a;
  a.unit_breadth.reserve(n);
  a.unit_depth.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = rng.uniform(0.05, 0.8);
    int engaged = 0;
    double turns = 0;
    for (int dday = 0; dday < days; ++dday) {
      if (!rng.bernoulli(p)) continue;
      ++engaged;
      turns += 1 + std::floor(rng.uniform(0, 8));
    }
    a.unit_breadth.push_back(engaged / static_cast<double>(days));
    a.unit_depth.push_back(turns);
  }
  summarize(a);
  return a;
}

Outcome c3(const Args&) {
  Rng rng(303);
  const int draws = 10000;
  int cover_b = 0, cover_d = 0;
  for (int i = 0; i < draws; ++i) {
    AbReadout r;
    r.test = null_arm(rng, 400, 7);
    r.control = null_arm(rng, 400, 7);
    r.z = 1.96;
    compute_lifts(r);
    cover_b += r.ci_breadth.covers(0.0);
    cover_d += r.ci_depth.covers(0.0);
  }
  const double rb = cover_b / double(draws), rd = cover_d / double(draws);

  Rng prng(304);
  int bounded = 0, agree = 0;
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const double mt = prng.uniform(0.1, 5), mc = prng.uniform(0.1, 5);
    const double st = prng.uniform(0, 0.3) * mt, sc = prng.uniform(0, 0.3) * mc;
    const double z = prng.uniform(1, 3);
    const LiftInterval ci = fieller_ci(mt, mc, st, sc, z);
    const auto want = oracle::fieller(mt, mc, st, sc, z);
    if (ci.bounded != want.has_value()) continue;
    if (want) {
      ++bounded;
      const double e = std::max(std::abs(ci.lo - want->first), std::abs(ci.hi - want->second));
      worst = std::max(worst, e);
      if (e > 1e-9) continue;
    }
    ++agree;
  }
  const bool pass = rb >= 0.94 && rb <= 0.96 && rd >= 0.94 && rd <= 0.96 && agree == 1000;
  return {pass, "null coverage breadth " + f3(rb) + " depth " + f3(rd) + " over 10000 draws; Fieller agrees " +
                    std::to_string(agree) + "/1000 (" + std::to_string(bounded) + " bounded, max abs error " + f3(worst) +
                    ")"};
}

// ---- C4 -------------------------------------------------------------------

Outcome c4(const Args&) {
  int ok = 0, total = 0;
  auto near = [&](double got, double want) {
    ++total;
    ok += std::abs(got - want) <= 1e-12;
  };
  auto throws = [&](const std::function<void()>& f) {
    ++total;
    try {
      f();
    } catch (const UndefinedEstimand&) {
      ++ok;
    }
  };
  near(breadth_estimate({{1, 0, 1, 0, 0, 1, 0}}), 3.0 / 7.0);
  near(breadth_from_unit_means({1.0, 0.0, 0.5}), 0.5);
  near(breadth_estimate({{0, 0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0, 0}}), 0.0);
  near(depth_estimate({0, 4, 6}), 5.0);
  near(depth_estimate({7}), 7.0);
  throws([] { depth_estimate({0, 0}); });
  near(lift(1.05, 1.00), 5.0);
  near(lift(0.8, 0.8), 0.0);
  near(lift(0.9, 1.0), -10.0);
  const LiftInterval point = fieller_ci(1.1, 1.0, 0.0, 0.0);
  near(point.lo, 10.0);
  near(point.hi, 10.0);
  const LiftInterval worked = fieller_ci(1.05, 1.00, 0.01, 0.01, 1.96);
  const auto want = oracle::fieller(1.05, 1.00, 0.01, 0.01, 1.96);
  ++total;
  ok += worked.bounded && want && std::abs(worked.lo - want->first) <= 1e-9 && std::abs(worked.hi - want->second) <= 1e-9;
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " worked examples exact"};
}

// ---- C5, C6, C10 ------------------------------------------------------------

CycleConfig seeded(std::uint64_t s) {
  CycleConfig c = default_cycle_config();
  c.seed = s;
  c.world_seed = s;
  return c;
}

Outcome c5(const Args&) {
  int climbs = 0;
  std::string per;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    CycleConfig cfg = seeded(s);
    cfg.n_cycles = 5;
    const CampaignResult r = run_campaign(World::from_seed(s, cfg.dim), cfg);
    double prev = r.records.front().true_engagement_baseline;
    const double start = prev;
    bool mono = true;
    int promoted = 0;
    for (const CycleRecord& rec : r.records) {
      mono = mono && rec.true_engagement_promoted >= prev;
      prev = rec.true_engagement_promoted;
      promoted += rec.decision == "promote";
    }
    const bool up = mono && prev > start;
    climbs += up;
    per += " " + std::to_string(s) + (up ? "+" : "-") + std::to_string(promoted) + "p(" + f3(start) + "->" + f3(prev) + ")";
  }
  return {climbs >= 8, std::to_string(climbs) + "/10 seeds nondecreasing and above start; seed,promotions:" + per};
}

Outcome c6(const Args&) {
  int hits = 0;
  std::string per;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    CycleConfig cfg = seeded(s);
    cfg.n_cycles = 3;
    cfg.failure_cycle = 3;
    const CampaignResult r = run_campaign(World::from_seed(s, cfg.dim), cfg);
    const CycleRecord& rec = r.records.back();
    const bool hot = rec.rm_winrate_user > 0.65;
    const bool flat = rec.ab.lift_depth && *rec.ab.lift_depth <= 0.0;
    const bool blocked = rec.gate_decision == GateDecision::block && rec.promoted_baseline == rec.baseline_version;
    hits += hot && flat && blocked;
    per += " " + std::to_string(s) + ":" + f3(rec.rm_winrate_user) + "/" +
           (rec.ab.lift_depth ? f3(*rec.ab.lift_depth) : std::string("NA")) + "/" + to_string(rec.gate_decision);
  }
  return {hits >= 8, std::to_string(hits) + "/10 seeds with win rate > 0.65, depth lift <= 0 and block; seed:wu/depth/gate" + per};
}

Outcome c10(const Args&) {
  int wins = 0;
  std::string per;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    CycleConfig cfg = seeded(s);
    cfg.n_cycles = 4;
    const CampaignResult camp = run_campaign(World::from_seed(s, cfg.dim), cfg);
    CycleOptions near, off;
    near.prompt_source = PromptSource::near_policy;
    off.prompt_source = PromptSource::off_policy;
    const CycleOutcome a = run_cycle(camp.state, cfg, 5, near);
    const CycleOutcome b = run_cycle(camp.state, cfg, 5, off);
    const double da = a.record.ab.lift_depth.value_or(-1e300), db = b.record.ab.lift_depth.value_or(-1e300);
    wins += da > db;
    per += " " + std::to_string(s) + ":" + f3(da) + "/" + f3(db);
  }
  return {wins >= 8, std::to_string(wins) + "/10 seeds near beats off on depth lift; seed:near/off" + per};
}

// ---- C7, C8 -------------------------------------------------------------------

// Pairs of two distinct uniformly drawn candidates over uniform-policy session prompts.
std::vector<PreferencePair> raw_pairs(const World& world, int n, std::uint64_t seed, const std::string& batch) {
  const std::vector<EncodedPrompt> prompts = testsupport::session_prompts(world, n, seed, 4);
  Rng rng(derive_seed(seed, {fnv1a("pairs")}));
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& cands = prompts[i].prompt.candidates;
    const std::size_t a = rng.index(cands.size());
    const std::size_t b = (a + 1 + rng.index(cands.size() - 1)) % cands.size();
    PreferencePair p;
    p.context = prompts[i].prompt.context;
    p.y0 = cands[a];
    p.y1 = cands[b];
    p.batch_id = batch;
    p.id = batch + "-" + std::to_string(i);
    out.push_back(std::move(p));
  }
  return out;
}

void single_review(const World& world, std::vector<PreferencePair>& pairs, std::uint64_t seed) {
  const auto ann = world.annotator_ids();
  Rng rng(seed);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string& a = ann[rng.index(ann.size())];
    pairs[i].labels = {{a, world.annotate_pair(pairs[i].context, pairs[i].y0, pairs[i].y1, a, derive_seed(seed, {i}))}};
  }
}

void triple_review(const World& world, std::vector<PreferencePair>& pairs, std::uint64_t seed) {
  std::vector<std::string> ann = world.annotator_ids();
  Rng rng(seed);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    rng.shuffle(ann);
    const std::array<std::string, 3> three{ann[0], ann[1], ann[2]};
    const std::array<int, 3> t = world.multi_review(pairs[i], three, derive_seed(seed, {i}));
    pairs[i].labels.clear();
    for (int j = 0; j < 3; ++j) pairs[i].labels.push_back({three[j], t[j]});
  }
}

RewardModel fit(const std::vector<PreferencePair>& pairs, const Encoder& enc) {
  return train(RewardModel::zeros(ModelKind::pointwise, enc.dim()), pointwise_examples(pairs, enc), TrainConfig{});
}

Outcome c7(const Args&) {
  const World world = World::from_seed(21);
  const Encoder& enc = world.encoder();
  std::vector<PreferencePair> train_pairs = raw_pairs(world, 3000, 71, "train");
  std::vector<PreferencePair> eval_pairs = raw_pairs(world, 3000, 72, "eval");
  triple_review(world, train_pairs, 73);
  triple_review(world, eval_pairs, 74);
  const AnnotationVariants v = build_annotation_variants(train_pairs, 75);
  const std::vector<PreferencePair> eval = build_annotation_variants(eval_pairs, 76).multi_review;

  const double base = accuracy(RewardModel::zeros(ModelKind::pointwise, enc.dim()), enc, eval);
  const double multi = accuracy(fit(v.multi_review, enc), enc, eval);
  const double all = accuracy(fit(v.single_all, enc), enc, eval);
  const double one = accuracy(fit(v.single_random, enc), enc, eval);
  const bool pass = multi - base >= 0.02 && std::abs(all - multi) <= 0.02 && std::abs(one - multi) <= 0.02;
  return {pass, "multi-review eval set of " + std::to_string(eval.size()) + ": untrained " + f3(base) + ", multi_review " +
                    f3(multi) + " (" + std::to_string(v.multi_review.size()) + " pairs), single_all " + f3(all) +
                    ", single_random " + f3(one)};
}

struct ShiftResult {
  double b1_before, b1_after, b2_zero, b2_after;
  bool pass() const { return b1_before - b1_after <= 0.05 && b2_after - b2_zero >= 0.05; }
  std::string str() const {
    return "B1 " + f3(b1_before) + " -> " + f3(b1_after) + ", B2 zero-shot " + f3(b2_zero) + " -> " + f3(b2_after);
  }
};

ShiftResult batch_shift(const World& a, const World& b, std::uint64_t seed) {
  const Encoder& enc = a.encoder();
  std::vector<PreferencePair> b1 = raw_pairs(a, 3000, derive_seed(seed, {1}), "B1");
  std::vector<PreferencePair> b1_eval = raw_pairs(a, 6000, derive_seed(seed, {2}), "B1e");
  std::vector<PreferencePair> b2 = raw_pairs(b, 3000, derive_seed(seed, {3}), "B2");
  std::vector<PreferencePair> b2_eval = raw_pairs(b, 6000, derive_seed(seed, {4}), "B2e");
  single_review(a, b1, derive_seed(seed, {5}));
  single_review(a, b1_eval, derive_seed(seed, {6}));
  single_review(b, b2, derive_seed(seed, {7}));
  single_review(b, b2_eval, derive_seed(seed, {8}));
  const RewardModel m1 = fit(b1, enc);
  std::vector<PreferencePair> both = b1;
  both.insert(both.end(), b2.begin(), b2.end());
  const RewardModel m12 = fit(both, enc);
  return {accuracy(m1, enc, b1_eval), accuracy(m12, enc, b1_eval), accuracy(m1, enc, b2_eval),
          accuracy(m12, enc, b2_eval)};
}

// B2's world redraws the upper half of the latent preference weights of B1's
// world; "never" is read as every one of five world seeds.
Outcome c8(const Args&) {
  int ok = 0;
  std::string per;
  for (std::uint64_t seed = 22; seed <= 26; ++seed) {
    const WorldConfig base = default_world_config(seed);
    Rng rng(derive_seed(seed, {fnv1a("shift")}));
    WorldConfig shifted = base;
    for (Index j = slot::kNamedCount + (base.dim - slot::kNamedCount) / 2; j < base.dim; ++j) {
      shifted.latent_quality_weights[j] = rng.uniform(-1, 1);
    }
    const World a(base), b(shifted);
    if (b.encoder().latent_projection() != a.encoder().latent_projection()) return {false, "shift changed the encoder"};
    const ShiftResult r = batch_shift(a, b, 7 * seed);
    ok += r.pass();
    per += " " + std::to_string(seed) + ": " + r.str() + ";";
  }
  return {ok == 5, std::to_string(ok) + "/5 world seeds;" + per};
}

// ---- C9 -------------------------------------------------------------------

Outcome c9(const Args&) {
  const World world = World::from_seed(9);
  UniformPolicy uniform;
  // A pool of sessions; instances are random subsets with random character mixes.
  std::vector<Conversation> pool;
  Rng prng(90);
  for (int i = 0; i < 3000; ++i) {
    const Character& c = world.characters()[prng.index(world.characters().size())];
    const int turns = 1 + static_cast<int>(prng.index(8));
    pool.push_back(world.simulate_session(c, uniform, turns, derive_seed(91, {std::uint64_t(i)}), "s" + std::to_string(i)));
  }
  std::vector<std::size_t> first_pool, deep_pool;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    int model_turns = 0;
    for (const Turn& t : pool[i].turns) model_turns += t.role == Role::model;
    (model_turns == 1 ? first_pool : deep_pool).push_back(i);
  }

  const CurationConfig cfg;
  Rng rng(92);
  int ok = 0;
  std::size_t min_out = SIZE_MAX, max_out = 0;
  std::string first_bad;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t n = 50 + rng.index(450);
    const double first_share = rng.uniform(0.01, 0.5);
    const std::size_t n_chars = 1 + rng.index(world.characters().size());
    std::vector<Conversation> traffic;
    while (traffic.size() < n) {
      const auto& from = rng.bernoulli(first_share) ? first_pool : deep_pool;
      Conversation c = pool[from[rng.index(from.size())]];
      // Squash onto the first n_chars characters so the cap binds harder.
      std::size_t idx = 0;
      while (world.characters()[idx].id != c.character.id) ++idx;
      c.character = world.characters()[idx % n_chars];
      c.id = "i" + std::to_string(inst) + "-" + std::to_string(traffic.size());
      traffic.push_back(std::move(c));
    }
    traffic[rng.index(traffic.size())] = [&] {
      Conversation c = pool[first_pool[rng.index(first_pool.size())]];
      c.id = "i" + std::to_string(inst) + "-first";
      return c;
    }();

    std::vector<Conversation> out;
    try {
      out = stratified_adjust(traffic, cfg, derive_seed(93, {std::uint64_t(inst)}));
    } catch (const std::exception& e) {
      if (first_bad.empty()) first_bad = "instance " + std::to_string(inst) + " threw: " + e.what();
      continue;
    }
    const std::size_t m = out.size();
    std::map<std::string, std::size_t> per_char;
    std::size_t first = 0;
    std::set<std::string> in_ids;
    for (const auto& c : traffic) in_ids.insert(c.id);
    bool subset = m > 0;
    for (const auto& c : out) {
      ++per_char[c.character.id];
      int model_turns = 0;
      for (const Turn& t : c.turns) model_turns += t.role == Role::model;
      first += model_turns == 1;
      subset = subset && in_ids.count(c.id);
    }
    const auto cap = static_cast<std::size_t>(std::ceil(0.03 * static_cast<double>(m) - 1e-9));
    bool caps = true;
    for (const auto& [id, count] : per_char) caps = caps && count <= cap;
    const bool floor_ok = 10 * first >= m;
    if (subset && caps && floor_ok) {
      ++ok;
      min_out = std::min(min_out, m);
      max_out = std::max(max_out, m);
    } else if (first_bad.empty()) {
      first_bad = "instance " + std::to_string(inst) + " violated a constraint";
    }
  }
  return {ok == 200, std::to_string(ok) + "/200 instances satisfy >= 10% first-turn and <= ceil(3% m) per character" +
                         (ok ? " (output sizes " + std::to_string(min_out) + ".." + std::to_string(max_out) + ")" : "") +
                         (first_bad.empty() ? "" : "; " + first_bad)};
}

// ---- C11 ------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

// Runs every subcommand once inside `dir`; returns "" or the failing command.
std::string cli_pass(const std::string& cli, const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path camp = dir / "campaign";
  const std::string exe = quote(cli);
  const std::string cfg = quote(camp / "config.toml");
  const std::string world = quote(camp / "world.json");
  const std::string traffic = quote(camp / "cycles" / "cycle-01" / "traffic.jsonl");
  const std::string pairs = quote(camp / "cycles" / "cycle-01" / "pairs_user.jsonl");
  const std::string v0 = quote(camp / "checkpoints" / "V0.json");
  const std::vector<std::pair<std::string, std::string>> commands{
      {"init", "init --world-seed 5 --out " + quote(camp)},
      {"run", "run --config " + cfg + " --cycles 2"},
      {"report-csv", "report --dir " + quote(camp) + " --format csv"},
      {"report-json", "report --dir " + quote(camp) + " --format json"},
      {"report-series", "report --dir " + quote(camp) + " --format series"},
      {"curate", "curate --in " + traffic + " --out " + quote(dir / "curated.jsonl") + " --config " + cfg + " --world " + world},
      {"train-rm-pointwise", "train-rm --pairs " + pairs + " --kind pointwise --out " + quote(dir / "rm.json") + " --config " + cfg + " --world " + world},
      {"train-rm-pairwise", "train-rm --pairs " + pairs + " --kind pairwise --out " + quote(dir / "rm_pair.json") + " --config " + cfg + " --world " + world},
      {"train-rm-signal", "train-rm --traffic " + traffic + " --kind signal --signal thumb_up --out " + quote(dir / "rm_thumb.json") + " --config " + cfg + " --world " + world},
      {"train-policy-sft", "train-policy --stage sft --config " + cfg + " --in " + v0 + " --out " + quote(dir / "sft.json") + " --traffic " + traffic + " --rm " + quote(dir / "rm.json") + " --world " + world + " --log " + quote(dir / "sft_log.jsonl")},
      {"train-policy-dpo", "train-policy --stage dpo --config " + cfg + " --in " + quote(dir / "sft.json") + " --out " + quote(dir / "dpo.json") + " --pairs " + pairs + " --world " + world + " --log " + quote(dir / "dpo_log.jsonl")},
      {"train-policy-rl", "train-policy --stage rl --config " + cfg + " --in " + quote(dir / "dpo.json") + " --out " + quote(dir / "rl.json") + " --traffic " + traffic + " --rm " + quote(dir / "rm.json") + " --world " + world + " --log " + quote(dir / "rl_log.jsonl") + " --version X1"},
      {"ab-test", "ab-test --world " + world + " --test " + quote(dir / "rl.json") + " --control " + v0 + " --units 3000 --seed 4 --out " + quote(dir / "ab.json") + " --csv " + quote(dir / "ab.csv")},
  };
  for (const auto& [name, args] : commands) {
    const std::string cmd = exe + " " + args + " > " + quote(dir / (name + ".stdout")) + " 2> " + quote(dir / (name + ".stderr"));
    const int rc = std::system(cmd.c_str());
    const int code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ofstream(dir / (name + ".rc")) << code << "\n";
    if (code != 0 && !(name == "run" && code == 2)) return name + " exited " + std::to_string(code) + ": " + slurp(dir / (name + ".stderr"));
  }
  return {};
}

Outcome c11(const Args& args) {
  if (args.cli.empty()) return {false, "no --cli given"};
  const fs::path root = args.scratch / "C11";
  const fs::path work = root / "work";
  std::map<std::string, std::string> first;
  for (int pass = 0; pass < 2; ++pass) {
    const std::string err = cli_pass(args.cli, work);
    if (!err.empty()) return {false, "pass " + std::to_string(pass + 1) + ": " + err};
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(work)) {
      if (e.is_regular_file()) files[fs::relative(e.path(), work).string()] = slurp(e.path());
    }
    if (pass == 0) {
      first = std::move(files);
      continue;
    }
    std::size_t json_csv = 0;
    for (const auto& [name, body] : files) {
      const auto it = first.find(name);
      if (it == first.end() || it->second != body) return {false, name + " differs between runs"};
      const std::string ext = fs::path(name).extension().string();
      json_csv += ext == ".json" || ext == ".jsonl" || ext == ".csv";
    }
    if (files.size() != first.size()) return {false, "the two runs wrote different file sets"};
    return {true, "13 commands run twice; " + std::to_string(files.size()) + " files byte-identical (" +
                      std::to_string(json_csv) + " JSON/JSONL/CSV)"};
  }
  return {false, "unreachable"};
}

struct Criterion {
  Outcome (*run)(const Args&);
  double budget_seconds;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int which = 0;
  Args args;
  std::string scratch;
  app.add_option("--criterion", which, "Criterion 1..11 (default: all)")->check(CLI::Range(0, 11));
  app.add_option("--cli", args.cli, "Path to the flywheel executable");
  app.add_option("--scratch", scratch, "Scratch directory");
  CLI11_PARSE(app, argc, argv);
  if (!scratch.empty()) args.scratch = scratch;

  const std::map<int, Criterion> criteria{{1, {c1, 10}},   {2, {c2, 5}},    {3, {c3, 120}}, {4, {c4, 10}},
                                          {5, {c5, 600}},  {6, {c6, 300}},  {7, {c7, 120}}, {8, {c8, 120}},
                                          {9, {c9, 30}},   {10, {c10, 300}}, {11, {c11, 600}}};
  bool all_pass = true;
  for (const auto& [n, c] : criteria) {
    if (which != 0 && which != n) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(args);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs < c.budget_seconds;
    all_pass = all_pass && pass;
    std::printf("C%d %s %s [%.1fs of %.0fs]\n", n, pass ? "PASS" : "FAIL", o.detail.c_str(), secs, c.budget_seconds);
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
