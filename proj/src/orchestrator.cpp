#include "flywheel/orchestrator.hpp"

#include "flywheel/curation.hpp"
#include "flywheel/math.hpp"
#include "flywheel/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>

namespace flywheel {
namespace {

std::string pad(int value, int width) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%0*d", width, value);
  return buf;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

template <typename F>
auto stage(const std::string& name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

bool eval_split(const std::string& session_id) { return (fnv1a(session_id) & 1U) == 1U; }

struct Traffic {
  std::vector<Conversation> train;
  std::vector<Conversation> eval;
};

Traffic collect_traffic(const World& world, const ResponsePolicy& policy, int sessions, int max_turns,
                        std::uint64_t seed, const std::string& prefix, bool uniform_characters) {
  Traffic t;
  for (int s = 0; s < sessions; ++s) {
    const auto us = static_cast<std::uint64_t>(s);
    const std::string id = prefix + pad(s, 5);
    Rng rng(derive_seed(seed, {fnv1a("traffic-character"), us}));
    const Character& character = uniform_characters ? world.characters()[rng.index(world.characters().size())]
                                                    : world.sample_character(rng);
    Conversation conv =
        world.simulate_session(character, policy, max_turns, derive_seed(seed, {fnv1a("traffic-session"), us}), id);
    (eval_split(id) ? t.eval : t.train).push_back(std::move(conv));
  }
  return t;
}

std::vector<EncodedPrompt> encode_prompts(const Encoder& encoder, const std::vector<Conversation>& convs) {
  std::vector<EncodedPrompt> out;
  out.reserve(convs.size());
  for (const Conversation& c : convs) out.push_back(encoder.encode_prompt(prompt_from_conversation(c)));
  return out;
}

// Two distinct candidates drawn from the policy, single-annotated.
std::vector<PreferencePair> build_pairs(const World& world, const ResponsePolicy& policy,
                                        const std::vector<EncodedPrompt>& prompts, const std::string& batch_id,
                                        PairSource source, std::uint64_t seed) {
  const std::vector<std::string> annotators = world.annotator_ids();
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const EncodedPrompt& p = prompts[i];
    const std::uint64_t ps = derive_seed(seed, {fnv1a(p.prompt.id)});
    Rng rng(ps);
    Vector probs = policy.probabilities(p);
    const auto a = static_cast<Index>(rng.categorical(probs));
    probs[a] = 0.0;
    const Index b = probs.sum() > 0.0 ? static_cast<Index>(rng.categorical(probs / probs.sum()))
                                      : (a + 1 + static_cast<Index>(rng.index(static_cast<std::size_t>(p.size() - 1)))) % p.size();
    PreferencePair pair;
    pair.context = p.prompt.context;
    pair.y0 = p.prompt.candidates[static_cast<std::size_t>(a)];
    pair.y1 = p.prompt.candidates[static_cast<std::size_t>(b)];
    pair.batch_id = batch_id;
    pair.source = source;
    pair.id = p.prompt.id;
    const std::string& annotator = annotators[rng.index(annotators.size())];
    pair.labels.push_back({annotator, world.annotate_pair(pair.context, pair.y0, pair.y1, annotator, ps)});
    out.push_back(std::move(pair));
  }
  return out;
}

RewardModel train_pointwise(const std::vector<PreferencePair>& pairs, const Encoder& encoder,
                            const TrainConfig& config) {
  return train(RewardModel::zeros(ModelKind::pointwise, encoder.dim()), pointwise_examples(pairs, encoder), config);
}

// Characters with the shortest ideal lengths until the slice holds the
// requested share of pairs.
std::vector<PreferencePair> narrow_slice(const std::vector<PreferencePair>& pairs, double fraction) {
  const auto want =
      std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(pairs.size()))));
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Character& ca = pairs[a].context.character;
    const Character& cb = pairs[b].context.character;
    if (ca.ideal_length() != cb.ideal_length()) return ca.ideal_length() < cb.ideal_length();
    return ca.id < cb.id;
  });
  order.resize(std::min(want, order.size()));
  std::sort(order.begin(), order.end());
  std::vector<PreferencePair> out;
  for (std::size_t i : order) out.push_back(pairs[i]);
  return out;
}

double winrate_on(const RewardModel& rm, const Encoder& encoder, const ResponsePolicy& candidate,
                  const ResponsePolicy& baseline, const std::vector<EncodedPrompt>& prompts, int samples,
                  std::uint64_t seed) {
  std::vector<Response> fresh;
  std::vector<Response> old;
  std::vector<Context> contexts;
  for (const EncodedPrompt& p : prompts) {
    const std::uint64_t ps = derive_seed(seed, {fnv1a(p.prompt.id)});
    auto a = sample(candidate, p, samples, derive_seed(ps, {fnv1a("new")}));
    auto b = sample(baseline, p, samples, derive_seed(ps, {fnv1a("old")}));
    for (int s = 0; s < samples; ++s) {
      fresh.push_back(std::move(a[static_cast<std::size_t>(s)]));
      old.push_back(std::move(b[static_cast<std::size_t>(s)]));
      contexts.push_back(p.prompt.context);
    }
  }
  if (contexts.empty()) return 0.5;
  return rm_winrate(rm, encoder, fresh, old, contexts);
}

void write_jsonl_json(const std::filesystem::path& path, const std::vector<Json>& rows) {
  write_jsonl<Json>(path, rows);
}

}  // namespace

std::string batch_id_for_cycle(int cycle) {
  using namespace std::chrono;
  const sys_days start = year{2024} / September / day{23};
  const year_month_day d{start + days{30 * (cycle - 1)}};
  const int yy = static_cast<int>(d.year()) % 100;
  return pad(yy, 2) + pad(static_cast<int>(static_cast<unsigned>(d.month())), 2) +
         pad(static_cast<int>(static_cast<unsigned>(d.day())), 2);
}

double true_engagement(const World& world, const ResponsePolicy& policy, const std::vector<EncodedPrompt>& prompts) {
  CompensatedSum<double> acc;
  for (const EncodedPrompt& p : prompts) acc.add(world.expected_engagement(p, policy.probabilities(p)));
  return prompts.empty() ? 0.0 : acc.value() / static_cast<double>(prompts.size());
}

CampaignState initial_state(const World& world, const CycleConfig& config) {
  CampaignState s{world, PolicyCheckpoint::zeros(world.dim(), "V0"), {}, {}, {}, {}, 1};
  s.promoted.push_back(s.baseline);
  const UniformPolicy uniform;
  const Traffic oracle = collect_traffic(world, uniform, config.true_engagement_prompts, config.max_session_turns,
                                         derive_seed(config.seed, {fnv1a("oracle-prompts")}), "oracle-", false);
  std::vector<Conversation> all = oracle.train;
  all.insert(all.end(), oracle.eval.begin(), oracle.eval.end());
  std::sort(all.begin(), all.end(), [](const Conversation& a, const Conversation& b) { return a.id < b.id; });
  s.oracle_prompts = encode_prompts(world.encoder(), all);
  return s;
}

Json to_json(const CycleRecord& r) {
  return Json{{"cycle", r.cycle},
              {"version", r.version},
              {"baseline_version", r.baseline_version},
              {"batch_id", r.batch_id},
              {"failure_injected", r.failure_injected},
              {"counts",
               {{"traffic_sessions", r.traffic_sessions},
                {"curated", r.curated},
                {"user_pairs", r.user_pairs},
                {"internal_pairs", r.internal_pairs},
                {"rjs_accepted", r.rjs_accepted},
                {"rl_prompts", r.rl_prompts}}},
              {"user_rm_accuracy_eval", r.user_rm_accuracy_eval},
              {"rm_winrate_internal", r.rm_winrate_internal},
              {"rm_winrate_user", r.rm_winrate_user},
              {"gate_decision", to_string(r.gate_decision)},
              {"ab", to_json(r.ab)},
              {"artifact_report", to_json(r.artifact_report)},
              {"response_characteristics", to_json(r.response_characteristics)},
              {"decision", r.decision},
              {"promoted_baseline", r.promoted_baseline},
              {"diagnostic_oracle",
               {{"true_engagement_candidate", r.true_engagement_candidate},
                {"true_engagement_baseline", r.true_engagement_baseline},
                {"true_engagement_promoted", r.true_engagement_promoted},
                {"rl_sampled_emoji_start", r.rl_emoji_start},
                {"rl_sampled_emoji_end", r.rl_emoji_end}}}};
}

CycleOutcome run_cycle(const CampaignState& state, const CycleConfig& config, int cycle,
                       const CycleOptions& options) {
  validate(config);
  const World& world = state.world;
  const Encoder& encoder = world.encoder();
  const std::uint64_t cs = derive_seed(config.seed, {fnv1a("cycle"), static_cast<std::uint64_t>(cycle)});
  const bool failure = options.inject_failure || config.failure_cycle == cycle;
  const PromptSource source = options.prompt_source.value_or(config.prompt_source);
  const PolicyCheckpoint& baseline = state.baseline;
  const std::string batch = batch_id_for_cycle(cycle);

  CycleOutcome out{CycleRecord{}, state, PolicyCheckpoint{}};
  CycleRecord& rec = out.record;
  rec.cycle = cycle;
  rec.version = "V" + std::to_string(state.next_version);
  rec.baseline_version = baseline.version();
  rec.batch_id = batch;
  rec.failure_injected = failure;

  std::optional<std::filesystem::path> dir;
  if (options.out_dir) {
    dir = *options.out_dir / "cycles" / ("cycle-" + pad(cycle, 2));
    std::filesystem::create_directories(*dir);
  }

  CurationConfig curation = config.curation;
  curation.seed = derive_seed(cs, {fnv1a("curation")});

  // Deploy and collect.
  const Traffic traffic = stage("traffic", [&] {
    return collect_traffic(world, baseline, config.traffic_per_cycle, config.max_session_turns,
                           derive_seed(cs, {fnv1a("traffic")}), "c" + pad(cycle, 2) + "-u", false);
  });
  rec.traffic_sessions = traffic.train.size() + traffic.eval.size();

  const CurationResult curated = stage("curation", [&] { return curate(traffic.train, curation, encoder); });
  rec.curated = curated.conversations.size();
  const std::vector<EncodedPrompt> prompts = encode_prompts(encoder, curated.conversations);

  std::vector<EncodedPrompt> eval_prompts = stage("curation", [&] {
    return encode_prompts(encoder, lint_prompts(filter_phase1(traffic.eval, curation, encoder.dim()), curation));
  });

  // Annotation: user-traffic pairs plus interactive internal sessions.
  const std::vector<PreferencePair> new_user_pairs = stage("annotation", [&] {
    return filter_pairs(build_pairs(world, baseline, prompts, batch, PairSource::static_chat,
                                    derive_seed(cs, {fnv1a("user-pairs")})),
                        curation);
  });
  const Traffic internal = stage("annotation", [&] {
    return collect_traffic(world, baseline, config.internal_sessions, config.max_session_turns,
                           derive_seed(cs, {fnv1a("internal")}), "c" + pad(cycle, 2) + "-i", true);
  });
  const std::vector<EncodedPrompt> internal_train = encode_prompts(encoder, lint_prompts(internal.train, curation));
  const std::vector<EncodedPrompt> internal_eval = encode_prompts(encoder, lint_prompts(internal.eval, curation));
  const std::vector<PreferencePair> new_internal_pairs = stage("annotation", [&] {
    return filter_pairs(build_pairs(world, baseline, internal_train, batch, PairSource::interactive,
                                    derive_seed(cs, {fnv1a("internal-pairs")})),
                        curation);
  });
  rec.user_pairs = new_user_pairs.size();
  rec.internal_pairs = new_internal_pairs.size();
  out.state.user_pairs.insert(out.state.user_pairs.end(), new_user_pairs.begin(), new_user_pairs.end());
  out.state.internal_pairs.insert(out.state.internal_pairs.end(), new_internal_pairs.begin(),
                                  new_internal_pairs.end());

  // Pre-herding: reward models on the accumulated batches.
  TrainConfig rm_config = config.rm_train;
  rm_config.seed = derive_seed(cs, {fnv1a("rm")});
  const RewardModel user_rm = stage("reward_model", [&] {
    if (failure) return train_pointwise(narrow_slice(new_user_pairs, config.failure_slice_fraction), encoder, rm_config);
    return train_pointwise(out.state.user_pairs, encoder, rm_config);
  });
  const RewardModel internal_rm =
      stage("reward_model", [&] { return train_pointwise(out.state.internal_pairs, encoder, rm_config); });
  const RewardModel pairwise_rm = stage("reward_model", [&] {
    return train(RewardModel::zeros(ModelKind::pairwise, encoder.dim()),
                 pairwise_examples(out.state.user_pairs, encoder), rm_config);
  });
  const auto signal_model = [&](const std::string& name) {
    return stage("reward_model", [&] {
      return train(RewardModel::zeros(ModelKind::signal, encoder.dim(), name),
                   signal_examples(traffic.train, encoder, name), rm_config);
    });
  };
  const RewardModel continue_model = signal_model("continued_within_window");
  const RewardModel thumb_model = signal_model("thumb_up");
  {
    std::vector<PreferencePair> held_out = build_pairs(world, baseline, eval_prompts, batch, PairSource::static_chat,
                                                       derive_seed(cs, {fnv1a("eval-pairs")}));
    rec.user_rm_accuracy_eval = held_out.empty() ? 0.5 : accuracy(user_rm, encoder, held_out);
  }

  // Rejection sampling with the composite ranker.
  CompositeScorer ranker(user_rm);
  ranker.add_signal(continue_model, config.signal_weight).add_signal(thumb_model, config.signal_weight);
  std::vector<PolicyCheckpoint> rjs_models;
  const std::size_t n_models = std::min<std::size_t>(3, state.promoted.size());
  rjs_models.assign(state.promoted.end() - static_cast<std::ptrdiff_t>(n_models), state.promoted.end());
  const std::vector<RjsSample> rjs = stage("rejection_sampling", [&] {
    return rejection_sample(prompts, rjs_models, ranker, config.rjs, derive_seed(cs, {fnv1a("rjs")}));
  });
  rec.rjs_accepted = rjs.size();

  // Herding: SFT, DPO, RL.
  PolicyCheckpoint policy = baseline;
  policy.policy_version = rec.version;
  policy.parent = baseline.version();
  if (!rjs.empty()) {
    policy = stage("sft", [&] {
      PolicyCheckpoint p = policy;
      for (int s = 0; s < config.sft.steps; ++s) p = sft_step(p, prompts, rjs, config.sft.learning_rate);
      return p;
    });
  }
  policy = stage("dpo", [&] {
    std::vector<EncodedPrompt> pair_prompts;
    std::vector<DpoExample> data;
    for (const PreferencePair& pair : new_user_pairs) {
      PromptInstance pi{pair.id, pair.context, {pair.y0, pair.y1}};
      pair_prompts.push_back(encoder.encode_prompt(std::move(pi)));
      const int t = pair.labels.front().t;
      data.push_back(DpoExample{pair_prompts.size() - 1, t == 1 ? 0 : 1, t == 1 ? 1 : 0});
    }
    if (data.empty()) return policy;
    return dpo_train(policy, policy, pair_prompts, data, config.dpo);
  });

  std::vector<EncodedPrompt> rl_source = prompts;
  if (source == PromptSource::off_policy) {
    const std::size_t lag = static_cast<std::size_t>(config.off_policy_lag);
    const PolicyCheckpoint& old =
        state.promoted[state.promoted.size() - 1 - std::min(lag, state.promoted.size() - 1)];
    rl_source = stage("rl", [&] {
      const Traffic old_traffic =
          collect_traffic(world, old, config.traffic_per_cycle, config.max_session_turns,
                          derive_seed(cs, {fnv1a("traffic")}), "c" + pad(cycle, 2) + "-u", false);
      return encode_prompts(encoder, curate(old_traffic.train, curation, encoder).conversations);
    });
  }
  const CompositeScorer rl_reward(user_rm);
  RlConfig rl_config = config.rl;
  rl_config.seed = derive_seed(cs, {fnv1a("rl")});
  if (failure) rl_config.kl_coeff = 0.0;
  const std::vector<EncodedPrompt> rl_prompts = stage("rl", [&] {
    return variance_downsample(rl_source, policy, rl_reward, config.downsample_k, config.downsample_keep_fraction,
                               derive_seed(cs, {fnv1a("downsample")}));
  });
  rec.rl_prompts = rl_prompts.size();
  const RlResult rl = stage("rl", [&] { return rl_train(policy, rl_prompts, rl_reward, rl_config, source); });
  PolicyCheckpoint candidate = rl.policy;
  candidate.policy_version = rec.version;
  candidate.parent = baseline.version();
  if (!rl.log.empty()) {
    rec.rl_emoji_start = rl.log.front().sampled_emoji_mean;
    rec.rl_emoji_end = rl.log.back().sampled_emoji_mean;
  }

  // Offline evaluation and gate.
  const std::uint64_t eval_seed = derive_seed(cs, {fnv1a("offline-eval")});
  rec.rm_winrate_user = winrate_on(user_rm, encoder, candidate, baseline, eval_prompts,
                                   config.eval_samples_per_prompt, eval_seed);
  rec.rm_winrate_internal = winrate_on(internal_rm, encoder, candidate, baseline, internal_eval,
                                       config.eval_samples_per_prompt, eval_seed);
  rec.gate_decision = overfit_guard(rec.rm_winrate_internal, rec.rm_winrate_user, config.gates);
  {
    std::vector<Response> generated;
    for (const EncodedPrompt& p : eval_prompts) {
      generated.push_back(sample(candidate, p, 1, derive_seed(eval_seed, {fnv1a("chars"), fnv1a(p.prompt.id)}))[0]);
    }
    rec.response_characteristics = response_characteristics(generated);
    std::vector<Response> accepted;
    std::vector<Response> rejected;
    for (const RjsSample& s : rjs) {
      const auto& cands = prompts[s.prompt_index].prompt.candidates;
      for (Index k = 0; k < static_cast<Index>(cands.size()); ++k) {
        (k == s.candidate ? accepted : rejected).push_back(cands[static_cast<std::size_t>(k)]);
      }
    }
    if (!accepted.empty() && !rejected.empty()) rec.artifact_report = artifact_report(accepted, rejected);
  }

  // Online A/B against the deployed baseline.
  rec.ab = stage("ab_test", [&] { return run_ab_test(world, candidate, baseline, config.ab, derive_seed(cs, {fnv1a("ab")})); });

  const bool non_inferior = rec.ab.ci_breadth.bounded && rec.ab.ci_breadth.lo > config.non_inferiority_margin;
  if (rec.gate_decision == GateDecision::block) {
    rec.decision = "block";
  } else if (non_inferior) {
    rec.decision = "promote";
  } else {
    rec.decision = "hold";
  }
  if (rec.decision == "promote") {
    out.state.baseline = candidate;
    out.state.promoted.push_back(candidate);
  }
  out.state.next_version = state.next_version + 1;
  rec.promoted_baseline = out.state.baseline.version();

  rec.true_engagement_candidate = true_engagement(world, candidate, state.oracle_prompts);
  rec.true_engagement_baseline = true_engagement(world, baseline, state.oracle_prompts);
  rec.true_engagement_promoted =
      rec.decision == "promote" ? rec.true_engagement_candidate : rec.true_engagement_baseline;

  if (dir) {
    write_jsonl(*dir / "traffic.jsonl", traffic.train);
    write_jsonl(*dir / "traffic_eval.jsonl", traffic.eval);
    write_jsonl(*dir / "curated.jsonl", curated.conversations);
    write_json_file(*dir / "curation_report.json", curated.report);
    write_jsonl(*dir / "pairs_user.jsonl", new_user_pairs);
    write_jsonl(*dir / "pairs_internal.jsonl", new_internal_pairs);
    write_json_file(*dir / "rm_user.json", Json(user_rm));
    write_json_file(*dir / "rm_internal.json", Json(internal_rm));
    write_json_file(*dir / "rm_pairwise.json", Json(pairwise_rm));
    write_json_file(*dir / "signal_continue.json", Json(continue_model));
    write_json_file(*dir / "signal_thumb_up.json", Json(thumb_model));
    std::vector<Json> rjs_rows;
    for (const RjsSample& s : rjs) {
      rjs_rows.push_back(Json{{"prompt_id", prompts[s.prompt_index].prompt.id},
                              {"response_id", s.response_id},
                              {"reward", s.reward},
                              {"model_version", s.model_version}});
    }
    write_jsonl_json(*dir / "rjs.jsonl", rjs_rows);
    std::vector<Json> log_rows;
    for (const RlStepLog& l : rl.log) log_rows.push_back(to_json(l));
    write_jsonl_json(*dir / "rl_log.jsonl", log_rows);
    write_json_file(*dir / "candidate.json", Json(candidate));
    write_json_file(*dir / "ab_readout.json", to_json(rec.ab, true));
    write_text_file(*dir / "ab_readout.csv", readout_csv(rec.ab));
    write_json_file(*dir / "record.json", to_json(rec));
    const auto ckpt_dir = *options.out_dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    write_json_file(ckpt_dir / (candidate.version() + ".json"), Json(candidate));
    write_json_file(*options.out_dir / "baseline.json", Json(out.state.baseline));
  }
  out.candidate = std::move(candidate);
  return out;
}

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> columns{
      "cycle",           "version",          "baseline_version",   "decision",
      "gate_decision",   "rm_winrate_internal", "rm_winrate_user", "breadth_lift",
      "breadth_ci_lo",   "breadth_ci_hi",    "depth_lift",         "depth_ci_lo",
      "depth_ci_hi",     "avg_len",          "emoji_pct",          "list_pct",
      "templated_pct",   "wall_of_text_pct", "promoted_baseline",  "true_engagement_candidate_diagnostic"};
  return columns;
}

std::string report_csv(const std::vector<Json>& records) {
  std::string out;
  for (std::size_t i = 0; i < report_columns().size(); ++i) out += (i ? "," : "") + report_columns()[i];
  out += "\n";
  auto num = [](const Json& v) { return v.is_number() ? fmt(v.get<double>()) : std::string("NA"); };
  auto lo = [&](const Json& ci) { return ci.value("bounded", false) ? num(ci.at("lo")) : std::string("unbounded"); };
  auto hi = [&](const Json& ci) { return ci.value("bounded", false) ? num(ci.at("hi")) : std::string("unbounded"); };
  for (const Json& r : records) {
    const Json& ab = r.at("ab");
    const Json& rc = r.at("response_characteristics");
    const std::vector<std::string> cells{std::to_string(r.at("cycle").get<int>()),
                                         r.at("version").get<std::string>(),
                                         r.at("baseline_version").get<std::string>(),
                                         r.at("decision").get<std::string>(),
                                         r.at("gate_decision").get<std::string>(),
                                         num(r.at("rm_winrate_internal")),
                                         num(r.at("rm_winrate_user")),
                                         num(ab.at("lift_breadth")),
                                         lo(ab.at("ci_breadth")),
                                         hi(ab.at("ci_breadth")),
                                         num(ab.at("lift_depth")),
                                         lo(ab.at("ci_depth")),
                                         hi(ab.at("ci_depth")),
                                         num(rc.at("avg_token_count")),
                                         num(rc.at("emoji_pct")),
                                         num(rc.at("list_pct")),
                                         num(rc.at("templated_pct")),
                                         num(rc.at("wall_of_text_pct")),
                                         r.at("promoted_baseline").get<std::string>(),
                                         num(r.at("diagnostic_oracle").at("true_engagement_candidate"))};
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += "\n";
  }
  return out;
}

std::string engagement_series_csv(const std::vector<Json>& records) {
  // Compounded lifts of promoted versions, baseline offset to 1.
  std::string out = "cycle,promoted_baseline,cumulative_breadth,cumulative_depth,true_engagement_index_diagnostic\n";
  double breadth = 1.0;
  double depth = 1.0;
  const double te0 =
      records.empty() ? 1.0 : records.front().at("diagnostic_oracle").at("true_engagement_baseline").get<double>();
  out += "0," + (records.empty() ? std::string("V0") : records.front().at("baseline_version").get<std::string>()) +
         ",1.000000,1.000000,1.000000\n";
  for (const Json& r : records) {
    if (r.at("decision").get<std::string>() == "promote") {
      const Json& ab = r.at("ab");
      if (ab.at("lift_breadth").is_number()) breadth *= 1.0 + ab.at("lift_breadth").get<double>() / 100.0;
      if (ab.at("lift_depth").is_number()) depth *= 1.0 + ab.at("lift_depth").get<double>() / 100.0;
    }
    const double te = r.at("diagnostic_oracle").at("true_engagement_promoted").get<double>();
    out += std::to_string(r.at("cycle").get<int>()) + "," + r.at("promoted_baseline").get<std::string>() + "," +
           fmt(breadth) + "," + fmt(depth) + "," + fmt(te0 > 0.0 ? te / te0 : 0.0) + "\n";
  }
  return out;
}

CampaignResult run_campaign(const World& world, const CycleConfig& config,
                            const std::optional<std::filesystem::path>& out_dir) {
  validate(config);
  CampaignResult result{{}, initial_state(world, config), {}, {}, {}};
  if (out_dir) {
    std::filesystem::create_directories(*out_dir / "checkpoints");
    write_json_file(*out_dir / "checkpoints" / "V0.json", Json(result.state.baseline));
    write_json_file(*out_dir / "baseline.json", Json(result.state.baseline));
    write_text_file(*out_dir / "records.jsonl", "");
  }
  std::vector<Json> rows;
  for (int cycle = 1; cycle <= config.n_cycles; ++cycle) {
    CycleOptions options;
    options.out_dir = out_dir;
    CycleOutcome outcome = run_cycle(result.state, config, cycle, options);
    rows.push_back(to_json(outcome.record));
    if (out_dir) append_jsonl(*out_dir / "records.jsonl", rows.back());
    result.records.push_back(std::move(outcome.record));
    result.state = std::move(outcome.state);
  }
  result.report_csv = report_csv(rows);
  result.report_json = Json{{"records", rows}, {"columns", report_columns()}};
  result.engagement_series_csv = engagement_series_csv(rows);
  if (out_dir) {
    write_text_file(*out_dir / "report.csv", result.report_csv);
    write_json_file(*out_dir / "report.json", result.report_json);
    write_text_file(*out_dir / "engagement_series.csv", result.engagement_series_csv);
  }
  return result;
}

}  // namespace flywheel
