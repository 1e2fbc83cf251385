#include "flywheel/reward.hpp"

#include "flywheel/math.hpp"
#include "flywheel/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace flywheel {
namespace {

void require_kind(const RewardModel& model, ModelKind kind) {
  if (model.kind != kind) {
    throw ModelKindMismatch("expected a " + to_string(kind) + " model, got " + to_string(model.kind));
  }
}

void require_label(int v, const char* name) {
  if (v != 0 && v != 1) throw InvalidArgument(std::string(name) + " must be 0 or 1");
}

// Every kind reduces to logistic loss on one design row: pointwise rows are
// psi_c - psi_r with target 1 and no bias.
struct Design {
  Matrix x;
  Vector target;
  bool uses_bias = true;
};

Design make_design(const RewardModel& model, const std::vector<Example>& data) {
  const Index d = model.weights.size();
  Design design;
  design.x.resize(static_cast<Index>(data.size()), d);
  design.target.resize(static_cast<Index>(data.size()));
  design.uses_bias = model.kind != ModelKind::pointwise;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Example& e = data[i];
    const auto r = static_cast<Index>(i);
    if (e.a.size() != d || (model.kind == ModelKind::pointwise && e.b.size() != d)) {
      throw InvalidArgument("example " + std::to_string(i) + " does not match model input dimension " +
                            std::to_string(d));
    }
    if (model.kind == ModelKind::pointwise) {
      design.x.row(r) = (e.a - e.b).transpose();
      design.target[r] = 1.0;
    } else {
      require_label(e.label, "label");
      design.x.row(r) = e.a.transpose();
      design.target[r] = e.label;
    }
  }
  return design;
}

double design_objective(const Design& d, const Vector& w, double b, double l2, const std::vector<Index>* rows) {
  CompensatedSum<double> acc;
  auto add = [&](Index r) {
    const double z = d.x.row(r).dot(w) + (d.uses_bias ? b : 0.0);
    acc.add(binary_cross_entropy(z, static_cast<int>(d.target[r])));
  };
  std::size_t n = 0;
  if (rows) {
    for (Index r : *rows) add(r);
    n = rows->size();
  } else {
    for (Index r = 0; r < d.x.rows(); ++r) add(r);
    n = static_cast<std::size_t>(d.x.rows());
  }
  return acc.value() / static_cast<double>(n) + l2 * w.squaredNorm();
}

Gradient design_gradient(const Design& d, const Vector& w, double b, double l2, const std::vector<Index>* rows) {
  Gradient g{Vector::Zero(w.size()), 0.0};
  auto add = [&](Index r) {
    const double z = d.x.row(r).dot(w) + (d.uses_bias ? b : 0.0);
    const double residual = sigmoid(z) - d.target[r];
    g.weights.noalias() += residual * d.x.row(r).transpose();
    if (d.uses_bias) g.bias += residual;
  };
  std::size_t n = 0;
  if (rows) {
    for (Index r : *rows) add(r);
    n = rows->size();
  } else {
    for (Index r = 0; r < d.x.rows(); ++r) add(r);
    n = static_cast<std::size_t>(d.x.rows());
  }
  g.weights /= static_cast<double>(n);
  g.bias /= static_cast<double>(n);
  g.weights += 2.0 * l2 * w;
  return g;
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::pointwise: return "pointwise";
    case ModelKind::pairwise: return "pairwise";
    case ModelKind::signal: return "signal";
  }
  return "pointwise";
}

ModelKind model_kind_from_string(const std::string& text) {
  if (text == "pointwise") return ModelKind::pointwise;
  if (text == "pairwise") return ModelKind::pairwise;
  if (text == "signal") return ModelKind::signal;
  throw InvalidArgument("unknown model kind " + text);
}

RewardModel RewardModel::zeros(ModelKind kind, Index dim, std::string signal_name) {
  RewardModel m;
  m.kind = kind;
  m.signal_name = std::move(signal_name);
  m.weights = Vector::Zero(kind == ModelKind::pairwise ? 2 * dim : dim);
  return m;
}

void to_json(Json& j, const RewardModel& m) {
  j = Json{{"kind", to_string(m.kind)},
           {"dim", m.feature_dim()},
           {"weights", vector_to_json(m.weights)},
           {"bias", m.bias},
           {"trained_batches", m.trained_batches}};
  if (m.kind == ModelKind::signal) j["signal"] = m.signal_name;
}

void from_json(const Json& j, RewardModel& m) {
  m.kind = model_kind_from_string(j.at("kind").get<std::string>());
  m.weights = vector_from_json(j.at("weights"));
  m.bias = j.at("bias").get<double>();
  m.trained_batches = j.value("trained_batches", std::vector<std::string>{});
  m.signal_name = j.value("signal", std::string{});
  if (m.feature_dim() != j.at("dim").get<Index>()) throw SerializationError("reward model dim mismatch");
}

double pointwise_loss(const RewardModel& model, const Vector& psi_chosen, const Vector& psi_rejected) {
  require_kind(model, ModelKind::pointwise);
  return -log_sigmoid(model.score(psi_chosen) - model.score(psi_rejected));
}

double pairwise_loss(const RewardModel& model, const Vector& joint_input, int t) {
  require_kind(model, ModelKind::pairwise);
  require_label(t, "t");
  return binary_cross_entropy(model.score(joint_input), t);
}

double signal_loss(const RewardModel& model, const Vector& psi, int s) {
  require_kind(model, ModelKind::signal);
  require_label(s, "s");
  return binary_cross_entropy(model.score(psi), s);
}

double pointwise_loss(const RewardModel& model, const Encoder& encoder, const Context& x, const Response& y_c,
                      const Response& y_r) {
  return pointwise_loss(model, encoder.normalize(encoder.encode(x, y_c)), encoder.normalize(encoder.encode(x, y_r)));
}

double pairwise_loss(const RewardModel& model, const Encoder& encoder, const Context& x, const Response& y0,
                     const Response& y1, int t) {
  return pairwise_loss(model, pairwise_input(encoder, x, y0, y1), t);
}

double signal_loss(const RewardModel& model, const Encoder& encoder, const Context& x, const Response& y, int s) {
  return signal_loss(model, encoder.normalize(encoder.encode(x, y)), s);
}

Vector pairwise_input(const Encoder& encoder, const Context& x, const Response& y0, const Response& y1) {
  const Index d = encoder.dim();
  Vector in(2 * d);
  in.head(d) = encoder.normalize(encoder.encode(x, y0)) - encoder.normalize(encoder.encode(x, y1));
  in.tail(d) = encoder.context_features(x);
  return in;
}

RewardModel antisymmetrize(RewardModel model) {
  require_kind(model, ModelKind::pairwise);
  model.weights.tail(model.weights.size() / 2).setZero();
  model.bias = 0.0;
  return model;
}

double example_loss(const RewardModel& model, const Example& e) {
  switch (model.kind) {
    case ModelKind::pointwise: return pointwise_loss(model, e.a, e.b);
    case ModelKind::pairwise: return pairwise_loss(model, e.a, e.label);
    case ModelKind::signal: return signal_loss(model, e.a, e.label);
  }
  return 0.0;
}

Gradient example_gradient(const RewardModel& model, const Example& e) {
  return objective_gradient(model, {e}, 0.0);
}

double objective(const RewardModel& model, const std::vector<Example>& data, double l2) {
  if (data.empty()) throw InvalidArgument("objective of an empty dataset");
  return design_objective(make_design(model, data), model.weights, model.bias, l2, nullptr);
}

Gradient objective_gradient(const RewardModel& model, const std::vector<Example>& data, double l2) {
  if (data.empty()) throw InvalidArgument("gradient of an empty dataset");
  return design_gradient(make_design(model, data), model.weights, model.bias, l2, nullptr);
}

RewardModel train(const RewardModel& model, const std::vector<Example>& data, const TrainConfig& config,
                  std::vector<double>* loss_history) {
  if (data.empty()) throw InvalidArgument("cannot train on an empty dataset");
  if (!(config.learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (config.epochs < 0 || !(config.l2 >= 0.0)) throw InvalidArgument("epochs and l2 must be nonnegative");

  const Design design = make_design(model, data);
  RewardModel out = model;
  const auto n = static_cast<std::size_t>(design.x.rows());
  const bool full_batch = config.batch_size <= 0 || static_cast<std::size_t>(config.batch_size) >= n;
  Rng rng(derive_seed(config.seed, {fnv1a("reward-train")}));
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});

  auto check = [&](int epoch) {
    const double loss = design_objective(design, out.weights, out.bias, config.l2, nullptr);
    if (!std::isfinite(loss)) {
      throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) + " (|w| = " +
                          std::to_string(out.weights.norm()) + ", lr = " + std::to_string(config.learning_rate) +
                          ")");
    }
    if (loss_history) loss_history->push_back(loss);
  };

  check(0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (full_batch) {
      const Gradient g = design_gradient(design, out.weights, out.bias, config.l2, nullptr);
      out.weights -= config.learning_rate * g.weights;
      out.bias -= config.learning_rate * g.bias;
    } else {
      rng.shuffle(order);
      const auto bs = static_cast<std::size_t>(config.batch_size);
      for (std::size_t start = 0; start < n; start += bs) {
        const std::vector<Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + bs)));
        const Gradient g = design_gradient(design, out.weights, out.bias, config.l2, &rows);
        out.weights -= config.learning_rate * g.weights;
        out.bias -= config.learning_rate * g.bias;
      }
    }
    check(epoch);
  }

  std::set<std::string> batches(out.trained_batches.begin(), out.trained_batches.end());
  for (const Example& e : data) {
    if (!e.batch_id.empty()) batches.insert(e.batch_id);
  }
  out.trained_batches.assign(batches.begin(), batches.end());
  return out;
}

std::vector<Example> pointwise_examples(const std::vector<PreferencePair>& pairs, const Encoder& encoder) {
  std::vector<Example> out;
  for (const PreferencePair& p : pairs) {
    const Vector psi0 = encoder.normalize(encoder.encode(p.context, p.y0));
    const Vector psi1 = encoder.normalize(encoder.encode(p.context, p.y1));
    for (const PreferenceLabel& l : p.labels) {
      require_label(l.t, "t");
      out.push_back(l.t == 1 ? Example{psi0, psi1, 1, p.batch_id} : Example{psi1, psi0, 1, p.batch_id});
    }
  }
  return out;
}

std::vector<Example> pairwise_examples(const std::vector<PreferencePair>& pairs, const Encoder& encoder) {
  std::vector<Example> out;
  for (const PreferencePair& p : pairs) {
    const Vector in = pairwise_input(encoder, p.context, p.y0, p.y1);
    for (const PreferenceLabel& l : p.labels) out.push_back(Example{in, Vector(), l.t, p.batch_id});
  }
  return out;
}

bool signal_value(const SignalRecord& r, const std::string& name) {
  if (name == "continued_within_window" || name == "continue") return r.continued_within_window;
  if (name == "love") return r.love;
  if (name == "thumb_up") return r.thumb_up;
  if (name == "thumb_down") return r.thumb_down;
  if (name == "written_feedback") return r.written_feedback;
  throw InvalidArgument("unknown signal " + name);
}

std::vector<Example> signal_examples(const std::vector<Conversation>& conversations, const Encoder& encoder,
                                     const std::string& signal_name) {
  std::vector<Example> out;
  for (const Conversation& conv : conversations) {
    const std::size_t n = conv.model_turn_count();
    for (std::size_t k = 0; k < n; ++k) {
      const Turn& turn = conv.turns[conv.model_turn_position(k)];
      if (!turn.signals) continue;
      const Context ctx = conv.context_before_model_turn(k);
      out.push_back(Example{encoder.normalize(encoder.encode(ctx, turn.response)), Vector(),
                            signal_value(*turn.signals, signal_name) ? 1 : 0, conv.policy_version});
    }
  }
  return out;
}

double accuracy(const RewardModel& model, const Encoder& encoder, const std::vector<PreferencePair>& pairs) {
  CompensatedSum<double> correct;
  std::size_t total = 0;
  for (const PreferencePair& p : pairs) {
    double margin = 0.0;
    if (model.kind == ModelKind::pairwise) {
      margin = model.score(pairwise_input(encoder, p.context, p.y0, p.y1));
    } else {
      margin = model.score(encoder.normalize(encoder.encode(p.context, p.y0))) -
               model.score(encoder.normalize(encoder.encode(p.context, p.y1)));
    }
    for (const PreferenceLabel& l : p.labels) {
      ++total;
      if (margin == 0.0) {
        correct.add(0.5);
      } else if ((margin > 0.0) == (l.t == 1)) {
        correct.add(1.0);
      }
    }
  }
  if (total == 0) throw InvalidArgument("accuracy of an empty pair set");
  return correct.value() / static_cast<double>(total);
}

double rm_winrate(const std::vector<double>& scores_new, const std::vector<double>& scores_old) {
  if (scores_new.size() != scores_old.size()) throw InvalidArgument("rm_winrate: length mismatch");
  if (scores_new.empty()) throw InvalidArgument("rm_winrate: empty input");
  double wins = 0.0;
  for (std::size_t i = 0; i < scores_new.size(); ++i) {
    if (scores_new[i] > scores_old[i]) {
      wins += 1.0;
    } else if (scores_new[i] == scores_old[i]) {
      wins += 0.5;
    }
  }
  return wins / static_cast<double>(scores_new.size());
}

double rm_winrate(const RewardModel& model, const Encoder& encoder, const std::vector<Response>& responses_new,
                  const std::vector<Response>& responses_old, const std::vector<Context>& contexts) {
  require_kind(model, ModelKind::pointwise);
  if (responses_new.size() != contexts.size() || responses_old.size() != contexts.size()) {
    throw InvalidArgument("rm_winrate: length mismatch");
  }
  std::vector<double> a;
  std::vector<double> b;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    a.push_back(model.score(encoder.normalize(encoder.encode(contexts[i], responses_new[i]))));
    b.push_back(model.score(encoder.normalize(encoder.encode(contexts[i], responses_old[i]))));
  }
  return rm_winrate(a, b);
}

std::string to_string(GateDecision d) {
  switch (d) {
    case GateDecision::ok: return "ok";
    case GateDecision::warn: return "warn";
    case GateDecision::block: return "block";
  }
  return "ok";
}

GateDecision overfit_guard(double winrate_internal, double winrate_user, const GateThresholds& gates) {
  if (winrate_internal > gates.max_rm_winrate || winrate_user > gates.max_rm_winrate ||
      std::abs(winrate_internal - winrate_user) > gates.max_divergence) {
    return GateDecision::block;
  }
  if (winrate_internal > gates.warn_rm_winrate || winrate_user > gates.warn_rm_winrate) return GateDecision::warn;
  return GateDecision::ok;
}

bool unanimous(const PreferencePair& pair) {
  return !pair.labels.empty() && std::all_of(pair.labels.begin(), pair.labels.end(), [&](const PreferenceLabel& l) {
    return l.t == pair.labels.front().t;
  });
}

AnnotationVariants build_annotation_variants(const std::vector<PreferencePair>& pairs, std::uint64_t seed) {
  AnnotationVariants v;
  Rng rng(derive_seed(seed, {fnv1a("annotation-variants")}));
  for (const PreferencePair& p : pairs) {
    if (p.labels.size() != 3) {
      throw InvalidArgument("pair " + p.id + " has " + std::to_string(p.labels.size()) + " labels, expected 3");
    }
    if (unanimous(p)) {
      PreferencePair m = p;
      m.labels.resize(1);
      v.multi_review.push_back(std::move(m));
    }
    for (const PreferenceLabel& l : p.labels) {
      PreferencePair s = p;
      s.labels = {l};
      v.single_all.push_back(std::move(s));
    }
    PreferencePair r = p;
    r.labels = {p.labels[rng.index(3)]};
    v.single_random.push_back(std::move(r));
  }
  return v;
}

CompositeScorer& CompositeScorer::add_signal(RewardModel model, double weight) {
  require_kind(model, ModelKind::signal);
  signals_.emplace_back(std::move(model), weight);
  return *this;
}

CompositeScorer& CompositeScorer::long_response_penalty(double lambda, double cap) {
  length_lambda_ = lambda;
  length_cap_ = cap;
  return *this;
}

Vector CompositeScorer::score(const EncodedPrompt& prompt) const {
  require_kind(preference_, ModelKind::pointwise);
  Vector s = preference_weight_ * ((prompt.features * preference_.weights).array() + preference_.bias).matrix();
  for (const auto& [model, weight] : signals_) {
    s += weight * ((prompt.features * model.weights).array() + model.bias).matrix();
  }
  if (length_lambda_ != 0.0) {
    s.array() -= length_lambda_ * (prompt.raw.col(slot::kTokenLength).array() - length_cap_).max(0.0);
  }
  return s;
}

std::vector<std::size_t> variance_downsample_indices(const std::vector<EncodedPrompt>& prompts,
                                                     const ResponsePolicy& policy, const RewardScorer& scorer,
                                                     int k, double keep_fraction, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("variance_downsample needs k >= 2");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw InvalidArgument("keep_fraction must be in (0, 1]");
  const std::size_t n = prompts.size();
  std::vector<double> variance(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector probs = policy.probabilities(prompts[i]);
    const Vector scores = scorer.score(prompts[i]);
    Rng rng(derive_seed(seed, {fnv1a("variance-downsample"), fnv1a(prompts[i].prompt.id)}));
    std::vector<double> draws(static_cast<std::size_t>(k));
    for (double& d : draws) d = scores[static_cast<Index>(rng.categorical(probs))];
    variance[i] = sample_variance<double>(draws);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (variance[a] != variance[b]) return variance[a] > variance[b];
    return prompts[a].prompt.id < prompts[b].prompt.id;
  });
  const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(n) - 1e-9)));
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<EncodedPrompt> variance_downsample(const std::vector<EncodedPrompt>& prompts,
                                               const ResponsePolicy& policy, const RewardScorer& scorer, int k,
                                               double keep_fraction, std::uint64_t seed) {
  std::vector<EncodedPrompt> out;
  for (std::size_t i : variance_downsample_indices(prompts, policy, scorer, k, keep_fraction, seed)) {
    out.push_back(prompts[i]);
  }
  return out;
}

}  // namespace flywheel
