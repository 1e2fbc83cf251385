#include "flywheel/policy.hpp"

#include "flywheel/math.hpp"
#include "flywheel/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace flywheel {
namespace {

void check_index(const EncodedPrompt& prompt, Index i) {
  if (i < 0 || i >= prompt.size()) {
    throw MissingCandidate("candidate " + std::to_string(i) + " not in prompt " + prompt.prompt.id);
  }
}

// d log pi(y_i) / dw = (psi_i - E_pi[psi]) / T
Vector score_function(const PolicyCheckpoint& policy, const EncodedPrompt& prompt, const Vector& probs, Index i) {
  return (prompt.features.row(i).transpose() - prompt.features.transpose() * probs) / policy.temperature;
}

// The RL objective over a set of groups, and its gradient, as a function of theta.
struct GroupObjective {
  const PolicyCheckpoint& theta_old;
  const ResponsePolicy& gen;
  const PolicyCheckpoint& ref;
  const std::vector<RlGroup>& groups;
  const RlConfig& config;

  double loss(const PolicyCheckpoint& theta) const {
    CompensatedSum<double> acc;
    for (const RlGroup& g : groups) acc.add(grpo_loss(theta, theta_old, gen, ref, g, config));
    return acc.value() / static_cast<double>(groups.size());
  }

  Vector gradient(const PolicyCheckpoint& theta) const {
    Vector total = Vector::Zero(theta.weights.size());
    for (const RlGroup& g : groups) total += grpo_gradient(theta, theta_old, gen, ref, g, config);
    return total / static_cast<double>(groups.size());
  }
};

}  // namespace

PolicyCheckpoint PolicyCheckpoint::zeros(Index dim, std::string version) {
  return PolicyCheckpoint(std::move(version), Vector::Zero(dim));
}

Vector PolicyCheckpoint::logits(const EncodedPrompt& prompt) const {
  if (prompt.features.cols() != weights.size()) {
    throw InvalidArgument("policy " + policy_version + " has dimension " + std::to_string(weights.size()) +
                          ", prompt has " + std::to_string(prompt.features.cols()));
  }
  return prompt.features * weights / temperature;
}

Vector PolicyCheckpoint::log_probabilities(const EncodedPrompt& prompt) const { return log_softmax(logits(prompt)); }

Vector PolicyCheckpoint::probabilities(const EncodedPrompt& prompt) const { return softmax(logits(prompt)); }

void to_json(Json& j, const PolicyCheckpoint& p) {
  j = Json{{"version", p.policy_version},
           {"weights", vector_to_json(p.weights)},
           {"temperature", p.temperature},
           {"parent", p.parent ? Json(*p.parent) : Json(nullptr)}};
}

void from_json(const Json& j, PolicyCheckpoint& p) {
  p.policy_version = j.at("version").get<std::string>();
  p.weights = vector_from_json(j.at("weights"));
  p.temperature = j.at("temperature").get<double>();
  if (!(p.temperature > 0.0)) throw SerializationError("policy temperature must be positive");
  const Json& parent = j.at("parent");
  p.parent = parent.is_null() ? std::nullopt : std::optional<std::string>(parent.get<std::string>());
}

Vector UniformPolicy::probabilities(const EncodedPrompt& prompt) const {
  return Vector::Constant(prompt.size(), 1.0 / static_cast<double>(prompt.size()));
}

Vector GreedyOraclePolicy::probabilities(const EncodedPrompt& prompt) const {
  const Vector q = world_->candidate_qualities(prompt);
  Index best = 0;
  q.maxCoeff(&best);
  Vector p = Vector::Zero(prompt.size());
  p[best] = 1.0;
  return p;
}

Index candidate_index(const EncodedPrompt& prompt, const std::string& response_id) {
  const auto& c = prompt.prompt.candidates;
  auto it = std::find_if(c.begin(), c.end(), [&](const Response& r) { return r.id == response_id; });
  if (it == c.end()) throw MissingCandidate("response " + response_id + " not in prompt " + prompt.prompt.id);
  return static_cast<Index>(it - c.begin());
}

std::vector<Index> sample_indices(const ResponsePolicy& policy, const EncodedPrompt& prompt, int n,
                                  std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("sample needs n >= 1");
  const Vector probs = policy.probabilities(prompt);
  Rng rng(seed);
  std::vector<Index> out(static_cast<std::size_t>(n));
  for (Index& i : out) i = static_cast<Index>(rng.categorical(probs));
  return out;
}

std::vector<Response> sample(const ResponsePolicy& policy, const EncodedPrompt& prompt, int n, std::uint64_t seed) {
  std::vector<Response> out;
  for (Index i : sample_indices(policy, prompt, n, seed)) out.push_back(prompt.prompt.candidates[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<RjsSample> rejection_sample(const std::vector<EncodedPrompt>& prompts,
                                        const std::vector<PolicyCheckpoint>& models, const RewardScorer& reward,
                                        const RjsConfig& config, std::uint64_t seed) {
  if (config.k < 1) throw InvalidArgument("rejection_sample needs k >= 1");
  if (models.empty()) throw InvalidArgument("rejection_sample needs at least one model");
  if (config.probe_samples < 1) throw InvalidArgument("probe_samples must be >= 1");
  std::vector<RjsSample> out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const EncodedPrompt& prompt = prompts[i];
    const Vector scores = reward.score(prompt);
    const std::uint64_t pid = fnv1a(prompt.prompt.id);

    std::size_t route = 0;
    if (models.size() > 1) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < models.size(); ++l) {
        const auto probe = sample_indices(models[l], prompt, config.probe_samples,
                                          derive_seed(seed, {fnv1a("rjs-probe"), pid, l}));
        double mean = 0.0;
        for (Index j : probe) mean += scores[j];
        mean /= static_cast<double>(probe.size());
        if (mean >= best) {
          best = mean;
          route = l;
        }
      }
    }

    const auto draws = sample_indices(models[route], prompt, config.k, derive_seed(seed, {fnv1a("rjs-draw"), pid, route}));
    Index best_j = draws.front();
    for (Index j : draws) {
      if (scores[j] > scores[best_j]) best_j = j;
    }
    if (scores[best_j] >= config.tau) {
      out.push_back(RjsSample{i, best_j, prompt.prompt.candidates[static_cast<std::size_t>(best_j)].id,
                              scores[best_j], models[route].policy_version});
    }
  }
  return out;
}

double sft_objective(const PolicyCheckpoint& policy, const std::vector<EncodedPrompt>& prompts,
                     const std::vector<RjsSample>& data) {
  if (data.empty()) throw InvalidArgument("SFT dataset is empty");
  CompensatedSum<double> acc;
  for (const RjsSample& s : data) {
    const EncodedPrompt& p = prompts.at(s.prompt_index);
    const Index target = candidate_index(p, s.response_id);
    acc.add(policy.log_probabilities(p)[target]);
  }
  return acc.value() / static_cast<double>(data.size());
}

Vector sft_gradient(const PolicyCheckpoint& policy, const std::vector<EncodedPrompt>& prompts,
                    const std::vector<RjsSample>& data) {
  if (data.empty()) throw InvalidArgument("SFT dataset is empty");
  Vector g = Vector::Zero(policy.weights.size());
  for (const RjsSample& s : data) {
    const EncodedPrompt& p = prompts.at(s.prompt_index);
    const Index target = candidate_index(p, s.response_id);
    g += score_function(policy, p, policy.probabilities(p), target);
  }
  return g / static_cast<double>(data.size());
}

PolicyCheckpoint sft_step(const PolicyCheckpoint& policy, const std::vector<EncodedPrompt>& prompts,
                          const std::vector<RjsSample>& data, double learning_rate) {
  PolicyCheckpoint out = policy;
  out.weights += learning_rate * sft_gradient(policy, prompts, data);
  return out;
}

double dpo_loss(const PolicyCheckpoint& policy, const PolicyCheckpoint& reference, const EncodedPrompt& prompt,
                Index chosen, Index rejected, double beta) {
  check_index(prompt, chosen);
  check_index(prompt, rejected);
  const Vector lp = policy.log_probabilities(prompt);
  const Vector lr = reference.log_probabilities(prompt);
  const double margin = (lp[chosen] - lr[chosen]) - (lp[rejected] - lr[rejected]);
  return -log_sigmoid(beta * margin);
}

Vector dpo_gradient(const PolicyCheckpoint& policy, const PolicyCheckpoint& reference, const EncodedPrompt& prompt,
                    Index chosen, Index rejected, double beta) {
  check_index(prompt, chosen);
  check_index(prompt, rejected);
  const Vector lp = policy.log_probabilities(prompt);
  const Vector lr = reference.log_probabilities(prompt);
  const double margin = (lp[chosen] - lr[chosen]) - (lp[rejected] - lr[rejected]);
  // The log-partition terms cancel in log pi(c) - log pi(r).
  const Vector dmargin = (prompt.features.row(chosen) - prompt.features.row(rejected)).transpose() /
                         policy.temperature;
  return -(1.0 - sigmoid(beta * margin)) * beta * dmargin;
}

double dpo_objective(const PolicyCheckpoint& policy, const PolicyCheckpoint& reference,
                     const std::vector<EncodedPrompt>& prompts, const std::vector<DpoExample>& data, double beta) {
  if (data.empty()) throw InvalidArgument("DPO dataset is empty");
  CompensatedSum<double> acc;
  for (const DpoExample& e : data) {
    acc.add(dpo_loss(policy, reference, prompts.at(e.prompt_index), e.chosen, e.rejected, beta));
  }
  return acc.value() / static_cast<double>(data.size());
}

PolicyCheckpoint dpo_train(const PolicyCheckpoint& policy, const PolicyCheckpoint& reference,
                           const std::vector<EncodedPrompt>& prompts, const std::vector<DpoExample>& data,
                           const DpoConfig& config) {
  if (data.empty()) throw InvalidArgument("DPO dataset is empty");
  PolicyCheckpoint out = policy;
  for (int step = 0; step < config.steps; ++step) {
    Vector g = Vector::Zero(out.weights.size());
    for (const DpoExample& e : data) {
      g += dpo_gradient(out, reference, prompts.at(e.prompt_index), e.chosen, e.rejected, config.beta);
    }
    out.weights -= config.learning_rate * g / static_cast<double>(data.size());
  }
  return out;
}

void validate(const RlConfig& c) {
  if (c.group_size < 2) throw InvalidArgument("group_size must be >= 2");
  if (!(c.clip_epsilon > 0.0)) throw InvalidArgument("clip epsilon must be positive");
  if (!(c.kl_coeff >= 0.0)) throw InvalidArgument("kl_coeff must be nonnegative");
  if (!(c.ema_decay >= 0.0 && c.ema_decay < 1.0)) throw InvalidArgument("ema_decay must be in [0, 1)");
  if (!(c.learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (c.steps < 0 || c.prompts_per_step < 0) throw InvalidArgument("steps and prompts_per_step must be >= 0");
}

Vector group_advantages(const Vector& rewards) {
  const double mean = rewards.mean();
  const Vector centered = rewards.array() - mean;
  const double std = std::sqrt(centered.squaredNorm() / static_cast<double>(rewards.size()));
  if (std < 1e-8) return centered;
  return centered / (std + 1e-8);
}

double policy_kl(const PolicyCheckpoint& p, const PolicyCheckpoint& q, const EncodedPrompt& prompt) {
  const Vector lp = p.log_probabilities(prompt);
  const Vector lq = q.log_probabilities(prompt);
  return (lp.array().exp() * (lp - lq).array()).sum();
}

double grpo_loss(const PolicyCheckpoint& theta, const PolicyCheckpoint& theta_old, const ResponsePolicy& gen,
                 const PolicyCheckpoint& ref, const RlGroup& group, const RlConfig& config) {
  const EncodedPrompt& prompt = *group.prompt;
  const auto g = static_cast<Index>(group.samples.size());
  if (g < 2 || group.rewards.size() != g) throw InvalidArgument("GRPO group needs >= 2 samples with rewards");
  const Vector p = theta.probabilities(prompt);
  const Vector p_old = theta_old.probabilities(prompt);
  const Vector p_gen = gen.probabilities(prompt);
  const Vector adv = group_advantages(group.rewards);
  const double eps = config.clip_epsilon;

  CompensatedSum<double> surrogate;
  for (Index s = 0; s < g; ++s) {
    const Index y = group.samples[static_cast<std::size_t>(s)];
    if (!(p_gen[y] > 0.0)) {
      throw InvalidArgument("generation probability is zero for sampled candidate " + std::to_string(y) +
                            " of prompt " + prompt.prompt.id);
    }
    const double outer = p_old[y] / p_gen[y];
    const double rho = p[y] / p_old[y];
    const double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps);
    surrogate.add(outer * std::min(rho * adv[s], clipped * adv[s]));
  }
  const double objective = surrogate.value() / static_cast<double>(g) - config.kl_coeff * policy_kl(theta, ref, prompt);
  return -objective;
}

Vector grpo_gradient(const PolicyCheckpoint& theta, const PolicyCheckpoint& theta_old, const ResponsePolicy& gen,
                     const PolicyCheckpoint& ref, const RlGroup& group, const RlConfig& config) {
  const EncodedPrompt& prompt = *group.prompt;
  const auto g = static_cast<Index>(group.samples.size());
  if (g < 2 || group.rewards.size() != g) throw InvalidArgument("GRPO group needs >= 2 samples with rewards");
  const Vector p = theta.probabilities(prompt);
  const Vector p_old = theta_old.probabilities(prompt);
  const Vector p_gen = gen.probabilities(prompt);
  const Vector adv = group_advantages(group.rewards);
  const double eps = config.clip_epsilon;

  Vector grad_obj = Vector::Zero(theta.weights.size());
  for (Index s = 0; s < g; ++s) {
    const Index y = group.samples[static_cast<std::size_t>(s)];
    if (!(p_gen[y] > 0.0)) throw InvalidArgument("generation probability is zero for a sampled candidate");
    const double outer = p_old[y] / p_gen[y];
    const double rho = p[y] / p_old[y];
    const double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps);
    // The min picks the clipped branch only when it is strictly smaller; that
    // branch is constant in theta.
    if (clipped * adv[s] < rho * adv[s]) continue;
    grad_obj += outer * adv[s] * rho * score_function(theta, prompt, p, y);
  }
  grad_obj /= static_cast<double>(g);

  // d KL / d logit_j = p_j (log p_j - log ref_j - KL)
  const Vector lp = theta.log_probabilities(prompt);
  const Vector lr = ref.log_probabilities(prompt);
  const Vector diff = lp - lr;
  const double kl = p.dot(diff);
  const Vector dlogit = p.cwiseProduct((diff.array() - kl).matrix());
  const Vector grad_kl = prompt.features.transpose() * dlogit / theta.temperature;

  return -(grad_obj - config.kl_coeff * grad_kl);
}

PolicyCheckpoint ema_update(const PolicyCheckpoint& ref, const PolicyCheckpoint& new_checkpoint, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw InvalidArgument("ema decay must be in [0, 1)");
  PolicyCheckpoint out = ref;
  out.weights = decay * ref.weights + (1.0 - decay) * new_checkpoint.weights;
  return out;
}

std::string to_string(PromptSource source) {
  return source == PromptSource::near_policy ? "near_policy" : "off_policy";
}

Json to_json(const RlStepLog& log) {
  return Json{{"step", log.step},
              {"mean_reward", log.mean_reward},
              {"kl", log.kl},
              {"loss", log.loss},
              {"step_size", log.step_size},
              {"sampled_emoji_mean", log.sampled_emoji_mean}};
}

RlResult rl_train(const PolicyCheckpoint& policy, const std::vector<EncodedPrompt>& prompts,
                  const RewardScorer& reward, const RlConfig& config, PromptSource prompt_source) {
  validate(config);
  if (prompts.empty()) throw InvalidArgument("rl_train needs at least one prompt");
  RlResult result;
  result.policy = policy;
  result.reference = policy;
  result.reference.policy_version = policy.policy_version + "-ref";
  result.source = prompt_source;

  std::vector<Vector> scores;
  scores.reserve(prompts.size());
  for (const EncodedPrompt& p : prompts) scores.push_back(reward.score(p));

  const std::size_t per_step = config.prompts_per_step == 0
                                   ? prompts.size()
                                   : std::min(prompts.size(), static_cast<std::size_t>(config.prompts_per_step));
  std::vector<std::size_t> order(prompts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng batch_rng(derive_seed(config.seed, {fnv1a("rl-batches")}));

  for (int step = 0; step < config.steps; ++step) {
    const PolicyCheckpoint theta_old = result.policy;
    if (per_step < prompts.size()) batch_rng.shuffle(order);
    std::vector<RlGroup> groups;
    groups.reserve(per_step);
    RlStepLog log;
    log.step = step;
    double emoji = 0.0;
    for (std::size_t b = 0; b < per_step; ++b) {
      const std::size_t i = order[b];
      RlGroup group;
      group.prompt = &prompts[i];
      group.samples = sample_indices(theta_old, prompts[i], config.group_size,
                                     derive_seed(config.seed, {fnv1a("rl-group"), static_cast<std::uint64_t>(step),
                                                               fnv1a(prompts[i].prompt.id)}));
      group.rewards.resize(config.group_size);
      for (int s = 0; s < config.group_size; ++s) {
        const Index y = group.samples[static_cast<std::size_t>(s)];
        group.rewards[s] = scores[i][y];
        emoji += prompts[i].raw(y, slot::kEmojiCount);
      }
      log.mean_reward += group.rewards.mean();
      groups.push_back(std::move(group));
    }
    log.mean_reward /= static_cast<double>(per_step);
    log.sampled_emoji_mean = emoji / static_cast<double>(per_step * static_cast<std::size_t>(config.group_size));

    const GroupObjective objective{theta_old, theta_old, result.reference, groups, config};
    const double f0 = objective.loss(result.policy);
    const Vector grad = objective.gradient(result.policy);
    // Armijo backtracking keeps large KL coefficients stable.
    double eta = config.learning_rate;
    PolicyCheckpoint trial = result.policy;
    bool accepted = false;
    for (int k = 0; k <= config.max_backtracks; ++k, eta *= 0.5) {
      trial.weights = result.policy.weights - eta * grad;
      const double f = objective.loss(trial);
      if (std::isfinite(f) && f <= f0 - 1e-4 * eta * grad.squaredNorm()) {
        accepted = true;
        break;
      }
    }
    if (accepted) {
      result.policy.weights = trial.weights;
      log.step_size = eta;
    }
    log.loss = objective.loss(result.policy);
    result.reference = ema_update(result.reference, result.policy, config.ema_decay);

    double kl = 0.0;
    for (const RlGroup& g : groups) kl += policy_kl(result.policy, result.reference, *g.prompt);
    log.kl = kl / static_cast<double>(groups.size());
    result.log.push_back(log);
  }
  return result;
}

}  // namespace flywheel
