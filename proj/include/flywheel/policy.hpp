#pragma once

#include "flywheel/core.hpp"
#include "flywheel/reward.hpp"
#include "flywheel/serialization.hpp"
#include "flywheel/world.hpp"

#include <optional>
#include <string>
#include <vector>

namespace flywheel {

/// Softmax over a prompt's candidate set of weights . psi(x, y) / temperature,
/// where psi is the normalized encoding.
struct PolicyCheckpoint : ResponsePolicy {
  std::string policy_version = "V0";
  Vector weights;
  double temperature = 1.0;
  std::optional<std::string> parent;

  PolicyCheckpoint() = default;
  PolicyCheckpoint(std::string v, Vector w, double t = 1.0, std::optional<std::string> p = std::nullopt)
      : policy_version(std::move(v)), weights(std::move(w)), temperature(t), parent(std::move(p)) {}

  static PolicyCheckpoint zeros(Index dim, std::string version = "V0");

  Vector logits(const EncodedPrompt& prompt) const;
  Vector log_probabilities(const EncodedPrompt& prompt) const;
  Vector probabilities(const EncodedPrompt& prompt) const override;
  std::string version() const override { return policy_version; }
};

void to_json(Json& j, const PolicyCheckpoint& p);
void from_json(const Json& j, PolicyCheckpoint& p);

/// Uniform over candidates.
class UniformPolicy : public ResponsePolicy {
 public:
  Vector probabilities(const EncodedPrompt& prompt) const override;
  std::string version() const override { return "uniform"; }
};

/// Always picks the candidate with the highest hidden quality (oracle experiments only).
class GreedyOraclePolicy : public ResponsePolicy {
 public:
  explicit GreedyOraclePolicy(const World& world) : world_(&world) {}
  Vector probabilities(const EncodedPrompt& prompt) const override;
  std::string version() const override { return "oracle-greedy"; }

 private:
  const World* world_;
};

class MissingCandidate : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Position of a response id in the prompt's candidate set.
Index candidate_index(const EncodedPrompt& prompt, const std::string& response_id);

std::vector<Index> sample_indices(const ResponsePolicy& policy, const EncodedPrompt& prompt, int n,
                                  std::uint64_t seed);
std::vector<Response> sample(const ResponsePolicy& policy, const EncodedPrompt& prompt, int n, std::uint64_t seed);

struct RjsSample {
  std::size_t prompt_index = 0;
  Index candidate = 0;
  std::string response_id;
  double reward = 0.0;
  std::string model_version;
};

struct RjsConfig {
  int k = 8;
  double tau = 0.0;
  int probe_samples = 4;
};

/// Per prompt: route to the model with the best mean reward over a probe
/// (ties to the later, newer model), draw k responses from it, and keep the
/// first argmax iff its reward clears tau. Seeds:
///   probe of model l: derive_seed(seed, {fnv1a("rjs-probe"), fnv1a(prompt id), l})
///   draws:            derive_seed(seed, {fnv1a("rjs-draw"), fnv1a(prompt id), l})
std::vector<RjsSample> rejection_sample(const std::vector<EncodedPrompt>& prompts,
                                        const std::vector<PolicyCheckpoint>& models, const RewardScorer& reward,
                                        const RjsConfig& config, std::uint64_t seed);

/// Mean log pi(Y*|X) over the dataset.
double sft_objective(const PolicyCheckpoint& policy, const std::vector<EncodedPrompt>& prompts,
                     const std::vector<RjsSample>& data);
Vector sft_gradient(const PolicyCheckpoint& policy, const std::vector<EncodedPrompt>& prompts,
                    const std::vector<RjsSample>& data);
PolicyCheckpoint sft_step(const PolicyCheckpoint& policy, const std::vector<EncodedPrompt>& prompts,
                          const std::vector<RjsSample>& data, double learning_rate);

struct DpoExample {
  std::size_t prompt_index = 0;
  Index chosen = 0;
  Index rejected = 1;
};

double dpo_loss(const PolicyCheckpoint& policy, const PolicyCheckpoint& reference, const EncodedPrompt& prompt,
                Index chosen, Index rejected, double beta);
Vector dpo_gradient(const PolicyCheckpoint& policy, const PolicyCheckpoint& reference, const EncodedPrompt& prompt,
                    Index chosen, Index rejected, double beta);

struct DpoConfig {
  double beta = 0.1;
  double learning_rate = 1.0;
  int steps = 20;
};

double dpo_objective(const PolicyCheckpoint& policy, const PolicyCheckpoint& reference,
                     const std::vector<EncodedPrompt>& prompts, const std::vector<DpoExample>& data, double beta);
PolicyCheckpoint dpo_train(const PolicyCheckpoint& policy, const PolicyCheckpoint& reference,
                           const std::vector<EncodedPrompt>& prompts, const std::vector<DpoExample>& data,
                           const DpoConfig& config);

struct RlConfig {
  int group_size = 8;
  double clip_epsilon = 0.2;
  double kl_coeff = 5.0;
  double ema_decay = 0.99;
  double learning_rate = 1.0;
  int steps = 30;
  int prompts_per_step = 0;  // 0 uses every prompt each step
  int max_backtracks = 40;
  std::uint64_t seed = 0;
};

void validate(const RlConfig& config);

/// One prompt's sampled group with the generation-time probabilities.
struct RlGroup {
  const EncodedPrompt* prompt = nullptr;
  std::vector<Index> samples;
  Vector rewards;
};

/// (r - mean) / (std + 1e-8) with population std; r - mean when std < 1e-8.
Vector group_advantages(const Vector& rewards);

/// Negated clipped importance-weighted surrogate plus kl_coeff * KL(pi_theta || pi_ref),
/// for one group.
double grpo_loss(const PolicyCheckpoint& theta, const PolicyCheckpoint& theta_old, const ResponsePolicy& gen,
                 const PolicyCheckpoint& ref, const RlGroup& group, const RlConfig& config);
Vector grpo_gradient(const PolicyCheckpoint& theta, const PolicyCheckpoint& theta_old, const ResponsePolicy& gen,
                     const PolicyCheckpoint& ref, const RlGroup& group, const RlConfig& config);

/// Exact KL(p || q) between two policies on one prompt.
double policy_kl(const PolicyCheckpoint& p, const PolicyCheckpoint& q, const EncodedPrompt& prompt);

PolicyCheckpoint ema_update(const PolicyCheckpoint& ref, const PolicyCheckpoint& new_checkpoint, double decay);

enum class PromptSource { near_policy, off_policy };
std::string to_string(PromptSource source);

struct RlStepLog {
  int step = 0;
  double mean_reward = 0.0;
  double kl = 0.0;
  double loss = 0.0;
  double step_size = 0.0;
  double sampled_emoji_mean = 0.0;
};

Json to_json(const RlStepLog& log);

struct RlResult {
  PolicyCheckpoint policy;
  PolicyCheckpoint reference;
  std::vector<RlStepLog> log;
  PromptSource source = PromptSource::near_policy;
};

/// GRPO loop: on-policy groups, one backtracking gradient step per iteration,
/// theta_old refreshed every step and the reference tracked as an EMA.
RlResult rl_train(const PolicyCheckpoint& policy, const std::vector<EncodedPrompt>& prompts,
                  const RewardScorer& reward, const RlConfig& config,
                  PromptSource prompt_source = PromptSource::near_policy);

}  // namespace flywheel
