#pragma once

#include "flywheel/core.hpp"
#include "flywheel/serialization.hpp"
#include "flywheel/world.hpp"

#include <string>
#include <vector>

namespace flywheel {

enum class ModelKind { pointwise, pairwise, signal };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& text);

/// Linear logistic scorer. Pointwise and signal models read one normalized
/// encoding (length D); pairwise models read [psi0 - psi1 ; context] (length 2D).
struct RewardModel {
  ModelKind kind = ModelKind::pointwise;
  std::string signal_name;  // signal models only
  Vector weights;
  double bias = 0.0;
  std::vector<std::string> trained_batches;

  static RewardModel zeros(ModelKind kind, Index dim, std::string signal_name = {});

  Index feature_dim() const { return kind == ModelKind::pairwise ? weights.size() / 2 : weights.size(); }

  template <typename Derived>
  double score(const Eigen::MatrixBase<Derived>& input) const {
    return weights.dot(input) + bias;
  }
};

void to_json(Json& j, const RewardModel& m);
void from_json(const Json& j, RewardModel& m);

class ModelKindMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 0.5;
  int epochs = 200;
  double l2 = 1e-3;
  int batch_size = 0;  // 0 means full batch
  std::uint64_t seed = 0;
};

/// One training record. The meaning of a, b and label depends on the model kind:
///   pointwise: a = psi(chosen), b = psi(rejected), label unused
///   pairwise:  a = joint input, label = t
///   signal:    a = psi, label = s
struct Example {
  Vector a;
  Vector b;
  int label = 1;
  std::string batch_id;
};

// Losses on prepared inputs.
double pointwise_loss(const RewardModel& model, const Vector& psi_chosen, const Vector& psi_rejected);
double pairwise_loss(const RewardModel& model, const Vector& joint_input, int t);
double signal_loss(const RewardModel& model, const Vector& psi, int s);

// Losses on domain objects, encoding through `encoder`.
double pointwise_loss(const RewardModel& model, const Encoder& encoder, const Context& x, const Response& y_c,
                      const Response& y_r);
double pairwise_loss(const RewardModel& model, const Encoder& encoder, const Context& x, const Response& y0,
                     const Response& y1, int t);
double signal_loss(const RewardModel& model, const Encoder& encoder, const Context& x, const Response& y, int s);

/// Joint pairwise input [psi(x,y0) - psi(x,y1) ; context features].
Vector pairwise_input(const Encoder& encoder, const Context& x, const Response& y0, const Response& y1);

/// Zeroes the context weights and bias so s(x,y0,y1) = -s(x,y1,y0).
RewardModel antisymmetrize(RewardModel model);

struct Gradient {
  Vector weights;
  double bias = 0.0;
};

double example_loss(const RewardModel& model, const Example& e);
Gradient example_gradient(const RewardModel& model, const Example& e);

/// Mean loss plus l2 * |w|^2.
double objective(const RewardModel& model, const std::vector<Example>& data, double l2);
Gradient objective_gradient(const RewardModel& model, const std::vector<Example>& data, double l2);

/// Gradient descent with a fixed step; records the batch ids consumed.
RewardModel train(const RewardModel& model, const std::vector<Example>& data, const TrainConfig& config,
                  std::vector<double>* loss_history = nullptr);

// Dataset builders.
std::vector<Example> pointwise_examples(const std::vector<PreferencePair>& pairs, const Encoder& encoder);
std::vector<Example> pairwise_examples(const std::vector<PreferencePair>& pairs, const Encoder& encoder);
std::vector<Example> signal_examples(const std::vector<Conversation>& conversations, const Encoder& encoder,
                                     const std::string& signal_name);

bool signal_value(const SignalRecord& record, const std::string& name);

/// Label-weighted agreement with the model on preference pairs; ties count 0.5.
double accuracy(const RewardModel& model, const Encoder& encoder, const std::vector<PreferencePair>& pairs);

/// Fraction of i with new_i > old_i; exact ties count 0.5.
double rm_winrate(const std::vector<double>& scores_new, const std::vector<double>& scores_old);
double rm_winrate(const RewardModel& model, const Encoder& encoder, const std::vector<Response>& responses_new,
                  const std::vector<Response>& responses_old, const std::vector<Context>& contexts);

enum class GateDecision { ok, warn, block };
std::string to_string(GateDecision d);

struct GateThresholds {
  double max_rm_winrate = 0.65;
  double warn_rm_winrate = 0.60;
  double max_divergence = 0.15;
};

GateDecision overfit_guard(double winrate_internal, double winrate_user, const GateThresholds& gates = {});

struct AnnotationVariants {
  std::vector<PreferencePair> multi_review;
  std::vector<PreferencePair> single_all;
  std::vector<PreferencePair> single_random;
};

bool unanimous(const PreferencePair& pair);
AnnotationVariants build_annotation_variants(const std::vector<PreferencePair>& pairs, std::uint64_t seed);

/// Scores every candidate of an encoded prompt.
class RewardScorer {
 public:
  virtual ~RewardScorer() = default;
  virtual Vector score(const EncodedPrompt& prompt) const = 0;
};

/// preference_weight * r + sum_i w_i * u_i, optionally minus a long-response penalty.
class CompositeScorer : public RewardScorer {
 public:
  CompositeScorer() = default;
  explicit CompositeScorer(RewardModel preference, double preference_weight = 1.0)
      : preference_(std::move(preference)), preference_weight_(preference_weight) {}

  CompositeScorer& add_signal(RewardModel model, double weight);
  CompositeScorer& long_response_penalty(double lambda, double cap);

  Vector score(const EncodedPrompt& prompt) const override;

 private:
  RewardModel preference_;
  double preference_weight_ = 1.0;
  std::vector<std::pair<RewardModel, double>> signals_;
  double length_lambda_ = 0.0;
  double length_cap_ = 0.0;
};

/// Adapts the world's hidden quality as a scorer (oracle experiments only).
class OracleScorer : public RewardScorer {
 public:
  explicit OracleScorer(const World& world) : world_(&world) {}
  Vector score(const EncodedPrompt& prompt) const override { return world_->candidate_qualities(prompt); }

 private:
  const World* world_;
};

/// Keeps the ceil(keep_fraction * n) prompts whose k sampled responses have the
/// largest reward variance; ties broken by prompt id. Output in input order.
std::vector<std::size_t> variance_downsample_indices(const std::vector<EncodedPrompt>& prompts,
                                                     const ResponsePolicy& policy, const RewardScorer& scorer,
                                                     int k, double keep_fraction, std::uint64_t seed);
std::vector<EncodedPrompt> variance_downsample(const std::vector<EncodedPrompt>& prompts,
                                               const ResponsePolicy& policy, const RewardScorer& scorer, int k,
                                               double keep_fraction, std::uint64_t seed);

}  // namespace flywheel
