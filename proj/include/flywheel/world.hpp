#pragma once

#include "flywheel/core.hpp"
#include "flywheel/random.hpp"
#include "flywheel/serialization.hpp"

#include <array>
#include <map>
#include <string>
#include <vector>

namespace flywheel {

/// Anything that can put a distribution over a prompt's candidate set.
class ResponsePolicy {
 public:
  virtual ~ResponsePolicy() = default;
  virtual Vector probabilities(const EncodedPrompt& prompt) const = 0;
  virtual std::string version() const = 0;
};

struct WorldConfig {
  std::uint64_t seed = 0;
  Index dim = kDefaultDim;
  int n_characters = 40;
  std::vector<Character> characters;
  std::vector<double> popularity;  // relative traffic share per character

  // Hidden landscape over encode() slots:
  //   q* = offset + w*.phi - curvature/2 |phi_latent|^2
  //        - length_penalty ((len - ideal)/50)^2 - emoji_penalty max(0, rate - 0.3)^2
  Vector latent_quality_weights;
  double quality_offset = 0.16;
  double latent_curvature = 0.25;
  double length_penalty = 0.3;
  double emoji_saturation_rate = 0.3;
  double emoji_penalty = 2.0;

  double noise_temperature = 2.0;  // gamma
  std::map<std::string, double> annotator_noise;

  // Signal link sigma(a q* + b) and per-signal offsets.
  double link_a = 1.5;
  double link_b = 0.0;
  double thumb_up_offset = 1.5;
  double love_offset = 2.5;
  double thumb_down_offset = 2.0;
  double feedback_offset = 3.0;
  double continue_window_minutes = 10.0;
  double latency_mean_minutes = 4.0;

  // Candidate generator.
  int candidates_per_prompt = 8;
  double length_spread = 0.8;
  double list_rate = 0.2;
  double template_rate = 0.15;
  double emoji_base = 0.3;
  double emoji_mimicry = 0.5;
  double style_carryover = 0.5;

  // User return behaviour across days.
  double visit_bias = 0.0;
  double visit_gain = 1.0;
  int max_session_turns = 12;
  double pii_rate = 0.02;
};

/// Builds a complete default world (characters, weights, annotators) from a seed.
WorldConfig default_world_config(std::uint64_t seed, Index dim = kDefaultDim);

struct SignalProbabilities {
  double reply = 0.0;
  double thumb_up = 0.0;
  double love = 0.0;
  double thumb_down = 0.0;
  double written_feedback = 0.0;
};

struct SessionResult {
  Conversation conversation;
  std::vector<double> qualities;  // q* of each chosen model response
};

class World {
 public:
  explicit World(WorldConfig config);
  static World from_seed(std::uint64_t seed, Index dim = kDefaultDim);

  const WorldConfig& config() const { return config_; }
  const Encoder& encoder() const { return encoder_; }
  Index dim() const { return config_.dim; }

  const Character& character(const std::string& id) const;
  const std::vector<Character>& characters() const { return config_.characters; }
  const Character& sample_character(Rng& rng) const;
  FeatureVector sample_system_prompt(Rng& rng) const;

  double true_quality(const Context& context, const Response& response) const;
  double quality_from_encoding(const FeatureVector& phi, const Character& character) const;
  Vector candidate_qualities(const EncodedPrompt& prompt) const;

  SignalProbabilities signal_probabilities(double quality) const;

  /// Expected continuation probability of a response distribution.
  double expected_engagement(const EncodedPrompt& prompt, const Vector& probs) const;

  std::vector<Response> generate_candidates(const Context& context, std::uint64_t seed) const;
  Response user_message(const Context& context, Rng& rng, std::string id) const;

  SessionResult run_session(const Character& character, const ResponsePolicy& policy, int max_turns,
                            std::uint64_t rng_seed, std::string id = {}) const;

  Conversation simulate_session(const Character& character, const ResponsePolicy& policy, int max_turns,
                                std::uint64_t rng_seed, std::string id = {}) const {
    return run_session(character, policy, max_turns, rng_seed, std::move(id)).conversation;
  }

  /// Draws one label; t = 1 means y0 preferred.
  int annotate_pair(const Context& context, const Response& y0, const Response& y1,
                    const std::string& annotator_id, std::uint64_t rng_seed) const;
  double preference_probability(const Context& context, const Response& y0, const Response& y1,
                                const std::string& annotator_id) const;

  std::array<int, 3> multi_review(const PreferencePair& pair, const std::array<std::string, 3>& annotator_ids,
                                  std::uint64_t rng_seed) const;

  std::vector<std::string> annotator_ids() const;

  Json to_json() const;
  static World from_json(const Json& j);

 private:
  WorldConfig config_;
  Encoder encoder_;
  std::map<std::string, std::size_t> character_index_;
  std::vector<double> popularity_cdf_;
};

class UnknownAnnotator : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Per-day engagement oracle used by the A/B harness: visit probability on a day
/// given the quality the unit experienced in its previous session.
double visit_probability(const WorldConfig& config, double last_session_quality);

}  // namespace flywheel
