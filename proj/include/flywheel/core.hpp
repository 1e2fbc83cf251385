#pragma once

#include "flywheel/types.hpp"

#include <Eigen/Core>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flywheel {

struct Character {
  std::string id;
  std::string name;
  // [ideal response length in tokens, target emoji rate in [0,1], formality in [0,1]]
  Eigen::Vector3d instruction_features{60.0, 0.1, 0.5};
  // Categorical attributes such as locale or job-to-be-done.
  std::map<std::string, std::string> tags;

  double ideal_length() const { return instruction_features[0]; }
  double emoji_rate() const { return instruction_features[1]; }
  double formality() const { return instruction_features[2]; }
};

struct Response {
  std::string id;
  FeatureVector text_features;
  std::optional<std::string> surface;

  double token_length() const { return text_features[slot::kTokenLength]; }
  double emoji_count() const { return text_features[slot::kEmojiCount]; }
  bool contains_list() const { return text_features[slot::kContainsList] > 0.5; }
  bool templated_phrase() const { return text_features[slot::kTemplatedPhrase] > 0.5; }
};

struct SignalRecord {
  bool continued_within_window = false;
  bool love = false;
  bool thumb_up = false;
  bool thumb_down = false;
  bool written_feedback = false;
};

enum class Role { user, model };

struct Turn {
  Role role = Role::user;
  Response response;
  std::optional<SignalRecord> signals;  // model turns only
};

struct Context {
  FeatureVector system_prompt_features;
  Character character;
  std::vector<Turn> history;

  std::size_t depth() const { return history.size(); }
};

/// One logged session. candidate_sets[k] holds the frozen candidates offered
/// at the k-th model turn (empty when not recorded).
struct Conversation {
  std::string id;
  Character character;
  FeatureVector system_prompt_features;
  std::vector<Turn> turns;
  std::vector<std::vector<Response>> candidate_sets;
  std::string policy_version;

  std::size_t model_turn_count() const;
  bool is_first_turn() const { return model_turn_count() == 1; }

  /// Position in `turns` of the k-th model turn.
  std::size_t model_turn_position(std::size_t k) const;

  /// Context preceding the k-th model turn.
  Context context_before_model_turn(std::size_t k) const;

  /// Context preceding the final model turn (the RL / annotation prompt).
  Context prompt_context() const;
};

enum class PairSource { static_chat, interactive };

struct PreferenceLabel {
  std::string annotator_id;
  int t = 1;  // 1 means y0 preferred

  friend bool operator==(const PreferenceLabel&, const PreferenceLabel&) = default;
};

struct PreferencePair {
  Context context;
  Response y0;
  Response y1;
  std::vector<PreferenceLabel> labels;
  std::string batch_id;
  PairSource source = PairSource::static_chat;
  std::string id;
};

/// A static prompt with its frozen candidate set.
struct PromptInstance {
  std::string id;
  Context context;
  std::vector<Response> candidates;
};

class Encoder;

/// Prompt with every candidate encoded once. Row k of `raw` is encode(x, y_k);
/// `features` is the same matrix after the fixed model-input rescaling.
struct EncodedPrompt {
  PromptInstance prompt;
  Matrix raw;
  Matrix features;

  Index size() const { return raw.rows(); }
};

/// Deterministic (context, response) -> feature map. The projection of the
/// latent response coordinates and the context summary is fixed by `seed`.
class Encoder {
 public:
  Encoder() : Encoder(kDefaultDim, 0) {}
  Encoder(Index dim, std::uint64_t seed);

  Index dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  FeatureVector encode(const Context& context, const Response& response) const;

  /// Rescales raw encodings to the common O(1) range the linear models consume.
  FeatureVector normalize(const FeatureVector& raw) const;
  const Vector& input_scale() const { return scale_; }

  /// Context-only summary used by the pairwise model: encode() against an
  /// all-zero response, normalized.
  Vector context_features(const Context& context) const;

  EncodedPrompt encode_prompt(PromptInstance prompt) const;

  const Matrix& latent_projection() const { return latent_projection_; }
  const Matrix& context_projection() const { return context_projection_; }

  static constexpr std::size_t kHistoryWindow = 8;
  static constexpr double kLengthScale = 50.0;

 private:
  Index dim_;
  std::uint64_t seed_;
  Matrix latent_projection_;   // (dim-8) x (dim-5)
  Matrix context_projection_;  // (dim-8) x (4 + dim)
  Vector scale_;
};

/// The context summary fed through the context projection.
Vector context_summary(const Context& context);

/// Record-level validation used by curation Phase I.
bool is_valid(const Conversation& conversation, Index dim);

/// Convenience wrapper around Encoder::encode.
inline FeatureVector encode(const Encoder& encoder, const Context& context, const Response& response) {
  return encoder.encode(context, response);
}

/// Templated surface rendering, for human-readable logs only.
std::string render_surface(const FeatureVector& features);

/// Extracts the prompt instance for the final model turn of a conversation.
/// Requires candidate_sets to be recorded for that turn.
PromptInstance prompt_from_conversation(const Conversation& conversation);

}  // namespace flywheel
