#include "flywheel/core.hpp"

#include "flywheel/random.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace flywheel {

std::size_t Conversation::model_turn_count() const {
  return static_cast<std::size_t>(
      std::count_if(turns.begin(), turns.end(), [](const Turn& t) { return t.role == Role::model; }));
}

std::size_t Conversation::model_turn_position(std::size_t k) const {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    if (turns[i].role != Role::model) continue;
    if (seen == k) return i;
    ++seen;
  }
  throw InvalidArgument("conversation " + id + " has no model turn " + std::to_string(k));
}

Context Conversation::context_before_model_turn(std::size_t k) const {
  const std::size_t pos = model_turn_position(k);
  Context ctx;
  ctx.system_prompt_features = system_prompt_features;
  ctx.character = character;
  ctx.history.assign(turns.begin(), turns.begin() + static_cast<std::ptrdiff_t>(pos));
  return ctx;
}

Context Conversation::prompt_context() const {
  const std::size_t n = model_turn_count();
  if (n == 0) throw InvalidArgument("conversation " + id + " has no model turns");
  return context_before_model_turn(n - 1);
}

Vector context_summary(const Context& context) {
  const Index dim = context.system_prompt_features.size();
  Vector c(4 + dim);
  c[0] = context.character.ideal_length() / 100.0;
  c[1] = context.character.emoji_rate();
  c[2] = context.character.formality();
  c[3] = static_cast<double>(std::min<std::size_t>(context.depth(), Encoder::kHistoryWindow)) /
         static_cast<double>(Encoder::kHistoryWindow);
  c.tail(dim) = context.system_prompt_features;
  return c;
}

Encoder::Encoder(Index dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < kMinDim) {
    throw InvalidArgument("feature dimension must be at least " + std::to_string(kMinDim));
  }
  const Index latent_out = dim - slot::kLatentBegin;
  const Index latent_in = dim - slot::kNamedCount;
  Rng rng(derive_seed(seed, {fnv1a("encoder-projection")}));
  // Unit-variance rows for uniform inputs on [-1, 1].
  const double a = std::sqrt(3.0 / static_cast<double>(latent_in));
  latent_projection_.resize(latent_out, latent_in);
  for (Index i = 0; i < latent_out; ++i)
    for (Index j = 0; j < latent_in; ++j) latent_projection_(i, j) = rng.uniform(-a, a);
  context_projection_.resize(latent_out, 4 + dim);
  for (Index i = 0; i < latent_out; ++i)
    for (Index j = 0; j < 4 + dim; ++j) context_projection_(i, j) = rng.uniform(-0.1, 0.1);

  scale_ = Vector::Ones(dim);
  scale_[slot::kTokenLength] = 1.0 / 100.0;
  scale_[slot::kEmojiCount] = 1.0 / 5.0;
  scale_[slot::kHistoryEmoji] = 1.0 / 5.0;
  scale_[slot::kHistoryLength] = 1.0 / 100.0;
}

FeatureVector Encoder::encode(const Context& context, const Response& response) const {
  const auto& y = response.text_features;
  if (y.size() != dim_) {
    throw EncodingError("response " + response.id + " has dimension " + std::to_string(y.size()) +
                        ", expected " + std::to_string(dim_));
  }
  if (context.system_prompt_features.size() != dim_) {
    throw EncodingError("system prompt features have dimension " +
                        std::to_string(context.system_prompt_features.size()) + ", expected " +
                        std::to_string(dim_));
  }

  FeatureVector phi(dim_);
  phi.head(slot::kNamedCount) = y.head(slot::kNamedCount);

  const double deviation = (y[slot::kTokenLength] - context.character.ideal_length()) / kLengthScale;
  phi[slot::kLengthFit] = -deviation * deviation;

  const std::size_t n = std::min(context.history.size(), kHistoryWindow);
  double emoji = 0.0;
  double length = 0.0;
  for (std::size_t i = context.history.size() - n; i < context.history.size(); ++i) {
    const auto& f = context.history[i].response.text_features;
    if (f.size() != dim_) throw EncodingError("history turn has wrong dimension");
    emoji += f[slot::kEmojiCount];
    length += f[slot::kTokenLength];
  }
  phi[slot::kHistoryEmoji] = n > 0 ? emoji / static_cast<double>(n) : 0.0;
  phi[slot::kHistoryLength] = n > 0 ? length / static_cast<double>(n) : 0.0;

  phi.tail(dim_ - slot::kLatentBegin).noalias() =
      latent_projection_ * y.tail(dim_ - slot::kNamedCount) + context_projection_ * context_summary(context);
  return phi;
}

FeatureVector Encoder::normalize(const FeatureVector& raw) const {
  return raw.cwiseProduct(scale_);
}

Vector Encoder::context_features(const Context& context) const {
  Response empty{"", Vector::Zero(dim_), std::nullopt};
  return normalize(encode(context, empty));
}

EncodedPrompt Encoder::encode_prompt(PromptInstance prompt) const {
  const auto k = static_cast<Index>(prompt.candidates.size());
  EncodedPrompt out;
  out.raw.resize(k, dim_);
  for (Index i = 0; i < k; ++i) {
    out.raw.row(i) = encode(prompt.context, prompt.candidates[static_cast<std::size_t>(i)]).transpose();
  }
  out.features = out.raw * scale_.asDiagonal();
  out.prompt = std::move(prompt);
  return out;
}

bool is_valid(const Conversation& conversation, Index dim) {
  auto finite_dim = [dim](const Vector& v) { return v.size() == dim && v.allFinite(); };
  if (conversation.id.empty() || conversation.character.id.empty()) return false;
  if (!finite_dim(conversation.system_prompt_features)) return false;
  if (!conversation.character.instruction_features.allFinite()) return false;
  const double emoji_rate = conversation.character.emoji_rate();
  if (emoji_rate < 0.0 || emoji_rate > 1.0) return false;
  if (conversation.model_turn_count() == 0) return false;
  for (const Turn& turn : conversation.turns) {
    const auto& f = turn.response.text_features;
    if (!finite_dim(f)) return false;
    if (f[slot::kTokenLength] < 0.0 || f[slot::kEmojiCount] < 0.0) return false;
    if (f[slot::kSentiment] < -1.0 || f[slot::kSentiment] > 1.0) return false;
    if (turn.role == Role::user && turn.signals.has_value()) return false;
    if (turn.role == Role::model) {
      if (!turn.signals.has_value()) return false;
      if (turn.signals->thumb_up && turn.signals->thumb_down) return false;
    }
  }
  if (!conversation.candidate_sets.empty() &&
      conversation.candidate_sets.size() != conversation.model_turn_count()) {
    return false;
  }
  for (const auto& set : conversation.candidate_sets) {
    for (const Response& r : set) {
      if (!finite_dim(r.text_features)) return false;
    }
  }
  return true;
}

std::string render_surface(const FeatureVector& features) {
  std::ostringstream out;
  const auto tokens = static_cast<long>(std::lround(features[slot::kTokenLength]));
  if (features[slot::kTemplatedPhrase] > 0.5) out << "I feel like ";
  out << "<" << tokens << " tokens";
  const double sentiment = features[slot::kSentiment];
  out << (sentiment > 0.33 ? ", warm" : sentiment < -0.33 ? ", cool" : "") << ">";
  if (features[slot::kContainsList] > 0.5) out << "\n- item\n- item";
  const auto emojis = static_cast<long>(std::lround(features[slot::kEmojiCount]));
  for (long i = 0; i < emojis; ++i) out << " :)";
  return out.str();
}

PromptInstance prompt_from_conversation(const Conversation& conversation) {
  const std::size_t n = conversation.model_turn_count();
  if (n == 0 || conversation.candidate_sets.size() != n) {
    throw InvalidArgument("conversation " + conversation.id + " has no recorded candidate set");
  }
  PromptInstance prompt;
  prompt.id = conversation.id + "/t" + std::to_string(n - 1);
  prompt.context = conversation.prompt_context();
  prompt.candidates = conversation.candidate_sets.back();
  return prompt;
}

}  // namespace flywheel
