#pragma once

#include "flywheel/core.hpp"
#include "flywheel/policy.hpp"
#include "flywheel/random.hpp"
#include "flywheel/world.hpp"

#include <string>
#include <vector>

namespace testsupport {

using namespace flywheel;

inline Response random_response(Rng& rng, Index dim, std::string id) {
  FeatureVector y(dim);
  y[slot::kTokenLength] = std::round(rng.uniform(5, 200));
  y[slot::kEmojiCount] = std::floor(rng.uniform(0, 6));
  y[slot::kContainsList] = rng.bernoulli(0.3) ? 1 : 0;
  y[slot::kTemplatedPhrase] = rng.bernoulli(0.2) ? 1 : 0;
  y[slot::kSentiment] = rng.uniform(-1, 1);
  for (Index j = slot::kNamedCount; j < dim; ++j) y[j] = rng.uniform(-1, 1);
  return Response{std::move(id), std::move(y), std::nullopt};
}

inline Context random_context(const World& world, Rng& rng, int history_turns) {
  Context x;
  x.character = world.sample_character(rng);
  x.system_prompt_features = world.sample_system_prompt(rng);
  for (int t = 0; t < history_turns; ++t) {
    Turn turn;
    turn.role = t % 2 == 0 ? Role::user : Role::model;
    turn.response = random_response(rng, world.dim(), "h" + std::to_string(t));
    if (turn.role == Role::model) turn.signals = SignalRecord{};
    x.history.push_back(std::move(turn));
  }
  return x;
}

// Prompts as the flywheel sees them: the last turn of short uniform-policy sessions.
inline std::vector<EncodedPrompt> session_prompts(const World& world, int n, std::uint64_t seed, int max_turns = 3) {
  UniformPolicy uniform;
  Rng rng(seed);
  std::vector<EncodedPrompt> out;
  for (int i = 0; i < n; ++i) {
    const Character& c = world.sample_character(rng);
    const Conversation conv = world.simulate_session(c, uniform, max_turns, derive_seed(seed, {std::uint64_t(i)}));
    out.push_back(world.encoder().encode_prompt(prompt_from_conversation(conv)));
  }
  return out;
}

inline Vector random_vector(Rng& rng, Index n, double scale = 1.0) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(-scale, scale);
  return v;
}

}  // namespace testsupport
