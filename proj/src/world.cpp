#include "flywheel/world.hpp"

#include "flywheel/math.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace flywheel {
namespace {

std::string hex_id(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

constexpr const char* kLocales[] = {"en_US", "es_MX", "hi_IN", "en_GB"};
constexpr const char* kJobs[] = {"roleplay", "companionship", "advice", "humor", "image-gen"};
constexpr const char* kSyllables[] = {"ka", "ri", "mo", "ta", "lu", "ven", "sa", "do", "mi", "ra", "zo", "el"};
constexpr const char* kPiiPhrases[] = {"my phone number is 555-0100", "my home address is 12 Elm St"};

std::string character_name(Rng& rng) {
  std::string name;
  const std::size_t n = 2 + rng.index(2);
  for (std::size_t i = 0; i < n; ++i) name += kSyllables[rng.index(std::size(kSyllables))];
  name[0] = static_cast<char>(name[0] - 'a' + 'A');
  return name;
}

double emoji_rate_of(double emoji_count, double token_length) {
  return std::min(1.0, emoji_count / std::max(1.0, token_length / 10.0));
}

}  // namespace

WorldConfig default_world_config(std::uint64_t seed, Index dim) {
  if (dim < kMinDim) throw InvalidArgument("world dimension must be at least " + std::to_string(kMinDim));
  WorldConfig cfg;
  cfg.seed = seed;
  cfg.dim = dim;
  Rng rng(derive_seed(seed, {fnv1a("world-config")}));

  cfg.characters.reserve(static_cast<std::size_t>(cfg.n_characters));
  for (int i = 0; i < cfg.n_characters; ++i) {
    Character c;
    char id[16];
    std::snprintf(id, sizeof id, "char-%02d", i);
    c.id = id;
    c.name = character_name(rng);
    c.instruction_features = Eigen::Vector3d(rng.uniform(20.0, 120.0), rng.uniform(0.0, 0.5), rng.uniform());
    c.tags["locale"] = kLocales[rng.index(std::size(kLocales))];
    c.tags["jtbd"] = kJobs[rng.index(std::size(kJobs))];
    cfg.characters.push_back(std::move(c));
    // Zipf-like popularity: a few characters dominate raw traffic.
    cfg.popularity.push_back(1.0 / std::pow(static_cast<double>(i + 1), 0.8));
  }

  cfg.latent_quality_weights = Vector::Zero(dim);
  cfg.latent_quality_weights[slot::kEmojiCount] = 0.15;
  cfg.latent_quality_weights[slot::kContainsList] = 0.2;
  cfg.latent_quality_weights[slot::kTemplatedPhrase] = -0.6;
  cfg.latent_quality_weights[slot::kSentiment] = 0.4;
  cfg.latent_quality_weights[slot::kHistoryEmoji] = -0.05;
  for (Index j = slot::kLatentBegin; j < dim; ++j) cfg.latent_quality_weights[j] = rng.uniform(-1.0, 1.0);

  const double noise[] = {0.0, 0.25, 0.5, 0.5, 1.0, 1.5};
  for (std::size_t i = 0; i < std::size(noise); ++i) {
    cfg.annotator_noise["ann-" + std::to_string(i)] = noise[i];
  }
  return cfg;
}

World::World(WorldConfig config) : config_(std::move(config)), encoder_(config_.dim, config_.seed) {
  if (!(config_.noise_temperature > 0.0)) throw InvalidArgument("noise_temperature must be positive");
  if (config_.latent_quality_weights.size() != config_.dim || !config_.latent_quality_weights.allFinite()) {
    throw InvalidArgument("latent_quality_weights must be finite with length dim");
  }
  if (config_.characters.empty()) throw InvalidArgument("world needs at least one character");
  if (config_.popularity.size() != config_.characters.size()) {
    throw InvalidArgument("popularity must have one entry per character");
  }
  if (config_.candidates_per_prompt < 2) throw InvalidArgument("candidates_per_prompt must be >= 2");
  for (const auto& [id, noise] : config_.annotator_noise) {
    if (!(noise >= 0.0)) throw InvalidArgument("annotator noise must be nonnegative: " + id);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < config_.characters.size(); ++i) {
    const Character& c = config_.characters[i];
    if (!c.instruction_features.allFinite() || c.emoji_rate() < 0.0 || c.emoji_rate() > 1.0) {
      throw InvalidArgument("character " + c.id + " has invalid style targets");
    }
    if (!character_index_.emplace(c.id, i).second) throw InvalidArgument("duplicate character id " + c.id);
    total += config_.popularity[i];
    popularity_cdf_.push_back(total);
  }
  for (double& p : popularity_cdf_) p /= total;
}

World World::from_seed(std::uint64_t seed, Index dim) { return World(default_world_config(seed, dim)); }

const Character& World::character(const std::string& id) const {
  auto it = character_index_.find(id);
  if (it == character_index_.end()) throw InvalidArgument("unknown character " + id);
  return config_.characters[it->second];
}

const Character& World::sample_character(Rng& rng) const {
  const double u = rng.uniform();
  auto it = std::upper_bound(popularity_cdf_.begin(), popularity_cdf_.end(), u);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(it - popularity_cdf_.begin()),
                                       config_.characters.size() - 1);
  return config_.characters[i];
}

FeatureVector World::sample_system_prompt(Rng& rng) const {
  FeatureVector v(config_.dim);
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-0.5, 0.5);
  return v;
}

double World::quality_from_encoding(const FeatureVector& phi, const Character& character) const {
  const Index latent = config_.dim - slot::kLatentBegin;
  const double deviation = (phi[slot::kTokenLength] - character.ideal_length()) / Encoder::kLengthScale;
  const double rate = emoji_rate_of(phi[slot::kEmojiCount], phi[slot::kTokenLength]);
  const double excess = std::max(0.0, rate - config_.emoji_saturation_rate);
  return config_.quality_offset + config_.latent_quality_weights.dot(phi) -
         0.5 * config_.latent_curvature * phi.tail(latent).squaredNorm() -
         config_.length_penalty * deviation * deviation - config_.emoji_penalty * excess * excess;
}

double World::true_quality(const Context& context, const Response& response) const {
  return quality_from_encoding(encoder_.encode(context, response), context.character);
}

Vector World::candidate_qualities(const EncodedPrompt& prompt) const {
  Vector q(prompt.size());
  for (Index k = 0; k < prompt.size(); ++k) {
    q[k] = quality_from_encoding(prompt.raw.row(k).transpose(), prompt.prompt.context.character);
  }
  return q;
}

SignalProbabilities World::signal_probabilities(double quality) const {
  const double z = config_.link_a * quality + config_.link_b;
  SignalProbabilities p;
  p.reply = sigmoid(z);
  p.thumb_up = sigmoid(z - config_.thumb_up_offset);
  p.love = sigmoid(z - config_.love_offset);
  p.thumb_down = sigmoid(-config_.link_a * quality + config_.link_b - config_.thumb_down_offset);
  p.written_feedback = sigmoid(-config_.link_a * quality + config_.link_b - config_.feedback_offset);
  return p;
}

double World::expected_engagement(const EncodedPrompt& prompt, const Vector& probs) const {
  const Vector q = candidate_qualities(prompt);
  double total = 0.0;
  for (Index k = 0; k < q.size(); ++k) total += probs[k] * signal_probabilities(q[k]).reply;
  return total;
}

std::vector<Response> World::generate_candidates(const Context& context, std::uint64_t seed) const {
  Rng rng(seed);
  const Index dim = config_.dim;
  const Index latent = dim - slot::kNamedCount;
  Vector previous = Vector::Zero(latent);
  for (auto it = context.history.rbegin(); it != context.history.rend(); ++it) {
    if (it->role == Role::model) {
      previous = it->response.text_features.tail(latent);
      break;
    }
  }
  const std::size_t window = std::min(context.history.size(), Encoder::kHistoryWindow);
  double history_emoji = 0.0;
  for (std::size_t i = context.history.size() - window; i < context.history.size(); ++i) {
    history_emoji += context.history[i].response.text_features[slot::kEmojiCount];
  }
  if (window > 0) history_emoji /= static_cast<double>(window);

  const double ideal = context.character.ideal_length();
  const double emoji_mean =
      config_.emoji_base + config_.emoji_mimicry * history_emoji + 4.0 * context.character.emoji_rate();
  const double carry = config_.style_carryover;
  const std::string prefix = "r" + hex_id(seed) + "-";

  std::vector<Response> out;
  out.reserve(static_cast<std::size_t>(config_.candidates_per_prompt));
  for (int k = 0; k < config_.candidates_per_prompt; ++k) {
    FeatureVector y(dim);
    y[slot::kTokenLength] =
        std::max(1.0, std::round(ideal * std::exp(rng.uniform(-config_.length_spread, config_.length_spread))));
    y[slot::kEmojiCount] = std::floor(rng.uniform() * 2.0 * emoji_mean);
    y[slot::kContainsList] = rng.bernoulli(config_.list_rate) ? 1.0 : 0.0;
    y[slot::kTemplatedPhrase] = rng.bernoulli(config_.template_rate) ? 1.0 : 0.0;
    y[slot::kSentiment] = rng.uniform(-1.0, 1.0);
    for (Index j = 0; j < latent; ++j) {
      y[slot::kNamedCount + j] = carry * previous[j] + (1.0 - carry) * rng.uniform(-1.0, 1.0);
    }
    out.push_back(Response{prefix + std::to_string(k), std::move(y), std::nullopt});
  }
  return out;
}

Response World::user_message(const Context& context, Rng& rng, std::string id) const {
  FeatureVector y = FeatureVector::Zero(config_.dim);
  y[slot::kTokenLength] = std::round(rng.uniform(3.0, 40.0));
  y[slot::kEmojiCount] = std::floor(rng.uniform() * 2.0 * (0.2 + 2.0 * context.character.emoji_rate()));
  y[slot::kSentiment] = rng.uniform(-1.0, 1.0);
  for (Index j = slot::kNamedCount; j < config_.dim; ++j) y[j] = rng.uniform(-1.0, 1.0);
  std::string surface = "<user " + std::to_string(static_cast<long>(y[slot::kTokenLength])) + " tokens>";
  if (rng.bernoulli(config_.pii_rate)) {
    surface += " ";
    surface += kPiiPhrases[rng.index(std::size(kPiiPhrases))];
  }
  return Response{std::move(id), std::move(y), std::move(surface)};
}

SessionResult World::run_session(const Character& character, const ResponsePolicy& policy, int max_turns,
                                 std::uint64_t rng_seed, std::string id) const {
  if (max_turns < 1) throw InvalidArgument("max_turns must be >= 1");
  Rng rng(derive_seed(config_.seed, {fnv1a("session"), rng_seed}));
  SessionResult result;
  Conversation& conv = result.conversation;
  conv.id = id.empty() ? "s" + hex_id(rng_seed) : std::move(id);
  conv.character = character;
  conv.system_prompt_features = sample_system_prompt(rng);
  conv.policy_version = policy.version();

  PromptInstance prompt;
  prompt.context.system_prompt_features = conv.system_prompt_features;
  prompt.context.character = character;

  for (int t = 0; t < max_turns; ++t) {
    Turn user{Role::user, user_message(prompt.context, rng, conv.id + "/u" + std::to_string(t)), std::nullopt};
    prompt.context.history.push_back(user);
    conv.turns.push_back(std::move(user));

    prompt.id = conv.id + "/t" + std::to_string(t);
    prompt.candidates =
        generate_candidates(prompt.context, derive_seed(config_.seed, {fnv1a("candidates"), rng_seed,
                                                                       static_cast<std::uint64_t>(t)}));
    EncodedPrompt encoded = encoder_.encode_prompt(std::move(prompt));
    const Vector probs = policy.probabilities(encoded);
    const auto choice = static_cast<Index>(rng.categorical(probs));

    Response chosen = encoded.prompt.candidates[static_cast<std::size_t>(choice)];
    chosen.surface = render_surface(chosen.text_features);
    const double q = quality_from_encoding(encoded.raw.row(choice).transpose(), character);
    result.qualities.push_back(q);

    const SignalProbabilities p = signal_probabilities(q);
    SignalRecord signals;
    const bool reply = rng.bernoulli(p.reply);
    const double latency = rng.exponential(config_.latency_mean_minutes);
    signals.continued_within_window = reply && latency <= config_.continue_window_minutes;
    const double u = rng.uniform();
    signals.thumb_up = u < p.thumb_up;
    signals.thumb_down = !signals.thumb_up && u >= 1.0 - p.thumb_down;
    signals.love = rng.bernoulli(p.love);
    signals.written_feedback = rng.bernoulli(p.written_feedback);

    prompt = std::move(encoded.prompt);
    conv.candidate_sets.push_back(prompt.candidates);
    Turn model{Role::model, std::move(chosen), signals};
    prompt.context.history.push_back(model);
    conv.turns.push_back(std::move(model));
    if (!reply) break;
  }
  return result;
}

double World::preference_probability(const Context& context, const Response& y0, const Response& y1,
                                     const std::string& annotator_id) const {
  auto it = config_.annotator_noise.find(annotator_id);
  if (it == config_.annotator_noise.end()) throw UnknownAnnotator("unknown annotator " + annotator_id);
  const double delta = true_quality(context, y0) - true_quality(context, y1);
  return sigmoid(config_.noise_temperature * delta / (1.0 + it->second));
}

int World::annotate_pair(const Context& context, const Response& y0, const Response& y1,
                         const std::string& annotator_id, std::uint64_t rng_seed) const {
  const double p = preference_probability(context, y0, y1, annotator_id);
  Rng rng(derive_seed(config_.seed, {fnv1a("annotate"), fnv1a(annotator_id), rng_seed}));
  return rng.bernoulli(p) ? 1 : 0;
}

std::array<int, 3> World::multi_review(const PreferencePair& pair, const std::array<std::string, 3>& annotator_ids,
                                       std::uint64_t rng_seed) const {
  const std::set<std::string> distinct(annotator_ids.begin(), annotator_ids.end());
  if (distinct.size() != 3) throw InvalidArgument("multi_review needs three distinct annotators");
  std::array<int, 3> labels{};
  for (std::size_t i = 0; i < 3; ++i) {
    labels[i] = annotate_pair(pair.context, pair.y0, pair.y1, annotator_ids[i],
                              derive_seed(rng_seed, {fnv1a("review"), i}));
  }
  return labels;
}

std::vector<std::string> World::annotator_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, noise] : config_.annotator_noise) ids.push_back(id);
  return ids;
}

double visit_probability(const WorldConfig& config, double last_session_quality) {
  return sigmoid(config.visit_bias + config.visit_gain * last_session_quality);
}

Json World::to_json() const {
  const WorldConfig& c = config_;
  return Json{{"seed", c.seed},
              {"dim", c.dim},
              {"n_characters", c.n_characters},
              {"characters", c.characters},
              {"popularity", c.popularity},
              {"latent_quality_weights", vector_to_json(c.latent_quality_weights)},
              {"quality_offset", c.quality_offset},
              {"latent_curvature", c.latent_curvature},
              {"length_penalty", c.length_penalty},
              {"emoji_saturation_rate", c.emoji_saturation_rate},
              {"emoji_penalty", c.emoji_penalty},
              {"noise_temperature", c.noise_temperature},
              {"annotator_noise", c.annotator_noise},
              {"engagement_link", {{"a", c.link_a}, {"b", c.link_b}}},
              {"signal_offsets",
               {{"thumb_up", c.thumb_up_offset},
                {"love", c.love_offset},
                {"thumb_down", c.thumb_down_offset},
                {"written_feedback", c.feedback_offset}}},
              {"continue_window_minutes", c.continue_window_minutes},
              {"latency_mean_minutes", c.latency_mean_minutes},
              {"candidates_per_prompt", c.candidates_per_prompt},
              {"length_spread", c.length_spread},
              {"list_rate", c.list_rate},
              {"template_rate", c.template_rate},
              {"emoji_base", c.emoji_base},
              {"emoji_mimicry", c.emoji_mimicry},
              {"style_carryover", c.style_carryover},
              {"visit_bias", c.visit_bias},
              {"visit_gain", c.visit_gain},
              {"max_session_turns", c.max_session_turns},
              {"pii_rate", c.pii_rate}};
}

World World::from_json(const Json& j) {
  WorldConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.dim = j.at("dim").get<Index>();
  c.n_characters = j.at("n_characters").get<int>();
  c.characters = j.at("characters").get<std::vector<Character>>();
  c.popularity = j.at("popularity").get<std::vector<double>>();
  c.latent_quality_weights = vector_from_json(j.at("latent_quality_weights"));
  c.quality_offset = j.at("quality_offset").get<double>();
  c.latent_curvature = j.at("latent_curvature").get<double>();
  c.length_penalty = j.at("length_penalty").get<double>();
  c.emoji_saturation_rate = j.at("emoji_saturation_rate").get<double>();
  c.emoji_penalty = j.at("emoji_penalty").get<double>();
  c.noise_temperature = j.at("noise_temperature").get<double>();
  c.annotator_noise = j.at("annotator_noise").get<std::map<std::string, double>>();
  c.link_a = j.at("engagement_link").at("a").get<double>();
  c.link_b = j.at("engagement_link").at("b").get<double>();
  const Json& offsets = j.at("signal_offsets");
  c.thumb_up_offset = offsets.at("thumb_up").get<double>();
  c.love_offset = offsets.at("love").get<double>();
  c.thumb_down_offset = offsets.at("thumb_down").get<double>();
  c.feedback_offset = offsets.at("written_feedback").get<double>();
  c.continue_window_minutes = j.at("continue_window_minutes").get<double>();
  c.latency_mean_minutes = j.at("latency_mean_minutes").get<double>();
  c.candidates_per_prompt = j.at("candidates_per_prompt").get<int>();
  c.length_spread = j.at("length_spread").get<double>();
  c.list_rate = j.at("list_rate").get<double>();
  c.template_rate = j.at("template_rate").get<double>();
  c.emoji_base = j.at("emoji_base").get<double>();
  c.emoji_mimicry = j.at("emoji_mimicry").get<double>();
  c.style_carryover = j.at("style_carryover").get<double>();
  c.visit_bias = j.at("visit_bias").get<double>();
  c.visit_gain = j.at("visit_gain").get<double>();
  c.max_session_turns = j.at("max_session_turns").get<int>();
  c.pii_rate = j.at("pii_rate").get<double>();
  return World(std::move(c));
}

}  // namespace flywheel
