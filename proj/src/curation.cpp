#include "flywheel/curation.hpp"

#include "flywheel/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>

namespace flywheel {
namespace {

bool in_unit(double x) { return x >= 0.0 && x <= 1.0; }

bool contains_blocked(const std::optional<std::string>& surface, const std::vector<std::string>& terms) {
  if (!surface) return false;
  for (const auto& term : terms) {
    if (!term.empty() && surface->find(term) != std::string::npos) return true;
  }
  return false;
}

void strip_phrases(std::string& text, const std::vector<std::string>& phrases) {
  for (const auto& phrase : phrases) {
    if (phrase.empty()) continue;
    for (auto pos = text.find(phrase); pos != std::string::npos; pos = text.find(phrase, pos)) {
      text.erase(pos, phrase.size());
    }
  }
}

using StratumKey = std::function<std::string(const Conversation&)>;

// Drops at random from every stratum that exceeds its share cap, repeating
// until all caps hold for the shrinking output. Deep conversations go first so
// the cap never spends the first-turn records the floor needs. Returns true if
// anything was dropped.
bool enforce_cap(std::vector<std::size_t>& alive, const std::vector<Conversation>& convs, double cap,
                 const StratumKey& key, Rng& rng, const std::string& name) {
  bool changed = false;
  for (;;) {
    const std::size_t m = alive.size();
    if (m == 0) throw InfeasibleConstraint(name, "no records left after enforcing the cap");
    const std::size_t limit = share_cap(cap, m);
    std::map<std::string, std::vector<std::size_t>> strata;
    for (std::size_t i : alive) strata[key(convs[i])].push_back(i);
    std::set<std::size_t> drop;
    for (auto& [k, members] : strata) {
      if (members.size() <= limit) continue;
      rng.shuffle(members);
      std::stable_partition(members.begin(), members.end(), [&](std::size_t i) { return convs[i].is_first_turn(); });
      drop.insert(members.begin() + static_cast<std::ptrdiff_t>(limit), members.end());
    }
    if (drop.empty()) return changed;
    std::erase_if(alive, [&](std::size_t i) { return drop.count(i) > 0; });
    changed = true;
  }
}

}  // namespace

void validate(const CurationConfig& c) {
  if (!(c.retain_proportion > 0.0 && c.retain_proportion <= 1.0)) {
    throw InvalidArgument("retain_proportion must be in (0, 1]");
  }
  if (!(c.dedup_radius >= 0.0)) throw InvalidArgument("dedup_radius must be >= 0");
  if (!in_unit(c.min_first_turn_ratio)) throw InvalidArgument("min_first_turn_ratio must be in [0, 1]");
  if (!in_unit(c.per_character_cap)) throw InvalidArgument("per_character_cap must be in [0, 1]");
  for (const auto& [tag, cap] : c.tag_caps) {
    if (!in_unit(cap)) throw InvalidArgument("tag cap for " + tag + " must be in [0, 1]");
  }
  if (c.pair_max_length_diff < 0 || c.pair_max_emoji_diff < 0 || c.lint_emoji_cap < 0) {
    throw InvalidArgument("pair limits and lint_emoji_cap must be nonnegative");
  }
}

std::size_t share_cap(double cap, std::size_t m) {
  // Ceil rounding; the epsilon keeps 0.03 * 100 from rounding up to 4.
  return static_cast<std::size_t>(std::ceil(cap * static_cast<double>(m) - 1e-9));
}

std::vector<Conversation> filter_phase1(const std::vector<Conversation>& traffic, const CurationConfig& config,
                                        Index dim) {
  std::vector<Conversation> out;
  for (const Conversation& conv : traffic) {
    if (!is_valid(conv, dim)) continue;
    const bool blocked = std::any_of(conv.turns.begin(), conv.turns.end(), [&](const Turn& t) {
      return contains_blocked(t.response.surface, config.blocked_terms);
    });
    if (!blocked) out.push_back(conv);
  }
  return out;
}

Vector prune_embedding(const Encoder& encoder, const Conversation& conversation) {
  return encoder.context_features(conversation.prompt_context());
}

std::vector<std::size_t> diversity_prune_indices(const std::vector<Vector>& embeddings, double p, double radius,
                                                 std::uint64_t seed) {
  if (!(p > 0.0 && p <= 1.0)) throw InvalidArgument("retain proportion must be in (0, 1]");
  const std::size_t n = embeddings.size();
  const auto target = std::min(n, static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {fnv1a("diversity-prune")}));
  rng.shuffle(order);

  std::vector<std::size_t> kept;
  std::vector<std::size_t> excluded;
  auto distance_to_kept = [&](std::size_t i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k : kept) best = std::min(best, (embeddings[i] - embeddings[k]).norm());
    return best;
  };
  for (std::size_t i : order) {
    if (kept.size() >= target) break;
    if (distance_to_kept(i) >= radius) {
      kept.push_back(i);
    } else {
      excluded.push_back(i);
    }
  }
  if (kept.size() < target) {
    // The pass ran to the end, so every unkept item is in excluded.
    std::vector<std::pair<double, std::size_t>> fill;
    for (std::size_t rank = 0; rank < excluded.size(); ++rank) {
      fill.emplace_back(distance_to_kept(excluded[rank]), rank);
    }
    std::stable_sort(fill.begin(), fill.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t j = 0; kept.size() < target && j < fill.size(); ++j) kept.push_back(excluded[fill[j].second]);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::vector<Conversation> diversity_prune(const std::vector<Conversation>& convs, double p, double dedup_radius,
                                          const Encoder& encoder, std::uint64_t seed) {
  std::vector<Vector> embeddings;
  embeddings.reserve(convs.size());
  for (const Conversation& c : convs) embeddings.push_back(prune_embedding(encoder, c));
  std::vector<Conversation> out;
  for (std::size_t i : diversity_prune_indices(embeddings, p, dedup_radius, seed)) out.push_back(convs[i]);
  return out;
}

std::vector<Conversation> stratified_adjust(const std::vector<Conversation>& convs, const CurationConfig& config,
                                            std::uint64_t rng_seed) {
  validate(config);
  if (convs.empty()) return {};
  Rng rng(derive_seed(rng_seed, {fnv1a("stratified-adjust")}));
  std::vector<std::size_t> alive(convs.size());
  std::iota(alive.begin(), alive.end(), std::size_t{0});

  const StratumKey by_character = [](const Conversation& c) { return c.character.id; };
  for (bool changed = true; changed;) {
    changed = enforce_cap(alive, convs, config.per_character_cap, by_character, rng, "per_character_cap");
    for (const auto& [tag, cap] : config.tag_caps) {
      const StratumKey by_tag = [tag = tag](const Conversation& c) {
        auto it = c.character.tags.find(tag);
        return it == c.character.tags.end() ? std::string() : it->second;
      };
      changed |= enforce_cap(alive, convs, cap, by_tag, rng, "tag_cap:" + tag);
    }

    std::vector<std::size_t> first;
    std::vector<std::size_t> deep;
    for (std::size_t i : alive) (convs[i].is_first_turn() ? first : deep).push_back(i);
    const double r = config.min_first_turn_ratio;
    if (static_cast<double>(first.size()) >= r * static_cast<double>(alive.size()) - 1e-9) continue;
    if (first.empty()) {
      throw InfeasibleConstraint("min_first_turn_ratio", "no first-turn conversations remain");
    }
    const auto allowed = static_cast<std::size_t>(std::floor(static_cast<double>(first.size()) / r + 1e-9));
    const std::size_t keep_deep = allowed - first.size();
    rng.shuffle(deep);
    const std::set<std::size_t> drop(deep.begin() + static_cast<std::ptrdiff_t>(keep_deep), deep.end());
    std::erase_if(alive, [&](std::size_t i) { return drop.count(i) > 0; });
    changed = true;
  }

  std::vector<Conversation> out;
  out.reserve(alive.size());
  for (std::size_t i : alive) out.push_back(convs[i]);
  return out;
}

bool keep_pair(const PreferencePair& pair, const CurationConfig& config) {
  const double dl = std::abs(pair.y0.token_length() - pair.y1.token_length());
  const double de = std::abs(pair.y0.emoji_count() - pair.y1.emoji_count());
  return dl <= config.pair_max_length_diff && de <= config.pair_max_emoji_diff;
}

std::vector<PreferencePair> filter_pairs(const std::vector<PreferencePair>& pairs, const CurationConfig& config) {
  std::vector<PreferencePair> out;
  std::copy_if(pairs.begin(), pairs.end(), std::back_inserter(out),
               [&](const PreferencePair& p) { return keep_pair(p, config); });
  return out;
}

std::vector<Conversation> lint_prompts(const std::vector<Conversation>& convs, const CurationConfig& config) {
  std::vector<Conversation> out = convs;
  const auto cap = static_cast<double>(config.lint_emoji_cap);
  for (Conversation& conv : out) {
    const std::size_t n = conv.model_turn_count();
    if (n == 0) continue;
    const std::size_t end = conv.model_turn_position(n - 1);
    for (std::size_t i = 0; i < end; ++i) {
      Response& r = conv.turns[i].response;
      r.text_features[slot::kTemplatedPhrase] = 0.0;
      r.text_features[slot::kEmojiCount] = std::min(r.text_features[slot::kEmojiCount], cap);
      if (r.surface) strip_phrases(*r.surface, config.flagged_phrases);
    }
  }
  return out;
}

ConstraintCheck check_constraints(const std::vector<Conversation>& convs, const CurationConfig& config) {
  ConstraintCheck check;
  const std::size_t m = convs.size();
  if (m == 0) return check;
  std::map<std::string, std::size_t> counts;
  std::size_t first = 0;
  for (const Conversation& c : convs) {
    ++counts[c.character.id];
    if (c.is_first_turn()) ++first;
  }
  const auto dm = static_cast<double>(m);
  check.first_turn_ratio = static_cast<double>(first) / dm;
  check.first_turn_ok = static_cast<double>(first) >= config.min_first_turn_ratio * dm - 1e-9;
  check.character_cap_ok = true;
  const std::size_t limit = share_cap(config.per_character_cap, m);
  for (const auto& [id, count] : counts) {
    const double share = static_cast<double>(count) / dm;
    check.character_shares[id] = share;
    check.max_character_share = std::max(check.max_character_share, share);
    if (count > limit) check.character_cap_ok = false;
  }
  return check;
}

CurationResult curate(const std::vector<Conversation>& traffic, const CurationConfig& config,
                      const Encoder& encoder) {
  validate(config);
  CurationResult result;
  auto phase1 = filter_phase1(traffic, config, encoder.dim());
  auto phase2 = diversity_prune(phase1, config.retain_proportion, config.dedup_radius, encoder, config.seed);
  auto phase3 = stratified_adjust(phase2, config, config.seed);
  result.conversations = lint_prompts(phase3, config);

  const ConstraintCheck check = check_constraints(result.conversations, config);
  result.report = Json{{"counts",
                        {{"input", traffic.size()},
                         {"phase1", phase1.size()},
                         {"phase2", phase2.size()},
                         {"phase3", phase3.size()}}},
                       {"constraints",
                        {{"first_turn_ratio", check.first_turn_ratio},
                         {"first_turn_ok", check.first_turn_ok},
                         {"max_character_share", check.max_character_share},
                         {"character_cap_ok", check.character_cap_ok}}},
                       {"character_shares", check.character_shares}};
  return result;
}

}  // namespace flywheel
