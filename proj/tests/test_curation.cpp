#include "flywheel/curation.hpp"
#include "flywheel/world.hpp"
#include "oracles/oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace flywheel;
using testsupport::random_response;

namespace {

constexpr Index kDim = 16;

Character character(const std::string& id) {
  Character c;
  c.id = id;
  c.name = id;
  return c;
}

// A conversation with `model_turns` exchanges; the embedding is pinned by `sys`.
Conversation make_conv(const std::string& id, const Character& ch, int model_turns, Rng& rng,
                       std::optional<Vector> sys = std::nullopt) {
  Conversation c;
  c.id = id;
  c.character = ch;
  c.system_prompt_features = sys ? *sys : testsupport::random_vector(rng, kDim, 0.5);
  for (int t = 0; t < model_turns; ++t) {
    Turn u{Role::user, random_response(rng, kDim, id + "u" + std::to_string(t)), std::nullopt};
    u.response.surface = "<user>";
    c.turns.push_back(u);
    Turn m{Role::model, random_response(rng, kDim, id + "m" + std::to_string(t)), SignalRecord{}};
    m.response.surface = render_surface(m.response.text_features);
    c.turns.push_back(m);
  }
  return c;
}

std::vector<std::string> ids(const std::vector<Conversation>& cs) {
  std::vector<std::string> out;
  for (const auto& c : cs) out.push_back(c.id);
  return out;
}

}  // namespace

TEST(Phase1, IdentityWithoutBlockedTerms) {
  Rng rng(1);
  std::vector<Conversation> traffic;
  for (int i = 0; i < 30; ++i) traffic.push_back(make_conv("c" + std::to_string(i), character("a"), 2, rng));
  CurationConfig cfg;
  cfg.blocked_terms.clear();
  EXPECT_EQ(ids(filter_phase1(traffic, cfg, kDim)), ids(traffic));
}

TEST(Phase1, RemovesOneBlocked) {
  Rng rng(2);
  std::vector<Conversation> traffic;
  for (int i = 0; i < 10; ++i) traffic.push_back(make_conv("c" + std::to_string(i), character("a"), 2, rng));
  traffic[4].turns[0].response.surface = "call me at 555-0100";
  const auto out = filter_phase1(traffic, CurationConfig{}, kDim);
  EXPECT_EQ(out.size(), 9u);
  for (const auto& c : out) EXPECT_NE(c.id, "c4");
}

TEST(Phase1, SeededViolationsExactlyRemoved) {
  Rng rng(3);
  CurationConfig cfg;
  std::vector<Conversation> traffic;
  std::set<std::string> seeded;
  for (int i = 0; i < 1000; ++i) {
    Conversation c = make_conv("c" + std::to_string(i), character("a"), 1 + static_cast<int>(rng.index(3)), rng);
    const double u = rng.uniform();
    if (u < 0.10) {
      const std::size_t turn = rng.index(c.turns.size());
      c.turns[turn].response.surface = *c.turns[turn].response.surface + " my " + cfg.blocked_terms[rng.index(2)];
      seeded.insert(c.id);
    } else if (u < 0.12) {
      // Invalid record: out-of-range sentiment counts as a violation too.
      c.turns.back().response.text_features[slot::kSentiment] = 2.0;
      seeded.insert(c.id);
    }
    traffic.push_back(std::move(c));
  }
  std::vector<std::string> expected;
  for (const auto& c : traffic)
    if (!seeded.count(c.id)) expected.push_back(c.id);
  EXPECT_EQ(ids(filter_phase1(traffic, cfg, kDim)), expected);
}

TEST(DiversityPrune, IdenticalEmbeddings) {
  std::vector<Vector> e(21, Vector::Ones(4));
  const auto kept = diversity_prune_indices(e, 0.5, 0.1, 7);
  EXPECT_EQ(kept.size(), 11u);
  EXPECT_TRUE(std::is_sorted(kept.begin(), kept.end()));
  EXPECT_EQ(std::set<std::size_t>(kept.begin(), kept.end()).size(), kept.size());
}

TEST(DiversityPrune, ZeroRadiusKeepsShuffledPrefix) {
  Rng rng(4);
  std::vector<Vector> e;
  for (int i = 0; i < 40; ++i) e.push_back(testsupport::random_vector(rng, 3));
  const auto kept = diversity_prune_indices(e, 0.3, 0.0, 11);
  std::vector<std::size_t> order(40);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(derive_seed(11, {fnv1a("diversity-prune")}));
  shuffle.shuffle(order);
  std::vector<std::size_t> prefix(order.begin(), order.begin() + 12);
  std::sort(prefix.begin(), prefix.end());
  EXPECT_EQ(kept, prefix);
}

TEST(DiversityPrune, TwoClustersBothRepresented) {
  Rng rng(5);
  std::vector<Vector> e;
  for (int i = 0; i < 20; ++i) {
    Vector v = testsupport::random_vector(rng, 3, 0.05);
    if (i % 2) v[0] += 10;
    e.push_back(v);
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto kept = diversity_prune_indices(e, 0.5, 1.0, seed);
    ASSERT_EQ(kept.size(), 10u);
    bool left = false, right = false;
    for (auto i : kept) (i % 2 ? right : left) = true;
    EXPECT_TRUE(left && right);
    // Radius feasibility: the first kept member of each cluster is unique within radius.
    int far_pairs = 0;
    for (std::size_t a = 0; a < kept.size(); ++a)
      for (std::size_t b = a + 1; b < kept.size(); ++b)
        if ((e[kept[a]] - e[kept[b]]).norm() >= 1.0) ++far_pairs;
    EXPECT_GT(far_pairs, 0);
  }
}

TEST(DiversityPrune, RadiusFeasibleWhenEnoughSpread) {
  Rng rng(6);
  std::vector<Vector> e;
  for (int i = 0; i < 60; ++i) e.push_back(testsupport::random_vector(rng, 4, 5.0));
  const double radius = 0.5;
  const auto kept = diversity_prune_indices(e, 0.25, radius, 3);
  ASSERT_EQ(kept.size(), 15u);
  for (std::size_t a = 0; a < kept.size(); ++a)
    for (std::size_t b = a + 1; b < kept.size(); ++b) EXPECT_GE((e[kept[a]] - e[kept[b]]).norm(), radius);
}

TEST(DiversityPrune, OutputSize) {
  Rng rng(7);
  std::vector<Vector> e;
  for (int n = 1; n < 50; n += 7) {
    e.assign(static_cast<std::size_t>(n), Vector::Zero(2));
    for (auto& v : e) v = testsupport::random_vector(rng, 2);
    for (double p : {0.1, 0.25, 0.5, 1.0}) {
      const auto kept = diversity_prune_indices(e, p, 0.3, 1);
      EXPECT_EQ(kept.size(), std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(p * n - 1e-9))));
    }
  }
  EXPECT_THROW(diversity_prune_indices(e, 0.0, 0.3, 1), InvalidArgument);
}

TEST(StratifiedAdjust, FirstTurnFloor) {
  Rng rng(8);
  std::vector<Conversation> convs;
  for (int i = 0; i < 100; ++i) {
    convs.push_back(make_conv("c" + std::to_string(i), character("ch" + std::to_string(i)), i < 5 ? 1 : 3, rng));
  }
  CurationConfig cfg;
  cfg.per_character_cap = 1.0;
  const auto out = stratified_adjust(convs, cfg, 1);
  EXPECT_LE(out.size(), 50u);
  const auto check = check_constraints(out, cfg);
  EXPECT_TRUE(check.first_turn_ok);
  std::size_t first = 0;
  for (const auto& c : out) first += c.is_first_turn();
  EXPECT_EQ(first, 5u);
}

TEST(StratifiedAdjust, CharacterCap) {
  Rng rng(9);
  std::vector<Conversation> convs;
  for (int i = 0; i < 100; ++i) {
    const std::string ch = i < 10 ? "popular" : "ch" + std::to_string(i);
    convs.push_back(make_conv("c" + std::to_string(i), character(ch), 1 + (i % 3), rng));
  }
  CurationConfig cfg;
  cfg.min_first_turn_ratio = 0.0;
  const auto out = stratified_adjust(convs, cfg, 2);
  std::size_t popular = 0;
  for (const auto& c : out) popular += c.character.id == "popular";
  EXPECT_LE(popular, 3u);
  EXPECT_LE(popular, share_cap(0.03, out.size()));
  EXPECT_EQ(share_cap(0.03, 100), 3u);
  EXPECT_EQ(share_cap(0.03, 101), 4u);
}

TEST(StratifiedAdjust, SatisfiedInputUnchanged) {
  Rng rng(10);
  std::vector<Conversation> convs;
  for (int i = 0; i < 50; ++i) convs.push_back(make_conv("c" + std::to_string(i), character("ch" + std::to_string(i)), 1 + i % 2, rng));
  EXPECT_EQ(ids(stratified_adjust(convs, CurationConfig{}, 3)), ids(convs));
}

TEST(StratifiedAdjust, InfeasibleNamesConstraint) {
  Rng rng(11);
  std::vector<Conversation> convs;
  for (int i = 0; i < 20; ++i) convs.push_back(make_conv("c" + std::to_string(i), character("ch" + std::to_string(i)), 3, rng));
  CurationConfig cfg;
  try {
    stratified_adjust(convs, cfg, 1);
    FAIL() << "expected infeasibility";
  } catch (const InfeasibleConstraint& e) {
    EXPECT_EQ(e.constraint(), "min_first_turn_ratio");
  }
}

TEST(StratifiedAdjust, TagCap) {
  Rng rng(12);
  std::vector<Conversation> convs;
  for (int i = 0; i < 60; ++i) {
    Character ch = character("ch" + std::to_string(i));
    ch.tags["locale"] = i < 40 ? "en" : (i < 50 ? "fr" : "de");
    convs.push_back(make_conv("c" + std::to_string(i), ch, 1, rng));
  }
  CurationConfig cfg;
  cfg.tag_caps["locale"] = 0.4;
  const auto out = stratified_adjust(convs, cfg, 4);
  std::map<std::string, std::size_t> counts;
  for (const auto& c : out) ++counts[c.character.tags.at("locale")];
  for (const auto& [k, v] : counts) EXPECT_LE(v, share_cap(0.4, out.size())) << k;
}

TEST(StratifiedAdjust, OutputIsSubset) {
  Rng rng(13);
  std::vector<Conversation> convs;
  for (int i = 0; i < 200; ++i) {
    convs.push_back(make_conv("c" + std::to_string(i), character("ch" + std::to_string(rng.index(25))),
                              1 + static_cast<int>(rng.index(4)), rng));
  }
  CurationConfig cfg;
  cfg.per_character_cap = 0.06;
  const auto out = stratified_adjust(convs, cfg, 5);
  const auto in_ids = ids(convs);
  const std::set<std::string> all(in_ids.begin(), in_ids.end());
  std::set<std::string> seen;
  for (const auto& c : out) {
    EXPECT_TRUE(all.count(c.id));
    EXPECT_TRUE(seen.insert(c.id).second);
  }
  EXPECT_TRUE(check_constraints(out, cfg).character_cap_ok);
}

TEST(FilterPairs, Examples) {
  Rng rng(14);
  PreferencePair p;
  p.y0 = random_response(rng, kDim, "a");
  p.y1 = p.y0;
  CurationConfig cfg;
  cfg.pair_max_length_diff = 50;
  EXPECT_TRUE(keep_pair(p, cfg));
  p.y1.text_features[slot::kTokenLength] = p.y0.text_features[slot::kTokenLength] + 200;
  EXPECT_FALSE(keep_pair(p, cfg));
}

TEST(FilterPairs, MatchesPredicateOracle) {
  Rng rng(15);
  CurationConfig cfg;
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 1000; ++i) {
    PreferencePair p;
    p.id = "p" + std::to_string(i);
    p.y0 = random_response(rng, kDim, "a");
    p.y1 = random_response(rng, kDim, "b");
    pairs.push_back(std::move(p));
  }
  std::vector<std::string> expected;
  for (const auto& p : pairs)
    if (oracle::pair_ok(p, cfg.pair_max_length_diff, cfg.pair_max_emoji_diff)) expected.push_back(p.id);
  std::vector<std::string> got;
  for (const auto& p : filter_pairs(pairs, cfg)) got.push_back(p.id);
  EXPECT_EQ(got, expected);
  EXPECT_GT(expected.size(), 100u);
  EXPECT_LT(expected.size(), 900u);
}

TEST(Lint, TemplatedAndEmoji) {
  Rng rng(16);
  Conversation c = make_conv("c", character("a"), 3, rng);
  c.turns[1].response.text_features[slot::kTemplatedPhrase] = 1;
  c.turns[1].response.text_features[slot::kEmojiCount] = 9;
  c.turns[1].response.surface = "I feel like <10 tokens>";
  const auto out = lint_prompts({c});
  EXPECT_EQ(out[0].turns[1].response.text_features[slot::kTemplatedPhrase], 0.0);
  EXPECT_EQ(out[0].turns[1].response.text_features[slot::kEmojiCount], 3.0);
  EXPECT_EQ(*out[0].turns[1].response.surface, "<10 tokens>");
}

TEST(Lint, CleanHistoryUnchanged) {
  Rng rng(17);
  Conversation c = make_conv("c", character("a"), 3, rng);
  for (auto& t : c.turns) {
    t.response.text_features[slot::kTemplatedPhrase] = 0;
    t.response.text_features[slot::kEmojiCount] = std::min(t.response.text_features[slot::kEmojiCount], 3.0);
    t.response.surface = "<clean>";
  }
  const auto out = lint_prompts({c});
  EXPECT_EQ(Json(out[0]).dump(), Json(c).dump());
}

TEST(Curate, IdempotentAtFullRetention) {
  const World world = World::from_seed(3);
  UniformPolicy uniform;
  Rng rng(18);
  std::vector<Conversation> traffic;
  for (int i = 0; i < 300; ++i) {
    traffic.push_back(world.simulate_session(world.characters()[rng.index(40)], uniform, 4, i, "s" + std::to_string(i)));
  }
  CurationConfig cfg;
  cfg.retain_proportion = 1.0;
  cfg.per_character_cap = 0.05;
  const CurationResult once = curate(traffic, cfg, world.encoder());
  const CurationResult twice = curate(once.conversations, cfg, world.encoder());
  EXPECT_EQ(ids(once.conversations), ids(twice.conversations));
  EXPECT_TRUE(once.report["constraints"]["first_turn_ok"].get<bool>());
  EXPECT_TRUE(once.report["constraints"]["character_cap_ok"].get<bool>());
}

TEST(Curate, ConfigValidation) {
  CurationConfig cfg;
  cfg.retain_proportion = 0;
  EXPECT_THROW(validate(cfg), InvalidArgument);
  cfg = {};
  cfg.per_character_cap = 1.5;
  EXPECT_THROW(validate(cfg), InvalidArgument);
}
