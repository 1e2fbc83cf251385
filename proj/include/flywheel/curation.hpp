#pragma once

#include "flywheel/core.hpp"
#include "flywheel/serialization.hpp"

#include <map>
#include <string>
#include <vector>

namespace flywheel {

struct CurationConfig {
  double retain_proportion = 0.25;
  double dedup_radius = 0.5;  // Euclidean, normalized feature space
  double min_first_turn_ratio = 0.10;
  double per_character_cap = 0.03;
  // Extra categorical share caps keyed by character tag (e.g. "locale").
  std::map<std::string, double> tag_caps;
  int pair_max_length_diff = 60;
  int pair_max_emoji_diff = 3;
  std::vector<std::string> blocked_terms{"555-0100", "home address"};
  std::vector<std::string> flagged_phrases{"I feel like "};
  int lint_emoji_cap = 3;
  std::uint64_t seed = 0;
};

void validate(const CurationConfig& config);

class InfeasibleConstraint : public std::runtime_error {
 public:
  InfeasibleConstraint(std::string constraint, const std::string& detail)
      : std::runtime_error("infeasible constraint " + constraint + ": " + detail),
        constraint_(std::move(constraint)) {}
  const std::string& constraint() const { return constraint_; }

 private:
  std::string constraint_;
};

/// Phase I: drops records with blocked terms in any surface, or failing validation.
std::vector<Conversation> filter_phase1(const std::vector<Conversation>& traffic, const CurationConfig& config,
                                        Index dim = kDefaultDim);

/// Embedding used for deduplication: the prompt context against an empty response.
Vector prune_embedding(const Encoder& encoder, const Conversation& conversation);

/// Phase II greedy radius pass. Returns kept positions in ascending input order.
std::vector<std::size_t> diversity_prune_indices(const std::vector<Vector>& embeddings, double p, double radius,
                                                 std::uint64_t seed);

std::vector<Conversation> diversity_prune(const std::vector<Conversation>& convs, double p, double dedup_radius,
                                          const Encoder& encoder, std::uint64_t seed);

/// Phase III: enforce the first-turn floor and per-stratum share caps by dropping.
std::vector<Conversation> stratified_adjust(const std::vector<Conversation>& convs, const CurationConfig& config,
                                            std::uint64_t rng_seed);

/// Largest count a stratum may hold in an output of size m.
std::size_t share_cap(double cap, std::size_t m);

bool keep_pair(const PreferencePair& pair, const CurationConfig& config);
std::vector<PreferencePair> filter_pairs(const std::vector<PreferencePair>& pairs, const CurationConfig& config);

std::vector<Conversation> lint_prompts(const std::vector<Conversation>& convs, const CurationConfig& config);
inline std::vector<Conversation> lint_prompts(const std::vector<Conversation>& convs) {
  return lint_prompts(convs, CurationConfig{});
}

struct ConstraintCheck {
  double first_turn_ratio = 0.0;
  double max_character_share = 0.0;
  bool first_turn_ok = false;
  bool character_cap_ok = false;
  std::map<std::string, double> character_shares;
};

ConstraintCheck check_constraints(const std::vector<Conversation>& convs, const CurationConfig& config);

struct CurationResult {
  std::vector<Conversation> conversations;
  Json report;
};

/// Full pipeline: Phase I, Phase II, Phase III, then the linter.
CurationResult curate(const std::vector<Conversation>& traffic, const CurationConfig& config, const Encoder& encoder);

}  // namespace flywheel
