#include "flywheel/config.hpp"

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <variant>

namespace flywheel {
namespace {

using FieldRef = std::variant<int*, double*, std::uint64_t*, Index*, std::vector<std::string>*>;

struct Field {
  const char* section;
  const char* key;
  FieldRef ref;
  const char* doc;
};

// The single source of truth for the config schema: parse and emit both walk it.
std::vector<Field> fields(CycleConfig& c) {
  return {
      {"campaign", "n_cycles", &c.n_cycles, "number of flywheel cycles"},
      {"campaign", "traffic_per_cycle", &c.traffic_per_cycle, "user sessions simulated per cycle"},
      {"campaign", "internal_sessions", &c.internal_sessions, "internal (interactive) sessions per cycle"},
      {"campaign", "max_session_turns", &c.max_session_turns, "turn cap for collected traffic"},
      {"campaign", "seed", &c.seed, "campaign seed"},
      {"campaign", "world_seed", &c.world_seed, "world seed (used when no world.json is present)"},
      {"campaign", "dim", &c.dim, "feature dimension"},
      {"campaign", "signal_weight", &c.signal_weight, "signal-model weight in the rejection-sampling ranker"},
      {"campaign", "eval_samples_per_prompt", &c.eval_samples_per_prompt, "responses per prompt for RM win rates"},
      {"campaign", "true_engagement_prompts", &c.true_engagement_prompts, "size of the diagnostic oracle prompt set"},
      {"campaign", "non_inferiority_margin", &c.non_inferiority_margin, "breadth CI lower bound needed to promote (%)"},
      {"campaign", "off_policy_lag", &c.off_policy_lag, "versions back for off-policy RL prompts"},
      {"campaign", "failure_cycle", &c.failure_cycle, "1-based cycle with scripted failure, 0 for none"},
      {"campaign", "failure_slice_fraction", &c.failure_slice_fraction, "share of pairs the failing RM sees"},

      {"curation", "retain_proportion", &c.curation.retain_proportion, "Phase II retained share"},
      {"curation", "dedup_radius", &c.curation.dedup_radius, "Phase II radius in normalized space"},
      {"curation", "min_first_turn_ratio", &c.curation.min_first_turn_ratio, "Phase III first-turn floor"},
      {"curation", "per_character_cap", &c.curation.per_character_cap, "Phase III per-character share cap"},
      {"curation", "pair_max_length_diff", &c.curation.pair_max_length_diff, "pair filter: token length gap"},
      {"curation", "pair_max_emoji_diff", &c.curation.pair_max_emoji_diff, "pair filter: emoji gap"},
      {"curation", "lint_emoji_cap", &c.curation.lint_emoji_cap, "linter cap on history emoji counts"},
      {"curation", "blocked_terms", &c.curation.blocked_terms, "Phase I surface blocklist"},
      {"curation", "flagged_phrases", &c.curation.flagged_phrases, "phrases the linter strips from history"},

      {"rm_train", "learning_rate", &c.rm_train.learning_rate, ""},
      {"rm_train", "epochs", &c.rm_train.epochs, ""},
      {"rm_train", "l2", &c.rm_train.l2, ""},
      {"rm_train", "batch_size", &c.rm_train.batch_size, "0 for full batch"},
      {"rm_train", "seed", &c.rm_train.seed, ""},

      {"rjs", "k", &c.rjs.k, "draws per prompt"},
      {"rjs", "tau", &c.rjs.tau, "acceptance threshold on the best reward"},
      {"rjs", "probe_samples", &c.rjs.probe_samples, "routing probe size"},

      {"sft", "learning_rate", &c.sft.learning_rate, ""},
      {"sft", "steps", &c.sft.steps, ""},

      {"dpo", "beta", &c.dpo.beta, ""},
      {"dpo", "learning_rate", &c.dpo.learning_rate, ""},
      {"dpo", "steps", &c.dpo.steps, ""},

      {"rl", "group_size", &c.rl.group_size, ""},
      {"rl", "clip_epsilon", &c.rl.clip_epsilon, ""},
      {"rl", "kl_coeff", &c.rl.kl_coeff, ""},
      {"rl", "ema_decay", &c.rl.ema_decay, ""},
      {"rl", "learning_rate", &c.rl.learning_rate, "initial step before backtracking"},
      {"rl", "steps", &c.rl.steps, ""},
      {"rl", "prompts_per_step", &c.rl.prompts_per_step, "0 uses every prompt"},
      {"rl", "max_backtracks", &c.rl.max_backtracks, ""},
      {"rl", "downsample_k", &c.downsample_k, "responses per prompt for variance downsampling"},
      {"rl", "downsample_keep_fraction", &c.downsample_keep_fraction, ""},

      {"gates", "max_rm_winrate", &c.gates.max_rm_winrate, ""},
      {"gates", "warn_rm_winrate", &c.gates.warn_rm_winrate, ""},
      {"gates", "max_divergence", &c.gates.max_divergence, ""},

      {"ab", "units", &c.ab.n_units, "eligible units"},
      {"ab", "days", &c.ab.window_days, ""},
      {"ab", "traffic_fraction", &c.ab.traffic_fraction, "share of eligible units per arm"},
      {"ab", "z", &c.ab.z, ""},
      {"ab", "max_turns", &c.ab.max_turns, "0 uses the world default"},
  };
}

std::string format_double(double x) {
  // Shortest text that parses back to the same double.
  char buf[40];
  const auto end = std::to_chars(buf, buf + sizeof buf, x).ptr;
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

template <typename T>
T integer_value(const toml::node& node, const std::string& where) {
  auto v = node.value_exact<std::int64_t>();
  if (!v) throw ConfigError(where + " must be an integer");
  if constexpr (std::is_unsigned_v<T>) {
    if (*v < 0) throw ConfigError(where + " must be nonnegative");
  }
  return static_cast<T>(*v);
}

}  // namespace

CycleConfig default_cycle_config() { return CycleConfig{}; }

void validate(const CycleConfig& c) {
  if (c.n_cycles < 1) throw ConfigError("campaign.n_cycles must be >= 1");
  if (c.traffic_per_cycle < 10) throw ConfigError("campaign.traffic_per_cycle must be >= 10");
  if (c.internal_sessions < 10) throw ConfigError("campaign.internal_sessions must be >= 10");
  if (c.max_session_turns < 1) throw ConfigError("campaign.max_session_turns must be >= 1");
  if (c.dim < kMinDim) throw ConfigError("campaign.dim must be >= " + std::to_string(kMinDim));
  if (c.eval_samples_per_prompt < 1) throw ConfigError("campaign.eval_samples_per_prompt must be >= 1");
  if (c.true_engagement_prompts < 1) throw ConfigError("campaign.true_engagement_prompts must be >= 1");
  if (c.off_policy_lag < 1) throw ConfigError("campaign.off_policy_lag must be >= 1");
  if (!(c.failure_slice_fraction > 0.0 && c.failure_slice_fraction <= 1.0)) {
    throw ConfigError("campaign.failure_slice_fraction must be in (0, 1]");
  }
  if (c.downsample_k < 2) throw ConfigError("rl.downsample_k must be >= 2");
  try {
    validate(c.curation);
    validate(c.rl);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(c.rm_train.learning_rate > 0.0)) throw ConfigError("rm_train.learning_rate must be positive");
  if (c.rjs.k < 1 || c.rjs.probe_samples < 1) throw ConfigError("rjs.k and rjs.probe_samples must be >= 1");
  if (c.ab.n_units < 2 || c.ab.window_days < 1) throw ConfigError("ab.units must be >= 2 and ab.days >= 1");
}

CycleConfig parse_config(const std::string& toml_text) {
  toml::table doc;
  try {
    doc = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config parse error: " << e.description() << " at line " << e.source().begin.line;
    throw ConfigError(msg.str());
  }

  CycleConfig c = default_cycle_config();
  auto schema = fields(c);
  for (const auto& [section_key, section_node] : doc) {
    const std::string section(section_key.str());
    const toml::table* table = section_node.as_table();
    if (!table) throw ConfigError("top-level key " + section + " must be a table");
    for (const auto& [key, node] : *table) {
      const std::string where = section + "." + std::string(key.str());
      if (section == "campaign" && key.str() == "prompt_source") {
        auto v = node.value_exact<std::string>();
        if (v == "near_policy") {
          c.prompt_source = PromptSource::near_policy;
        } else if (v == "off_policy") {
          c.prompt_source = PromptSource::off_policy;
        } else {
          throw ConfigError(where + " must be \"near_policy\" or \"off_policy\"");
        }
        continue;
      }
      auto it = std::find_if(schema.begin(), schema.end(),
                             [&](const Field& f) { return section == f.section && key.str() == f.key; });
      if (it == schema.end()) throw ConfigError("unknown config key " + where);
      std::visit(
          [&](auto* target) {
            using T = std::remove_pointer_t<decltype(target)>;
            if constexpr (std::is_same_v<T, double>) {
              auto v = node.value<double>();
              if (!v || !(node.is_floating_point() || node.is_integer())) throw ConfigError(where + " must be a number");
              *target = *v;
            } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
              const toml::array* arr = node.as_array();
              if (!arr) throw ConfigError(where + " must be an array of strings");
              target->clear();
              for (const toml::node& el : *arr) {
                auto s = el.value_exact<std::string>();
                if (!s) throw ConfigError(where + " must be an array of strings");
                target->push_back(*s);
              }
            } else {
              *target = integer_value<T>(node, where);
            }
          },
          it->ref);
    }
  }
  validate(c);
  return c;
}

CycleConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string to_toml(const CycleConfig& config) {
  CycleConfig c = config;
  std::string out = "# flywheel campaign configuration\n";
  std::string section;
  for (const Field& f : fields(c)) {
    if (section != f.section) {
      section = f.section;
      out += "\n[" + section + "]\n";
      if (section == "campaign") {
        out += std::string("prompt_source = ") + quote(to_string(c.prompt_source)) +
               "  # near_policy or off_policy\n";
      }
    }
    std::string value = std::visit(
        [](auto* v) -> std::string {
          using T = std::remove_pointer_t<decltype(v)>;
          if constexpr (std::is_same_v<T, double>) {
            return format_double(*v);
          } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            std::string s = "[";
            for (std::size_t i = 0; i < v->size(); ++i) s += (i ? ", " : "") + quote((*v)[i]);
            return s + "]";
          } else {
            return std::to_string(*v);
          }
        },
        f.ref);
    out += std::string(f.key) + " = " + value;
    if (*f.doc) out += std::string("  # ") + f.doc;
    out += "\n";
  }
  return out;
}

}  // namespace flywheel
