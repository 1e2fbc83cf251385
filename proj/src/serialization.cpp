#include "flywheel/serialization.hpp"

#include <fstream>

namespace flywheel {

Json vector_to_json(const Vector& v) {
  Json arr = Json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw SerializationError("expected a numeric array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Index>(i)] = j[i].get<double>();
  return v;
}

void to_json(Json& j, const Character& c) {
  j = Json{{"id", c.id},
           {"name", c.name},
           {"instruction_features", vector_to_json(c.instruction_features)},
           {"tags", c.tags}};
}

void from_json(const Json& j, Character& c) {
  c.id = j.at("id").get<std::string>();
  c.name = j.value("name", std::string{});
  const Vector f = vector_from_json(j.at("instruction_features"));
  if (f.size() != 3) throw SerializationError("instruction_features must have 3 entries");
  c.instruction_features = f;
  c.tags = j.value("tags", std::map<std::string, std::string>{});
}

void to_json(Json& j, const Response& r) {
  j = Json{{"id", r.id}, {"text_features", vector_to_json(r.text_features)}};
  if (r.surface) j["surface"] = *r.surface;
}

void from_json(const Json& j, Response& r) {
  r.id = j.at("id").get<std::string>();
  r.text_features = vector_from_json(j.at("text_features"));
  if (j.contains("surface") && !j["surface"].is_null()) {
    r.surface = j["surface"].get<std::string>();
  } else {
    r.surface.reset();
  }
}

void to_json(Json& j, const SignalRecord& s) {
  j = Json{{"continued_within_window", s.continued_within_window},
           {"love", s.love},
           {"thumb_up", s.thumb_up},
           {"thumb_down", s.thumb_down},
           {"written_feedback", s.written_feedback}};
}

void from_json(const Json& j, SignalRecord& s) {
  s.continued_within_window = j.at("continued_within_window").get<bool>();
  s.love = j.at("love").get<bool>();
  s.thumb_up = j.at("thumb_up").get<bool>();
  s.thumb_down = j.at("thumb_down").get<bool>();
  s.written_feedback = j.at("written_feedback").get<bool>();
}

void to_json(Json& j, const Turn& t) {
  j = Json{{"role", t.role == Role::user ? "user" : "model"}, {"response", t.response}};
  if (t.signals) j["signals"] = *t.signals;
}

void from_json(const Json& j, Turn& t) {
  const auto role = j.at("role").get<std::string>();
  if (role == "user") {
    t.role = Role::user;
  } else if (role == "model") {
    t.role = Role::model;
  } else {
    throw SerializationError("unknown role '" + role + "'");
  }
  t.response = j.at("response").get<Response>();
  if (j.contains("signals") && !j["signals"].is_null()) {
    t.signals = j["signals"].get<SignalRecord>();
  } else {
    t.signals.reset();
  }
}

void to_json(Json& j, const Context& c) {
  j = Json{{"system_prompt_features", vector_to_json(c.system_prompt_features)},
           {"character", c.character},
           {"history", c.history},
           {"depth", c.depth()}};
}

void from_json(const Json& j, Context& c) {
  c.system_prompt_features = vector_from_json(j.at("system_prompt_features"));
  c.character = j.at("character").get<Character>();
  c.history = j.at("history").get<std::vector<Turn>>();
  if (j.contains("depth") && j["depth"].get<std::size_t>() != c.history.size()) {
    throw SerializationError("context depth does not match history length");
  }
}

void to_json(Json& j, const Conversation& c) {
  j = Json{{"id", c.id},
           {"character", c.character},
           {"system_prompt_features", vector_to_json(c.system_prompt_features)},
           {"turns", c.turns},
           {"candidate_sets", c.candidate_sets},
           {"policy_version", c.policy_version}};
}

void from_json(const Json& j, Conversation& c) {
  c.id = j.at("id").get<std::string>();
  c.character = j.at("character").get<Character>();
  c.system_prompt_features = vector_from_json(j.at("system_prompt_features"));
  c.turns = j.at("turns").get<std::vector<Turn>>();
  c.candidate_sets = j.value("candidate_sets", std::vector<std::vector<Response>>{});
  c.policy_version = j.value("policy_version", std::string{});
}

void to_json(Json& j, const PreferenceLabel& l) {
  j = Json{{"annotator_id", l.annotator_id}, {"t", l.t}};
}

void from_json(const Json& j, PreferenceLabel& l) {
  l.annotator_id = j.at("annotator_id").get<std::string>();
  l.t = j.at("t").get<int>();
  if (l.t != 0 && l.t != 1) throw SerializationError("label t must be 0 or 1");
}

std::string to_string(PairSource source) {
  return source == PairSource::interactive ? "interactive" : "static";
}

PairSource pair_source_from_string(const std::string& text) {
  if (text == "static") return PairSource::static_chat;
  if (text == "interactive") return PairSource::interactive;
  throw SerializationError("unknown pair source '" + text + "'");
}

void to_json(Json& j, const PreferencePair& p) {
  j = Json{{"id", p.id},
           {"context", p.context},
           {"y0", p.y0},
           {"y1", p.y1},
           {"labels", p.labels},
           {"batch_id", p.batch_id},
           {"source", to_string(p.source)}};
}

void from_json(const Json& j, PreferencePair& p) {
  p.id = j.value("id", std::string{});
  p.context = j.at("context").get<Context>();
  p.y0 = j.at("y0").get<Response>();
  p.y1 = j.at("y1").get<Response>();
  p.labels = j.at("labels").get<std::vector<PreferenceLabel>>();
  if (p.labels.empty()) throw SerializationError("preference pair needs at least one label");
  p.batch_id = j.at("batch_id").get<std::string>();
  p.source = pair_source_from_string(j.at("source").get<std::string>());
}

template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SerializationError("cannot open " + path.string() + " for writing");
  for (const T& record : records) out << Json(record).dump() << '\n';
}

template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SerializationError("cannot open " + path.string());
  std::vector<T> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(Json::parse(line).get<T>());
    } catch (const std::exception& e) {
      throw SerializationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

template void write_jsonl<Conversation>(const std::filesystem::path&, const std::vector<Conversation>&);
template void write_jsonl<PreferencePair>(const std::filesystem::path&, const std::vector<PreferencePair>&);
template void write_jsonl<Json>(const std::filesystem::path&, const std::vector<Json>&);
template std::vector<Conversation> read_jsonl<Conversation>(const std::filesystem::path&);
template std::vector<PreferencePair> read_jsonl<PreferencePair>(const std::filesystem::path&);
template std::vector<Json> read_jsonl<Json>(const std::filesystem::path&);

void write_json_file(const std::filesystem::path& path, const Json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SerializationError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const std::exception& e) {
    throw SerializationError(path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SerializationError("cannot open " + path.string() + " for writing");
  out << text;
}

void append_jsonl(const std::filesystem::path& path, const Json& record) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw SerializationError("cannot open " + path.string() + " for appending");
  out << record.dump() << '\n';
}

}  // namespace flywheel
