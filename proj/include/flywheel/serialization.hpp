#pragma once

#include "flywheel/core.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace flywheel {

using Json = nlohmann::json;

Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j);

void to_json(Json& j, const Character& c);
void from_json(const Json& j, Character& c);
void to_json(Json& j, const Response& r);
void from_json(const Json& j, Response& r);
void to_json(Json& j, const SignalRecord& s);
void from_json(const Json& j, SignalRecord& s);
void to_json(Json& j, const Turn& t);
void from_json(const Json& j, Turn& t);
void to_json(Json& j, const Context& c);
void from_json(const Json& j, Context& c);
void to_json(Json& j, const Conversation& c);
void from_json(const Json& j, Conversation& c);
void to_json(Json& j, const PreferenceLabel& l);
void from_json(const Json& j, PreferenceLabel& l);
void to_json(Json& j, const PreferencePair& p);
void from_json(const Json& j, PreferencePair& p);

std::string to_string(PairSource source);
PairSource pair_source_from_string(const std::string& text);

class SerializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes one compact JSON document per line.
template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& records);

template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path);

void write_json_file(const std::filesystem::path& path, const Json& doc);
Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Appends one JSON line to an open log.
void append_jsonl(const std::filesystem::path& path, const Json& record);

}  // namespace flywheel
