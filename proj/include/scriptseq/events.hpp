#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace scriptseq {

using Argument = std::optional<std::string>;

// A predicate with subject, object and indirect-object arguments. An absent
// argument is std::nullopt, never an empty string.
struct Event {
  Argument subject;
  std::string predicate;
  Argument object;
  Argument indirect_object;

  friend bool operator==(const Event&, const Event&) = default;
};

// Throws EmptyPredicate for an empty or whitespace-only predicate. Empty
// argument strings are normalized to nullopt.
Event make_event(Argument subject, std::string predicate, Argument object,
                 Argument indirect_object);

struct Script {
  std::vector<Event> events;
  std::string protagonist;

  friend bool operator==(const Script&, const Script&) = default;
};

struct MCNCInstance {
  Script script;
  std::vector<Event> candidates;
  int answer_index = 0;

  const Event& answer() const { return candidates.at(answer_index); }
  friend bool operator==(const MCNCInstance&, const MCNCInstance&) = default;
};

struct DatasetMeta {
  int m = 5;
  int script_len = 8;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<MCNCInstance> instances;
};

// Most frequent subject across the events, first appearance breaking ties.
std::string infer_protagonist(const std::vector<Event>& events);

nlohmann::json event_to_json(const Event& event);
Event event_from_json(const nlohmann::json& j);

// Line-delimited JSON: one header record, then one instance per line.
void write_instances(const std::filesystem::path& path, const Dataset& dataset);
std::string serialize_instances(const Dataset& dataset);
Dataset read_instances(const std::filesystem::path& path);

}  // namespace scriptseq
