#include "scriptseq/events.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "scriptseq/errors.hpp"

namespace scriptseq {
namespace {

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

Argument normalize(Argument arg) {
  if (arg && is_blank(*arg)) return std::nullopt;
  return arg;
}

nlohmann::json arg_to_json(const Argument& arg) {
  return arg ? nlohmann::json(*arg) : nlohmann::json(nullptr);
}

Argument arg_from_json(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string())
    throw DataError(std::string("argument '") + key + "' must be string or null");
  return it->get<std::string>();
}

}  // namespace

Event make_event(Argument subject, std::string predicate, Argument object,
                 Argument indirect_object) {
  if (is_blank(predicate)) throw EmptyPredicate();
  return Event{normalize(std::move(subject)), std::move(predicate),
               normalize(std::move(object)),
               normalize(std::move(indirect_object))};
}

std::string infer_protagonist(const std::vector<Event>& events) {
  std::map<std::string, int> counts;
  std::vector<std::string> order;
  for (const auto& e : events) {
    if (!e.subject) continue;
    if (counts[*e.subject]++ == 0) order.push_back(*e.subject);
  }
  std::string best;
  int best_count = 0;
  for (const auto& s : order) {
    if (counts[s] > best_count) {
      best = s;
      best_count = counts[s];
    }
  }
  return best;
}

nlohmann::json event_to_json(const Event& event) {
  // Keys serialize in sorted order: i, o, s, v.
  return {{"s", arg_to_json(event.subject)},
          {"v", event.predicate},
          {"o", arg_to_json(event.object)},
          {"i", arg_to_json(event.indirect_object)}};
}

Event event_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("event must be a JSON object");
  auto v = j.find("v");
  if (v == j.end() || !v->is_string())
    throw DataError("event predicate 'v' missing or not a string");
  return make_event(arg_from_json(j, "s"), v->get<std::string>(),
                    arg_from_json(j, "o"), arg_from_json(j, "i"));
}

std::string serialize_instances(const Dataset& dataset) {
  std::ostringstream out;
  nlohmann::json header = {{"meta",
                            {{"m", dataset.meta.m},
                             {"script_len", dataset.meta.script_len},
                             {"seed", dataset.meta.seed}}}};
  out << header.dump() << '\n';
  for (const auto& inst : dataset.instances) {
    nlohmann::json script = nlohmann::json::array();
    for (const auto& e : inst.script.events) script.push_back(event_to_json(e));
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& e : inst.candidates) cands.push_back(event_to_json(e));
    nlohmann::json rec = {
        {"script", script}, {"candidates", cands}, {"answer", inst.answer_index}};
    out << rec.dump() << '\n';
  }
  return out.str();
}

void write_instances(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << serialize_instances(dataset);
  if (!out) throw DataError("write to '" + path.string() + "' failed");
}

Dataset read_instances(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");

  Dataset dataset;
  bool have_header = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_blank(line)) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!rec.is_object()) throw SchemaError(lineno, "record is not an object");

    if (auto meta = rec.find("meta"); meta != rec.end()) {
      if (have_header || !dataset.instances.empty())
        throw SchemaError(lineno, "header must be the first record");
      try {
        dataset.meta.m = meta->value("m", 5);
        dataset.meta.script_len = meta->value("script_len", 8);
        dataset.meta.seed = meta->value("seed", std::uint64_t{0});
      } catch (const nlohmann::json::exception& e) {
        throw SchemaError(lineno, std::string("bad header: ") + e.what());
      }
      if (dataset.meta.m < 2) throw SchemaError(lineno, "header m must be >= 2");
      have_header = true;
      continue;
    }

    auto script = rec.find("script");
    auto cands = rec.find("candidates");
    auto answer = rec.find("answer");
    if (script == rec.end() || !script->is_array() || script->empty())
      throw SchemaError(lineno, "'script' must be a non-empty array");
    if (cands == rec.end() || !cands->is_array() || cands->empty())
      throw SchemaError(lineno, "'candidates' must be a non-empty array");
    if (answer == rec.end() || !answer->is_number_integer())
      throw SchemaError(lineno, "'answer' must be an integer");

    MCNCInstance inst;
    try {
      for (const auto& e : *script) inst.script.events.push_back(event_from_json(e));
      for (const auto& e : *cands) inst.candidates.push_back(event_from_json(e));
    } catch (const DataError& e) {
      throw SchemaError(lineno, e.what());
    }
    const long long a = answer->get<long long>();
    if (a < 0 || a >= static_cast<long long>(inst.candidates.size()))
      throw AnswerOutOfRange(lineno, a, inst.candidates.size());
    if (have_header && static_cast<int>(inst.candidates.size()) != dataset.meta.m)
      throw SchemaError(lineno, "expected " + std::to_string(dataset.meta.m) +
                                    " candidates, found " +
                                    std::to_string(inst.candidates.size()));
    inst.answer_index = static_cast<int>(a);
    inst.script.protagonist = infer_protagonist(inst.script.events);
    dataset.instances.push_back(std::move(inst));
  }
  return dataset;
}

}  // namespace scriptseq
