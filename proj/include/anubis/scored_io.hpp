#pragma once

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anubis/core_stats.hpp"
#include "anubis/error.hpp"
#include "anubis/tokenizer.hpp"

namespace anubis {

/// One text with its tokens and natural-log probabilities per model. A
/// missing score (failed request) is stored as nullopt and written as null.
struct ScoredSample {
  std::string id;
  std::string text;
  TokenSeq tokens;
  std::map<std::string, std::optional<double>> logprob;
  std::optional<std::string> provenance;
  nlohmann::json extra = nlohmann::json::object();  // unknown fields, kept verbatim

  friend bool operator==(const ScoredSample& a, const ScoredSample& b) {
    return a.id == b.id && a.text == b.text && a.tokens == b.tokens && a.logprob == b.logprob &&
           a.provenance == b.provenance && a.extra == b.extra;
  }
};

struct ScoredFile {
  std::optional<nlohmann::json> header;  // payload under "anubis_header"
  std::vector<ScoredSample> samples;
  std::vector<std::string> warnings;
};

inline constexpr const char* kHeaderKey = "anubis_header";

namespace detail {

inline nlohmann::json logprob_to_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  if (*v == kNegInf) return "-inf";
  return *v;
}

inline std::optional<double> logprob_from_json(const nlohmann::json& j, const std::string& where) {
  if (j.is_null()) return std::nullopt;
  if (j.is_number()) return j.get<double>();
  if (j.is_string() && j.get<std::string>() == "-inf") return kNegInf;
  throw Error("scored-format", where + ": logprob values must be numbers, null or \"-inf\"");
}

}  // namespace detail

inline std::string to_json_line(const ScoredSample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["text"] = s.text;
  j["tokens"] = s.tokens;
  nlohmann::ordered_json lp = nlohmann::ordered_json::object();
  for (const auto& [model, v] : s.logprob) lp[model] = detail::logprob_to_json(v);
  j["logprob"] = lp;
  j["provenance"] = s.provenance ? nlohmann::ordered_json(*s.provenance) : nlohmann::ordered_json(nullptr);
  for (const auto& [k, v] : s.extra.items()) j[k] = v;
  return j.dump();
}

inline void write_scored(std::ostream& out, const std::vector<ScoredSample>& samples,
                         const std::optional<nlohmann::json>& header = std::nullopt) {
  if (header) {
    nlohmann::json h;
    h[kHeaderKey] = *header;
    out << h.dump() << '\n';
  }
  for (const auto& s : samples) out << to_json_line(s) << '\n';
}

inline void write_scored(const std::string& path, const std::vector<ScoredSample>& samples,
                         const std::optional<nlohmann::json>& header = std::nullopt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write " + path);
  write_scored(out, samples, header);
}

inline ScoredFile read_scored(std::istream& in) {
  ScoredFile file;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  bool first_record = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error("scored-format", where + ": " + e.what());
    }
    if (!j.is_object()) throw Error("scored-format", where + ": expected a JSON object");
    if (j.contains(kHeaderKey)) {
      if (!first_record) throw Error("scored-format", where + ": header must be the first line");
      file.header = j[kHeaderKey];
      first_record = false;
      continue;
    }
    first_record = false;

    ScoredSample s;
    try {
      if (!j.contains("id") || !j["id"].is_string()) throw Error("scored-format", "missing string id");
      if (!j.contains("text") || !j["text"].is_string()) throw Error("scored-format", "missing string text");
      s.id = j["id"].get<std::string>();
      s.text = j["text"].get<std::string>();
      if (j.contains("tokens")) {
        if (!j["tokens"].is_array()) throw Error("scored-format", "tokens must be an array");
        for (const auto& t : j["tokens"]) {
          if (!t.is_number_integer()) throw Error("scored-format", "tokens must be integers");
          s.tokens.push_back(t.get<TokenId>());
        }
      }
      if (j.contains("logprob")) {
        if (!j["logprob"].is_object()) throw Error("scored-format", "logprob must be an object");
        for (const auto& [model, v] : j["logprob"].items()) {
          auto lp = detail::logprob_from_json(v, where);
          if (lp && *lp > 0.0) {
            file.warnings.push_back(where + ": positive logprob for model " + model);
          }
          s.logprob[model] = lp;
        }
      }
      if (j.contains("provenance") && !j["provenance"].is_null()) {
        if (!j["provenance"].is_string()) throw Error("scored-format", "provenance must be a string");
        s.provenance = j["provenance"].get<std::string>();
      }
    } catch (const Error& e) {
      throw Error("scored-format", where + ": " + e.what());
    }
    for (const auto& [k, v] : j.items()) {
      if (k != "id" && k != "text" && k != "tokens" && k != "logprob" && k != "provenance") {
        s.extra[k] = v;
      }
    }
    if (!seen.insert(s.id).second) throw Error("duplicate-id", where + ": duplicate id " + s.id);
    file.samples.push_back(std::move(s));
  }
  return file;
}

inline ScoredFile read_scored(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path);
  return read_scored(in);
}

inline ScoredFile read_scored_string(const std::string& text) {
  std::istringstream in(text);
  return read_scored(in);
}

/// Samples whose tokens do not decode to their text under `spec`.
inline std::vector<std::string> token_mismatches(const std::vector<ScoredSample>& samples,
                                                 const TokenizerSpec& spec) {
  std::vector<std::string> bad;
  for (const auto& s : samples) {
    bool ok = true;
    try {
      ok = spec.decode(s.tokens) == s.text;
    } catch (const Error&) {
      ok = false;
    }
    if (!ok) bad.push_back(s.id);
  }
  return bad;
}

}  // namespace anubis
