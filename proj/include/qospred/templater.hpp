#pragma once

// Natural-language rendering of user/service metadata and the JSONL
// "feature" example format consumed by training and prediction.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "error.hpp"

namespace qospred {

// Marker joining the user and service descriptions inside the "feature" field.
inline constexpr std::string_view kFeatureJoin = " ||| ";

struct FeatureExample {
  std::string feature;
  double target = 0.0;
  int user_id = 0;
  int service_id = 0;
  Metric metric = Metric::rt;

  friend bool operator==(const FeatureExample&, const FeatureExample&) = default;
};

namespace detail {

inline std::string fixed1(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

inline std::string ip_number_text(const std::optional<std::uint64_t>& n) {
  return n ? std::to_string(*n) : std::string(kUnknown);
}

}  // namespace detail

inline std::string render_description(const UserMeta& u) {
  return "User " + std::to_string(u.user_id) + " from " + u.country + ", IP " + u.ip_address + " (number " +
         detail::ip_number_text(u.ip_number) + "), autonomous system " + u.autonomous_system + ", located at (" +
         detail::fixed1(u.latitude) + ", " + detail::fixed1(u.longitude) + ").";
}

inline std::string render_description(const ServiceMeta& s) {
  return "Service " + std::to_string(s.service_id) + " provided by " + s.provider + " from " + s.country +
         ", WSDL " + s.wsdl_address + ", IP " + s.ip_address + " (number " + detail::ip_number_text(s.ip_number) +
         "), autonomous system " + s.autonomous_system + ", located at (" + detail::fixed1(s.latitude) + ", " +
         detail::fixed1(s.longitude) + ").";
}

inline std::string join_feature(std::string_view user_text, std::string_view service_text) {
  std::string out;
  out.reserve(user_text.size() + service_text.size() + kFeatureJoin.size());
  out.append(user_text).append(kFeatureJoin).append(service_text);
  return out;
}

// Splits a feature string back into its user and service parts. A feature
// without the join marker is treated as user text with an empty service part.
inline std::pair<std::string, std::string> split_feature(std::string_view feature) {
  auto pos = feature.find(kFeatureJoin);
  if (pos == std::string_view::npos) return {std::string(feature), std::string()};
  return {std::string(feature.substr(0, pos)), std::string(feature.substr(pos + kFeatureJoin.size()))};
}

inline std::vector<FeatureExample> build_examples(std::span<const QoSRecord> records, std::span<const UserMeta> users,
                                                  std::span<const ServiceMeta> services) {
  std::unordered_map<int, std::string> user_text;
  std::unordered_map<int, std::string> service_text;
  for (const auto& u : users) user_text.emplace(u.user_id, render_description(u));
  for (const auto& s : services) service_text.emplace(s.service_id, render_description(s));

  std::vector<FeatureExample> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto u = user_text.find(r.user_id);
    auto s = service_text.find(r.service_id);
    if (u == user_text.end() || s == service_text.end())
      throw Error(ErrorKind::integrity, "semantic_templater",
                  "record " + std::to_string(i) + " (user " + std::to_string(r.user_id) + ", service " +
                      std::to_string(r.service_id) + ") references " +
                      (u == user_text.end() ? "unknown user " + std::to_string(r.user_id)
                                            : "unknown service " + std::to_string(r.service_id)));
    out.push_back({join_feature(u->second, s->second), r.target, r.user_id, r.service_id, r.metric});
  }
  return out;
}

inline nlohmann::ordered_json to_json(const FeatureExample& e) {
  nlohmann::ordered_json j;
  j["feature"] = e.feature;
  j["target"] = e.target;
  j["user_id"] = e.user_id;
  j["service_id"] = e.service_id;
  j["metric"] = to_string(e.metric);
  return j;
}

inline FeatureExample example_from_json(const nlohmann::json& j) {
  try {
    FeatureExample e;
    e.feature = j.at("feature").get<std::string>();
    e.target = j.at("target").get<double>();
    e.user_id = j.value("user_id", 0);
    e.service_id = j.value("service_id", 0);
    e.metric = parse_metric(j.value("metric", std::string("rt")));
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::parse, "semantic_templater", std::string("bad example object: ") + ex.what());
  }
}

inline void write_examples_jsonl(const std::filesystem::path& path, std::span<const FeatureExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "semantic_templater", "cannot write '" + path.string() + "'");
  for (const auto& e : examples) out << to_json(e).dump() << '\n';
  if (!out) throw Error(ErrorKind::io, "semantic_templater", "write failed for '" + path.string() + "'");
}

inline std::vector<FeatureExample> read_examples_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "semantic_templater", "cannot open '" + path.string() + "'");
  std::vector<FeatureExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& ex) {
      throw Error(ErrorKind::parse, "semantic_templater",
                  path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
    out.push_back(example_from_json(j));
  }
  return out;
}

}  // namespace qospred
