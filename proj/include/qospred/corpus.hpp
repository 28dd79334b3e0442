#pragma once

// Loading of WS-DREAM style user/service metadata tables and QoS matrices,
// plus density-controlled train/validation/test splitting over observed cells.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace qospred {

inline constexpr std::string_view kUnknown = "unknown";

enum class Metric { rt, tp };

inline std::string_view to_string(Metric m) { return m == Metric::rt ? "rt" : "tp"; }

inline Metric parse_metric(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "rt") return Metric::rt;
  if (lower == "tp") return Metric::tp;
  throw Error(ErrorKind::config, "qos_corpus", "unknown metric '" + std::string(text) + "' (expected rt|tp)");
}

struct UserMeta {
  int user_id = 0;
  std::string ip_address{kUnknown};
  std::string country{kUnknown};
  std::optional<std::uint64_t> ip_number;
  std::string autonomous_system{kUnknown};
  double latitude = 0.0;
  double longitude = 0.0;

  friend bool operator==(const UserMeta&, const UserMeta&) = default;
};

struct ServiceMeta {
  int service_id = 0;
  std::string wsdl_address{kUnknown};
  std::string provider{kUnknown};
  std::string ip_address{kUnknown};
  std::string country{kUnknown};
  std::optional<std::uint64_t> ip_number;
  std::string autonomous_system{kUnknown};
  double latitude = 0.0;
  double longitude = 0.0;

  friend bool operator==(const ServiceMeta&, const ServiceMeta&) = default;
};

struct QoSRecord {
  int user_id = 0;
  int service_id = 0;
  Metric metric = Metric::rt;
  double target = 0.0;

  friend bool operator==(const QoSRecord&, const QoSRecord&) = default;
};

struct Metadata {
  std::vector<UserMeta> users;
  std::vector<ServiceMeta> services;
  std::size_t coordinate_warnings = 0;
};

struct MatrixLoad {
  std::vector<QoSRecord> records;
  std::size_t dropped_missing = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct DatasetSplit {
  std::vector<QoSRecord> train;
  std::vector<QoSRecord> test;
  std::vector<QoSRecord> validation;
  double density = 0.0;
  double validation_fraction = 0.2;
  std::uint64_t seed = 42;

  std::size_t total() const { return train.size() + test.size() + validation.size(); }
};

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n\"");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n\"");
  return std::string(s.substr(b, e - b + 1));
}

// "[User ID]" -> "userid", "ip_number" -> "ipnumber".
inline std::string normalize_header(std::string_view s) {
  std::string out;
  for (unsigned char c : s)
    if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
  return out;
}

inline std::vector<std::string> split_fields(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool is_separator_line(std::string_view line) {
  bool any = false;
  for (char c : line) {
    if (c == '=' || c == '-') {
      any = true;
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      return false;
    }
  }
  return any;
}

inline std::string text_or_unknown(const std::string& s) {
  if (s.empty()) return std::string(kUnknown);
  std::string lower = normalize_header(s);
  if (lower == "null" || lower == "na" || lower == "none" || lower == "unknown") return std::string(kUnknown);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<std::uint64_t> parse_uint(std::string_view s) {
  std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  std::optional<std::size_t> column(std::initializer_list<std::string_view> names) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      for (auto n : names)
        if (header[i] == n) return i;
    return std::nullopt;
  }
};

inline Table read_table(std::istream& in, const std::string& source) {
  Table table;
  std::string line;
  std::size_t line_no = 0;
  char delim = ',';
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || is_separator_line(line)) continue;
    if (!have_header) {
      delim = line.find('\t') != std::string::npos ? '\t' : ',';
      for (auto& f : split_fields(line, delim)) table.header.push_back(normalize_header(f));
      have_header = true;
      continue;
    }
    table.rows.push_back(split_fields(line, delim));
    table.line_numbers.push_back(line_no);
  }
  if (!have_header) throw Error(ErrorKind::schema, "qos_corpus", source + ": missing header row");
  return table;
}

inline std::string field(const Table& t, std::size_t row, std::optional<std::size_t> col) {
  if (!col || *col >= t.rows[row].size()) return std::string(kUnknown);
  return text_or_unknown(t.rows[row][*col]);
}

// Returns false when either coordinate is missing, unparseable or out of range.
inline bool parse_coordinates(const Table& t, std::size_t row, std::optional<std::size_t> lat_col,
                              std::optional<std::size_t> lon_col, double& lat, double& lon) {
  auto get = [&](std::optional<std::size_t> c) -> std::optional<double> {
    if (!c || *c >= t.rows[row].size()) return std::nullopt;
    return parse_double(t.rows[row][*c]);
  };
  auto la = get(lat_col);
  auto lo = get(lon_col);
  if (!la || !lo || *la < -90.0 || *la > 90.0 || *lo < -180.0 || *lo > 180.0) {
    lat = 0.0;
    lon = 0.0;
    return false;
  }
  lat = *la;
  lon = *lo;
  return true;
}

inline int parse_id(const Table& t, std::size_t row, std::optional<std::size_t> col, const std::string& source) {
  auto id = col && *col < t.rows[row].size() ? parse_uint(t.rows[row][*col]) : std::nullopt;
  if (!id || *id > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
    throw Error(ErrorKind::schema, "qos_corpus",
                source + ":" + std::to_string(t.line_numbers[row]) + ": missing or invalid id");
  return static_cast<int>(*id);
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "qos_corpus", "cannot open '" + path.string() + "'");
  return in;
}

}  // namespace detail

inline std::vector<UserMeta> parse_user_table(std::istream& in, const std::string& source,
                                              std::size_t* coordinate_warnings = nullptr) {
  auto t = detail::read_table(in, source);
  auto id_col = t.column({"userid", "id"});
  if (!id_col) throw Error(ErrorKind::schema, "qos_corpus", source + ": no user id column in header");
  auto ip = t.column({"ipaddress", "ip"});
  auto country = t.column({"country"});
  auto ipnum = t.column({"ipno", "ipnumber"});
  auto as = t.column({"as", "autonomoussystem"});
  auto lat = t.column({"latitude", "lat"});
  auto lon = t.column({"longitude", "lon"});

  std::vector<UserMeta> users;
  std::unordered_set<int> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    UserMeta u;
    u.user_id = detail::parse_id(t, r, id_col, source);
    if (!seen.insert(u.user_id).second)
      throw Error(ErrorKind::schema, "qos_corpus", source + ": duplicate user id " + std::to_string(u.user_id));
    u.ip_address = detail::field(t, r, ip);
    u.country = detail::field(t, r, country);
    u.ip_number = ipnum && *ipnum < t.rows[r].size() ? detail::parse_uint(t.rows[r][*ipnum]) : std::nullopt;
    u.autonomous_system = detail::field(t, r, as);
    if (!detail::parse_coordinates(t, r, lat, lon, u.latitude, u.longitude) && coordinate_warnings)
      ++*coordinate_warnings;
    users.push_back(std::move(u));
  }
  return users;
}

inline std::vector<ServiceMeta> parse_service_table(std::istream& in, const std::string& source,
                                                    std::size_t* coordinate_warnings = nullptr) {
  auto t = detail::read_table(in, source);
  auto id_col = t.column({"serviceid", "id"});
  if (!id_col) throw Error(ErrorKind::schema, "qos_corpus", source + ": no service id column in header");
  auto wsdl = t.column({"wsdladdress", "wsdl"});
  auto provider = t.column({"serviceprovider", "provider"});
  auto ip = t.column({"ipaddress", "ip"});
  auto country = t.column({"country"});
  auto ipnum = t.column({"ipno", "ipnumber"});
  auto as = t.column({"as", "autonomoussystem"});
  auto lat = t.column({"latitude", "lat"});
  auto lon = t.column({"longitude", "lon"});

  std::vector<ServiceMeta> services;
  std::unordered_set<int> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    ServiceMeta s;
    s.service_id = detail::parse_id(t, r, id_col, source);
    if (!seen.insert(s.service_id).second)
      throw Error(ErrorKind::schema, "qos_corpus",
                  source + ": duplicate service id " + std::to_string(s.service_id));
    s.wsdl_address = detail::field(t, r, wsdl);
    s.provider = detail::field(t, r, provider);
    s.ip_address = detail::field(t, r, ip);
    s.country = detail::field(t, r, country);
    s.ip_number = ipnum && *ipnum < t.rows[r].size() ? detail::parse_uint(t.rows[r][*ipnum]) : std::nullopt;
    s.autonomous_system = detail::field(t, r, as);
    if (!detail::parse_coordinates(t, r, lat, lon, s.latitude, s.longitude) && coordinate_warnings)
      ++*coordinate_warnings;
    services.push_back(std::move(s));
  }
  return services;
}

inline Metadata load_metadata(const std::filesystem::path& user_table_path,
                              const std::filesystem::path& service_table_path) {
  Metadata meta;
  auto uin = detail::open_input(user_table_path);
  meta.users = parse_user_table(uin, user_table_path.string(), &meta.coordinate_warnings);
  auto sin = detail::open_input(service_table_path);
  meta.services = parse_service_table(sin, service_table_path.string(), &meta.coordinate_warnings);
  return meta;
}

// Rows are users, columns are services; cells equal to `missing_marker` are
// unobserved. Any other negative or non-finite cell is rejected.
inline MatrixLoad parse_qos_matrix(std::istream& in, Metric metric, double missing_marker = -1.0,
                                   const std::string& source = "<matrix>") {
  MatrixLoad out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream cells(line);
    std::string cell;
    std::size_t col = 0;
    while (cells >> cell) {
      auto v = detail::parse_double(cell);
      if (!v)
        throw Error(ErrorKind::parse, "qos_corpus",
                    source + ": non-numeric cell '" + cell + "' at row " + std::to_string(out.rows) +
                        ", column " + std::to_string(col));
      if (*v == missing_marker) {
        ++out.dropped_missing;
      } else if (*v < 0.0) {
        throw Error(ErrorKind::parse, "qos_corpus",
                    source + ": negative value " + cell + " at row " + std::to_string(out.rows) + ", column " +
                        std::to_string(col));
      } else {
        out.records.push_back({static_cast<int>(out.rows), static_cast<int>(col), metric, *v});
      }
      ++col;
    }
    if (col == 0) continue;
    if (out.rows == 0) {
      out.cols = col;
    } else if (col != out.cols) {
      throw Error(ErrorKind::parse, "qos_corpus",
                  source + ": row " + std::to_string(out.rows) + " (line " + std::to_string(line_no) + ") has " +
                      std::to_string(col) + " columns, expected " + std::to_string(out.cols));
    }
    ++out.rows;
  }
  return out;
}

inline MatrixLoad load_qos_matrix(const std::filesystem::path& matrix_path, Metric metric,
                                  double missing_marker = -1.0) {
  auto in = detail::open_input(matrix_path);
  return parse_qos_matrix(in, metric, missing_marker, matrix_path.string());
}

namespace detail {

// Unbiased bounded draw in [0, bound); independent of the standard library's
// distribution implementations so splits are portable.
inline std::uint64_t bounded(Rng& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = 0;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

inline std::uint64_t record_key(const QoSRecord& r) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(r.user_id)) << 33) ^
         (static_cast<std::uint64_t>(static_cast<std::uint32_t>(r.service_id)) << 1) ^
         static_cast<std::uint64_t>(r.metric == Metric::tp);
}

}  // namespace detail

template <typename T>
void portable_shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(detail::bounded(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

struct SplitSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

// Validation takes round(f*N) first, train round(d*N) from the remainder,
// test gets whatever is left.
inline SplitSizes split_sizes(std::size_t total, double density, double validation_fraction) {
  if (!(density > 0.0 && density < 1.0))
    throw Error(ErrorKind::config, "qos_corpus", "density must lie in (0, 1), got " + std::to_string(density));
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw Error(ErrorKind::config, "qos_corpus",
                "validation fraction must lie in (0, 1), got " + std::to_string(validation_fraction));
  if (density + validation_fraction >= 1.0)
    throw Error(ErrorKind::config, "qos_corpus", "density + validation fraction must be < 1");
  SplitSizes s;
  const auto n = static_cast<double>(total);
  s.validation = std::min(total, static_cast<std::size_t>(std::llround(validation_fraction * n)));
  s.train = std::min(total - s.validation, static_cast<std::size_t>(std::llround(density * n)));
  s.test = total - s.validation - s.train;
  return s;
}

inline DatasetSplit split_by_density(std::vector<QoSRecord> records, double density,
                                     double validation_fraction = 0.2, std::uint64_t seed = 42) {
  const auto sizes = split_sizes(records.size(), density, validation_fraction);
  {
    std::unordered_set<std::uint64_t> keys;
    keys.reserve(records.size());
    for (const auto& r : records)
      if (!keys.insert(detail::record_key(r)).second)
        throw Error(ErrorKind::input, "qos_corpus",
                    "duplicate record (user " + std::to_string(r.user_id) + ", service " +
                        std::to_string(r.service_id) + ", " + std::string(to_string(r.metric)) + ")");
  }
  Rng rng(derive_seed(seed, 0x5d17));
  portable_shuffle(records, rng);

  DatasetSplit split;
  split.density = density;
  split.validation_fraction = validation_fraction;
  split.seed = seed;
  auto first = records.begin();
  split.validation.assign(first, first + static_cast<std::ptrdiff_t>(sizes.validation));
  first += static_cast<std::ptrdiff_t>(sizes.validation);
  split.train.assign(first, first + static_cast<std::ptrdiff_t>(sizes.train));
  first += static_cast<std::ptrdiff_t>(sizes.train);
  split.test.assign(first, records.end());
  return split;
}

inline nlohmann::ordered_json split_manifest(const DatasetSplit& split, Metric metric, std::size_t dropped_missing) {
  nlohmann::ordered_json j;
  j["metric"] = to_string(metric);
  j["density"] = split.density;
  j["validation_fraction"] = split.validation_fraction;
  j["seed"] = split.seed;
  j["total"] = split.total();
  j["dropped_missing"] = dropped_missing;
  j["counts"] = {{"train", split.train.size()}, {"validation", split.validation.size()}, {"test", split.test.size()}};
  return j;
}

}  // namespace qospred
