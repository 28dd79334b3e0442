#pragma once

// Synthetic WS-DREAM-shaped corpora for tests, demos and the acceptance
// suite: metadata tables plus QoS observations whose target is a known
// function of the templated metadata.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace qospred {

struct SyntheticCorpus {
  std::vector<UserMeta> users;
  std::vector<ServiceMeta> services;
  std::vector<QoSRecord> records;
  std::vector<double> noiseless;  // target without noise, per record
};

struct SyntheticLocation {
  std::string country;
  double latitude;
  double longitude;
  std::string autonomous_system;
};

inline const std::vector<SyntheticLocation>& synthetic_locations() {
  static const std::vector<SyntheticLocation> locations = {
      {"USA", 0.5, -97.0, "AS7018"},   {"USA", 1.5, -87.5, "AS701"},  {"Germany", 2.0, 10.0, "AS3320"},
      {"Japan", 3.5, 139.5, "AS2516"}, {"Brazil", 0.0, -47.5, "AS28573"}, {"Germany", 3.0, 13.5, "AS6805"},
  };
  return locations;
}

// target = 0.1 + 0.1 * |lat_u - lat_s| + 0.05 * [country_u != country_s] + N(0, noise_sd^2)
// (the 0.1 offset keeps noisy targets non-negative)
inline double synthetic_target(const UserMeta& u, const ServiceMeta& s) {
  return 0.1 + 0.1 * std::abs(u.latitude - s.latitude) + 0.05 * (u.country != s.country ? 1.0 : 0.0);
}

inline SyntheticCorpus make_synthetic_corpus(std::size_t n_records = 512, double noise_sd = 0.02,
                                             std::uint64_t seed = 42, int n_users = 32, int n_services = 48) {
  const auto& locs = synthetic_locations();
  Rng rng(derive_seed(seed, 0x5e7));
  SyntheticCorpus c;
  for (int i = 0; i < n_users; ++i) {
    const auto& loc = locs[static_cast<std::size_t>(i) % locs.size()];
    UserMeta u;
    u.user_id = i;
    u.ip_address = "10.0." + std::to_string(i / 250) + "." + std::to_string(i % 250 + 1);
    u.country = loc.country;
    u.ip_number = 167772160ULL + static_cast<std::uint64_t>(i);
    u.autonomous_system = loc.autonomous_system;
    u.latitude = loc.latitude;
    u.longitude = loc.longitude;
    c.users.push_back(u);
  }
  for (int j = 0; j < n_services; ++j) {
    const auto& loc = locs[static_cast<std::size_t>(j * 5 + 1) % locs.size()];
    ServiceMeta s;
    s.service_id = j;
    s.wsdl_address = "http://ws" + std::to_string(j) + ".example.org/service?wsdl";
    s.provider = "provider" + std::to_string(j % 7);
    s.ip_address = "172.16." + std::to_string(j / 250) + "." + std::to_string(j % 250 + 1);
    s.country = loc.country;
    s.ip_number = 2886729728ULL + static_cast<std::uint64_t>(j);
    s.autonomous_system = loc.autonomous_system;
    s.latitude = loc.latitude;
    s.longitude = loc.longitude;
    c.services.push_back(s);
  }
  const std::size_t cells = static_cast<std::size_t>(n_users) * static_cast<std::size_t>(n_services);
  if (n_records > cells) n_records = cells;
  std::vector<std::size_t> all(cells);
  for (std::size_t i = 0; i < cells; ++i) all[i] = i;
  portable_shuffle(all, rng);
  all.resize(n_records);
  std::set<std::size_t> chosen(all.begin(), all.end());
  for (std::size_t cell : chosen) {
    const auto& u = c.users[cell / static_cast<std::size_t>(n_services)];
    const auto& s = c.services[cell % static_cast<std::size_t>(n_services)];
    const double clean = synthetic_target(u, s);
    c.noiseless.push_back(clean);
    c.records.push_back({u.user_id, s.service_id, Metric::rt, std::max(0.0, clean + noise_sd * standard_normal(rng))});
  }
  return c;
}

struct SyntheticFiles {
  std::filesystem::path user_table;
  std::filesystem::path service_table;
  std::filesystem::path matrix;
};

// Writes the corpus in the raw dataset layout: tab-separated metadata tables
// and a whitespace matrix with `missing_marker` in unobserved cells.
inline SyntheticFiles write_synthetic_files(const SyntheticCorpus& c, const std::filesystem::path& dir,
                                            double missing_marker = -1.0) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "qos_corpus", "cannot create '" + dir.string() + "': " + ec.message());
  SyntheticFiles f{dir / "userlist.txt", dir / "wslist.txt", dir / "rtMatrix.txt"};
  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "qos_corpus", "cannot write '" + p.string() + "'");
    out << std::setprecision(17);
    return out;
  };
  auto ip_no = [](const std::optional<std::uint64_t>& v) { return v ? std::to_string(*v) : std::string("null"); };
  auto users = open(f.user_table);
  users << "[User ID]\t[IP Address]\t[Country]\t[IP No.]\t[AS]\t[Latitude]\t[Longitude]\n";
  for (const auto& u : c.users)
    users << u.user_id << '\t' << u.ip_address << '\t' << u.country << '\t' << ip_no(u.ip_number) << '\t'
          << u.autonomous_system << '\t' << u.latitude << '\t' << u.longitude << '\n';
  auto services = open(f.service_table);
  services << "[Service ID]\t[WSDL Address]\t[Service Provider]\t[IP Address]\t[Country]\t[IP No.]\t[AS]\t"
              "[Latitude]\t[Longitude]\n";
  for (const auto& s : c.services)
    services << s.service_id << '\t' << s.wsdl_address << '\t' << s.provider << '\t' << s.ip_address << '\t'
             << s.country << '\t' << ip_no(s.ip_number) << '\t' << s.autonomous_system << '\t' << s.latitude << '\t'
             << s.longitude << '\n';
  std::vector<double> cells(c.users.size() * c.services.size(), missing_marker);
  for (const auto& r : c.records)
    cells[static_cast<std::size_t>(r.user_id) * c.services.size() + static_cast<std::size_t>(r.service_id)] = r.target;
  auto matrix = open(f.matrix);
  for (std::size_t i = 0; i < c.users.size(); ++i) {
    for (std::size_t j = 0; j < c.services.size(); ++j) matrix << (j ? "\t" : "") << cells[i * c.services.size() + j];
    matrix << '\n';
  }
  return f;
}

}  // namespace qospred
