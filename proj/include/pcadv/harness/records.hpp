#pragma once

// Result records and their CSV form. Floating-point fields are written with
// 17 significant digits so a written file parses back to identical values.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pcadv/error.hpp"

namespace pcadv::harness {

inline constexpr const char* kCsvHeader =
    "attack,victim,transfer,defense,norm_type,epsilon,gamma,kappa,n_samples,success_rate,mean_linf,mean_l2,"
    "mean_chamfer_sym,seed";

/// One (attack, victim, transfer, defense, epsilon) cell.
struct Record {
  std::string attack;
  std::string victim;
  std::string transfer;
  std::string defense;
  std::string norm_type;
  double epsilon = 0;
  double gamma = 0;
  double kappa = 0;
  std::size_t n_samples = 0;
  double success_rate = 0;
  double mean_linf = 0;
  double mean_l2 = 0;
  double mean_chamfer_sym = 0;
  std::uint64_t seed = 0;

  bool operator==(const Record&) const = default;
};

/// Cell identity used for resume and lookups.
struct CellKey {
  std::string attack, victim, transfer, defense;
  double epsilon = 0;
  auto operator<=>(const CellKey&) const = default;
};

inline CellKey key_of(const Record& r) { return {r.attack, r.victim, r.transfer, r.defense, r.epsilon}; }

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void check_field(const std::string& s, const char* what) {
  if (s.empty()) throw InvalidArgument(std::string("csv: empty ") + what);
  if (s.find_first_of(",\"\n\r") != std::string::npos)
    throw InvalidArgument(std::string("csv: ") + what + " '" + s + "' contains a reserved character");
}

}  // namespace detail

inline std::string to_csv_line(const Record& r) {
  detail::check_field(r.attack, "attack name");
  detail::check_field(r.victim, "victim name");
  detail::check_field(r.transfer, "transfer name");
  detail::check_field(r.defense, "defense name");
  detail::check_field(r.norm_type, "norm type");
  std::string s;
  s += r.attack + ',' + r.victim + ',' + r.transfer + ',' + r.defense + ',' + r.norm_type + ',';
  s += detail::fmt_double(r.epsilon) + ',' + detail::fmt_double(r.gamma) + ',' + detail::fmt_double(r.kappa) + ',';
  s += std::to_string(r.n_samples) + ',' + detail::fmt_double(r.success_rate) + ',';
  s += detail::fmt_double(r.mean_linf) + ',' + detail::fmt_double(r.mean_l2) + ',';
  s += detail::fmt_double(r.mean_chamfer_sym) + ',' + std::to_string(r.seed);
  return s;
}

inline std::string to_csv(const std::vector<Record>& records) {
  std::string out = std::string(kCsvHeader) + '\n';
  for (const auto& r : records) out += to_csv_line(r) + '\n';
  return out;
}

inline void write_csv(const std::string& path, const std::vector<Record>& records) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << to_csv(records);
  if (!f.flush()) throw IoError("failed writing '" + path + "'");
}

inline void append_csv(const std::string& path, const std::vector<Record>& records) {
  std::ofstream f(path, std::ios::binary | std::ios::app);
  if (!f) throw IoError("cannot open '" + path + "' for appending");
  for (const auto& r : records) f << to_csv_line(r) << '\n';
  if (!f.flush()) throw IoError("failed writing '" + path + "'");
}

inline std::vector<Record> parse_csv(std::string_view text) {
  std::vector<Record> out;
  std::size_t pos = 0;
  auto next_line = [&](std::size_t& start) -> std::optional<std::string_view> {
    if (pos >= text.size()) return std::nullopt;
    start = pos;
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    pos = end + 1;
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
  };
  std::size_t start = 0;
  const auto header = next_line(start);
  if (!header || *header != kCsvHeader) throw ParseError("csv header does not match the expected columns", 0);
  while (auto line = next_line(start)) {
    if (line->empty()) continue;
    std::vector<std::string_view> f;
    std::size_t b = 0;
    while (true) {
      const auto c = line->find(',', b);
      f.push_back(line->substr(b, c == std::string_view::npos ? std::string_view::npos : c - b));
      if (c == std::string_view::npos) break;
      b = c + 1;
    }
    if (f.size() != 14) throw ParseError("csv row has " + std::to_string(f.size()) + " fields, expected 14", start);
    auto num = [&](std::string_view s, auto& v, const char* what) {
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size())
        throw ParseError(std::string("csv: bad ") + what + " '" + std::string(s) + "'", start);
    };
    Record r;
    r.attack = f[0];
    r.victim = f[1];
    r.transfer = f[2];
    r.defense = f[3];
    r.norm_type = f[4];
    num(f[5], r.epsilon, "epsilon");
    num(f[6], r.gamma, "gamma");
    num(f[7], r.kappa, "kappa");
    num(f[8], r.n_samples, "n_samples");
    num(f[9], r.success_rate, "success_rate");
    num(f[10], r.mean_linf, "mean_linf");
    num(f[11], r.mean_l2, "mean_l2");
    num(f[12], r.mean_chamfer_sym, "mean_chamfer_sym");
    num(f[13], r.seed, "seed");
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<Record> read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str());
}

}  // namespace pcadv::harness
