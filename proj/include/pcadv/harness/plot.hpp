#pragma once

// Minimal SVG line charts of success rate against epsilon: one chart per
// (victim, transfer) pair, one line per (attack, defense) series.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pcadv/harness/records.hpp"

namespace pcadv::harness {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (epsilon, success), sorted by epsilon
};

namespace detail {

inline std::string fmt(double v, const char* f = "%.4g") {
  char buf[32];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

inline const char* palette(std::size_t i) {
  static const char* const colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                       "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

}  // namespace detail

inline std::string svg_line_chart(const std::string& title, const std::vector<Series>& series) {
  const double w = 640, h = 400, ml = 60, mr = 170, mt = 40, mb = 50;
  double xmax = 0;
  for (const auto& s : series)
    for (const auto& p : s.points) xmax = std::max(xmax, p.first);
  if (xmax <= 0) xmax = 1;
  const double pw = w - ml - mr, ph = h - mt - mb;
  auto X = [&](double x) { return ml + pw * x / xmax; };
  auto Y = [&](double y) { return mt + ph * (1.0 - y); };

  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt(w) + "\" height=\"" + detail::fmt(h) +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + detail::fmt(ml) + "\" y=\"24\" font-size=\"14\">" + detail::xml_escape(title) + "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = i / 4.0;
    o += "<line x1=\"" + detail::fmt(ml) + "\" x2=\"" + detail::fmt(ml + pw) + "\" y1=\"" + detail::fmt(Y(y)) +
         "\" y2=\"" + detail::fmt(Y(y)) + "\" stroke=\"#ddd\"/>\n";
    o += "<text x=\"" + detail::fmt(ml - 8) + "\" y=\"" + detail::fmt(Y(y) + 4) + "\" text-anchor=\"end\">" +
         detail::fmt(y * 100, "%.0f") + "%</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double x = xmax * i / 5.0;
    o += "<text x=\"" + detail::fmt(X(x)) + "\" y=\"" + detail::fmt(mt + ph + 18) + "\" text-anchor=\"middle\">" +
         detail::fmt(x, "%.3g") + "</text>\n";
  }
  o += "<rect x=\"" + detail::fmt(ml) + "\" y=\"" + detail::fmt(mt) + "\" width=\"" + detail::fmt(pw) +
       "\" height=\"" + detail::fmt(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  o += "<text x=\"" + detail::fmt(ml + pw / 2) + "\" y=\"" + detail::fmt(h - 10) +
       "\" text-anchor=\"middle\">epsilon</text>\n";
  o += "<text transform=\"translate(16," + detail::fmt(mt + ph / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">success rate</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    std::string pts;
    for (const auto& p : s.points) pts += detail::fmt(X(p.first)) + "," + detail::fmt(Y(p.second)) + " ";
    o += "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" + std::string(detail::palette(i)) + "\" points=\"" +
         pts + "\"/>\n";
    for (const auto& p : s.points)
      o += "<circle r=\"3\" cx=\"" + detail::fmt(X(p.first)) + "\" cy=\"" + detail::fmt(Y(p.second)) + "\" fill=\"" +
           detail::palette(i) + "\"/>\n";
    const double ly = mt + 10 + 18.0 * static_cast<double>(i);
    o += "<line x1=\"" + detail::fmt(ml + pw + 12) + "\" x2=\"" + detail::fmt(ml + pw + 32) + "\" y1=\"" +
         detail::fmt(ly) + "\" y2=\"" + detail::fmt(ly) + "\" stroke-width=\"2\" stroke=\"" + detail::palette(i) +
         "\"/>\n";
    o += "<text x=\"" + detail::fmt(ml + pw + 36) + "\" y=\"" + detail::fmt(ly + 4) + "\">" +
         detail::xml_escape(s.label) + "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

/// Writes <dir>/<victim>__<transfer>.svg for every pair in `records` and
/// returns the written paths.
inline std::vector<std::string> emit_svg(const std::vector<Record>& records, const std::string& dir) {
  if (records.empty()) throw InvalidArgument("emit_svg: no records");
  std::map<std::pair<std::string, std::string>, std::map<std::string, Series>> charts;
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> order;
  for (const auto& r : records) {
    auto& pair = charts[{r.victim, r.transfer}];
    const std::string label = r.attack + " / " + r.defense;
    if (!pair.count(label)) order[{r.victim, r.transfer}].push_back(label);
    auto& s = pair[label];
    s.label = label;
    s.points.emplace_back(r.epsilon, r.success_rate);
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::vector<std::string> paths;
  for (auto& [key, by_label] : charts) {
    std::vector<Series> ss;
    for (const auto& label : order[key]) {
      auto s = by_label[label];
      std::sort(s.points.begin(), s.points.end());
      ss.push_back(std::move(s));
    }
    const std::string path = (std::filesystem::path(dir) / (key.first + "__" + key.second + ".svg")).string();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << svg_line_chart("victim " + key.first + ", evaluated on " + key.second, ss);
    if (!f.flush()) throw IoError("failed writing '" + path + "'");
    paths.push_back(path);
  }
  return paths;
}

}  // namespace pcadv::harness
