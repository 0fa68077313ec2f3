#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ganinc/errors.hpp"
#include "ganinc/learner.hpp"

namespace ganinc {

// Real-valued CSV cells use '.' decimals with 4 places.
inline std::string csv_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

struct StepRow {
  int step = 0;
  int seen_architectures = 0;
  MetricsReport metrics;
  int epochs_run = 0;
};

// One row per incremental step (initialization counts as step 1).
inline std::string run_csv(const std::vector<StepRow>& rows, const std::vector<int>& all_archs,
                           bool with_aux) {
  std::ostringstream os;
  os << "step,seen_architectures,detection_acc";
  for (int a : all_archs) os << ",det_arch_" << a;
  os << ",classification_acc";
  if (with_aux) os << ",aux_detector_acc";
  os << ",epochs_run\n";
  for (const auto& row : rows) {
    os << row.step << ',' << row.seen_architectures << ',' << csv_real(row.metrics.detection_acc);
    for (int a : all_archs) {
      os << ',';
      for (const auto& [arch, acc] : row.metrics.per_arch_detection)
        if (arch == a) os << csv_real(acc);
    }
    os << ',' << csv_real(row.metrics.classification_acc);
    if (with_aux) {
      os << ',';
      if (row.metrics.aux_detector_acc) os << csv_real(*row.metrics.aux_detector_acc);
    }
    os << ',' << row.epochs_run << '\n';
  }
  return os.str();
}

inline std::string confusion_csv(const MetricsReport& m) {
  std::ostringstream os;
  os << "true_arch";
  for (int a : m.arch_order) os << ",pred_arch_" << a;
  os << '\n';
  for (size_t i = 0; i < m.confusion.size(); ++i) {
    os << m.arch_order[i];
    for (int v : m.confusion[i]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

struct CurveSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (step, accuracy)
};

// Self-contained SVG line chart, one polyline and one marker set per series.
inline std::string emit_svg_curve(const std::vector<CurveSeries>& series,
                                  const std::string& title = "Detection accuracy per step") {
  if (series.empty()) throw usage_error("emit_svg_curve: no series");
  for (const auto& s : series)
    if (s.points.empty()) throw usage_error("emit_svg_curve: empty series '" + s.name + "'");

  const double width = 640, height = 400, left = 62, right = 615, top = 40, bottom = 355;
  double x_min = series[0].points[0].first, x_max = x_min;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
    }
  if (x_max == x_min) x_max = x_min + 1;
  auto sx = [&](double x) { return left + (x - x_min) / (x_max - x_min) * (right - left); };
  auto sy = [&](double y) { return bottom - y * (bottom - top); };
  static const char* palette[] = {"#1f6fb4", "#d1495b", "#3a913f", "#8a4fbf", "#c98a1e", "#3f8f8f"};

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "  <rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  os << "  <text x=\"" << (width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
     << title << "</text>\n";
  // axes
  os << "  <line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\""
     << bottom << "\" stroke=\"black\"/>\n";
  os << "  <line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double v = i * 0.25;
    os << "  <line x1=\"" << (left - 4) << "\" y1=\"" << sy(v) << "\" x2=\"" << left << "\" y2=\""
       << sy(v) << "\" stroke=\"black\"/>\n";
    os << "  <text x=\"" << (left - 8) << "\" y=\"" << (sy(v) + 4)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << csv_real(v)
       << "</text>\n";
  }
  for (int x = int(x_min); x <= int(x_max); ++x) {
    os << "  <line x1=\"" << sx(x) << "\" y1=\"" << bottom << "\" x2=\"" << sx(x) << "\" y2=\""
       << (bottom + 4) << "\" stroke=\"black\"/>\n";
    os << "  <text x=\"" << sx(x) << "\" y=\"" << (bottom + 18)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << x
       << "</text>\n";
  }
  os << "  <text x=\"" << ((left + right) / 2) << "\" y=\"" << (height - 8)
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">step</text>\n";
  os << "  <text x=\"16\" y=\"" << ((top + bottom) / 2)
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
     << ((top + bottom) / 2) << ")\">accuracy</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = palette[si % 6];
    std::ostringstream pts;
    for (const auto& [x, y] : series[si].points) pts << sx(x) << ',' << sy(y) << ' ';
    os << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
       << pts.str() << "\"/>\n";
    for (const auto& [x, y] : series[si].points)
      os << "  <circle cx=\"" << sx(x) << "\" cy=\"" << sy(y) << "\" r=\"3.5\" fill=\"" << color
         << "\"/>\n";
    os << "  <text x=\"" << (right - 4) << "\" y=\"" << (top + 16 + 16 * double(si))
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << color
       << "\">" << series[si].name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << content;
  if (!os) throw std::runtime_error("short write: " + path.string());
}

}  // namespace ganinc
