#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "dualcore/common.hpp"
#include "dualcore/tensor.hpp"

namespace dualcore {

// Hard Dice 2|A^B|/(|A|+|B|); both-empty pairs score 1.
inline double dice_coefficient(const BinaryMask& a, const BinaryMask& b) {
  if (a.dims != b.dims)
    throw ShapeMismatch("dice_coefficient " + shape_str(a.dims) + " vs " + shape_str(b.dims));
  std::int64_t inter = 0, sa = 0, sb = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    sa += a[i] ? 1 : 0;
    sb += b[i] ? 1 : 0;
    inter += (a[i] && b[i]) ? 1 : 0;
  }
  if (sa + sb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sa + sb);
}

inline BinaryMask threshold_mask(const GrayImage& probs, double thr = 0.5) {
  BinaryMask m(probs.dims);
  for (std::int64_t i = 0; i < probs.numel(); ++i) m[i] = probs[i] >= thr ? 1 : 0;
  return m;
}

struct RocCurve {
  std::vector<double> thresholds;  // descending, one per unique score + sentinel
  std::vector<double> fpr;         // starts at 0, ends at 1
  std::vector<double> tpr;
  double auc = 0.0;
};

// Threshold sweep over the unique scores; tied scores cross together, which
// makes the trapezoidal area equal to the pairwise-ranking count with half
// credit for ties.
inline RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ShapeMismatch("roc_auc scores vs labels");
  std::int64_t pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg)++;
  if (pos == 0 || neg == 0)
    throw DegenerateLabels("need both classes, got " + std::to_string(pos) + " positive / " +
                           std::to_string(neg) + " negative");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;  // stable for determinism
  });

  RocCurve curve;
  curve.thresholds.push_back(std::numeric_limits<double>::infinity());
  curve.fpr.push_back(0.0);
  curve.tpr.push_back(0.0);
  std::int64_t tp = 0, fp = 0;
  double area = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    std::int64_t dtp = 0, dfp = 0;
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] ? dtp : dfp)++;
      ++i;
    }
    const double fpr0 = static_cast<double>(fp) / static_cast<double>(neg);
    const double tpr0 = static_cast<double>(tp) / static_cast<double>(pos);
    tp += dtp;
    fp += dfp;
    const double fpr1 = static_cast<double>(fp) / static_cast<double>(neg);
    const double tpr1 = static_cast<double>(tp) / static_cast<double>(pos);
    area += (fpr1 - fpr0) * (tpr0 + tpr1) / 2.0;
    curve.thresholds.push_back(s);
    curve.fpr.push_back(fpr1);
    curve.tpr.push_back(tpr1);
  }
  curve.auc = area;
  return curve;
}

struct SampleEval {
  std::string patient_id;
  int label = 0;
  double dice_crf = 0.0;  // primary mask (CRF head)
  double dice_cnn = 0.0;
  double p_malignant = 0.0;
};

struct EvalReport {
  std::vector<SampleEval> samples;
  double mean_dice = 0.0;  // CRF head
  double std_dice = 0.0;
  double mean_dice_cnn = 0.0;
  double auc = 0.0;
  bool has_auc = false;  // false when only one class is present

  void finalize() {
    if (samples.empty()) return;
    double s = 0, s2 = 0, sc = 0;
    for (const auto& e : samples) {
      s += e.dice_crf;
      s2 += e.dice_crf * e.dice_crf;
      sc += e.dice_cnn;
    }
    const double n = static_cast<double>(samples.size());
    mean_dice = s / n;
    std_dice = std::sqrt(std::max(0.0, s2 / n - mean_dice * mean_dice));
    mean_dice_cnn = sc / n;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& e : samples) {
      scores.push_back(e.p_malignant);
      labels.push_back(e.label);
    }
    bool both = false;
    for (std::size_t i = 1; i < labels.size(); ++i)
      if (labels[i] != labels[0]) both = true;
    has_auc = both;
    auc = both ? roc_auc(scores, labels).auc : 0.0;
  }
};

// ---------------------------------------------------------------------------
// plot emission: deterministic CSV + SVG pairs
// ---------------------------------------------------------------------------

namespace plot {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// long format (series,x,y) so curves with different x grids coexist
inline void write_csv(const std::string& path, const std::string& x_name,
                      const std::vector<Series>& series) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "series," << x_name << ",value\n";
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i)
      f << s.name << ',' << fmt(s.x[i]) << ',' << fmt(s.y[i]) << '\n';
}

// Minimal line chart; fixed palette, no external dependencies, byte-stable.
inline void write_svg(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series) {
  if (series.empty()) throw EmptyInput("write_svg needs at least one series");
  const int W = 640, H = 480, ml = 60, mr = 20, mt = 40, mb = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  const char* colors[6] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  f << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
    << "</text>\n";
  // axes
  f << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  f << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
  f << "<text x=\"16\" y=\"" << (mt + H - mb) / 2
    << "\" font-size=\"12\" transform=\"rotate(-90 16 " << (mt + H - mb) / 2 << ")\">" << y_label
    << "</text>\n";
  // range labels
  f << "<text x=\"" << ml << "\" y=\"" << H - mb + 16 << "\" font-size=\"10\">" << fmt(xmin)
    << "</text>\n";
  f << "<text x=\"" << W - mr << "\" y=\"" << H - mb + 16
    << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(xmax) << "</text>\n";
  f << "<text x=\"" << ml - 4 << "\" y=\"" << H - mb << "\" text-anchor=\"end\" font-size=\"10\">"
    << fmt(ymin) << "</text>\n";
  f << "<text x=\"" << ml - 4 << "\" y=\"" << mt + 4
    << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(ymax) << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    f << "<polyline fill=\"none\" stroke=\"" << colors[si % 6] << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      f << fmt(px(s.x[i])) << ',' << fmt(py(s.y[i])) << ' ';
    f << "\"/>\n";
    f << "<text x=\"" << W - mr - 4 << "\" y=\"" << mt + 16 + 14 * static_cast<int>(si)
      << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << colors[si % 6] << "\">" << s.name
      << "</text>\n";
  }
  f << "</svg>\n";
}

// one figure family: CSV alongside the SVG
inline void emit(const std::string& stem, const std::string& title, const std::string& x_label,
                 const std::string& y_label, const std::vector<Series>& series) {
  write_csv(stem + ".csv", x_label, series);
  write_svg(stem + ".svg", title, x_label, y_label, series);
}

}  // namespace plot

}  // namespace dualcore
