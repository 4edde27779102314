#include "pepnet/plot.hpp"

#include <cstdio>
#include <sstream>

#include "pepnet/error.hpp"

namespace pepnet {

namespace {

constexpr double kSize = 480.0;
constexpr double kPad = 50.0;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

double parse_number(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw DataError("ROC CSV line " + std::to_string(line) + ": bad number '" + s + "'");
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

RocSeries parse_roc_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "fold,fpr,tpr,threshold") {
    throw DataError("ROC CSV header must be 'fold,fpr,tpr,threshold'");
  }
  RocSeries series;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
    if (cells.size() != 4) {
      throw DataError("ROC CSV line " + std::to_string(line_no) + ": expected 4 fields");
    }
    const double fold = parse_number(cells[0], line_no);
    if (fold < 0 || fold != static_cast<double>(static_cast<std::size_t>(fold))) {
      throw DataError("ROC CSV line " + std::to_string(line_no) + ": bad fold");
    }
    series[static_cast<std::size_t>(fold)].push_back(
        {parse_number(cells[1], line_no), parse_number(cells[2], line_no),
         parse_number(cells[3], line_no)});
  }
  if (series.empty()) throw DataError("ROC CSV has no points");
  return series;
}

std::string roc_svg(const RocSeries& series, const std::string& title) {
  const double span = kSize - 2 * kPad;
  auto px = [&](double fpr) { return fixed(kPad + fpr * span, 2); };
  auto py = [&](double tpr) { return fixed(kSize - kPad - tpr * span, 2); };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize
      << "\" viewBox=\"0 0 " << kSize << ' ' << kSize << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kSize / 2 << "\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">"
      << escape(title) << "</text>\n";
  svg << "<rect x=\"" << kPad << "\" y=\"" << kPad << "\" width=\"" << span << "\" height=\""
      << span << "\" fill=\"none\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\""
      << py(1) << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  svg << "<text x=\"" << kSize / 2 << "\" y=\"" << kSize - 15
      << "\" text-anchor=\"middle\" font-size=\"12\">False positive rate</text>\n";
  svg << "<text x=\"15\" y=\"" << kSize / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
      << "transform=\"rotate(-90 15 " << kSize / 2 << ")\">True positive rate</text>\n";

  double auc_sum = 0.0;
  std::size_t k = 0;
  for (const auto& [fold, points] : series) {
    const char* color = kPalette[k % std::size(kPalette)];
    const double auc = trapezoid_auc(points);
    auc_sum += auc;
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < points.size(); ++i) {
      svg << (i ? " " : "") << px(points[i].fpr) << ',' << py(points[i].tpr);
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << kSize - kPad - 8 << "\" y=\"" << kSize - kPad - 10 - 16.0 * static_cast<double>(series.size() - k)
        << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << color << "\">fold " << fold
        << " AUC=" << fixed(auc, 3) << "</text>\n";
    ++k;
  }
  svg << "<text x=\"" << kSize - kPad - 8 << "\" y=\"" << kSize - kPad - 10
      << "\" text-anchor=\"end\" font-size=\"12\">mean AUC="
      << fixed(auc_sum / static_cast<double>(series.size()), 3) << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace pepnet
