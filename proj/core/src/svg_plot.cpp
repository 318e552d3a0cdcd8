#include "embed2text/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "embed2text/common.hpp"

namespace embed2text {

namespace {

constexpr int kW = 640, kH = 420;
constexpr int kMarginL = 64, kMarginR = 20, kMarginT = 40, kMarginB = 48;
const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Frame {
  double x0, x1, y0, y1;
  bool log_x = false;

  double px(double x) const {
    double t;
    if (log_x) {
      t = (std::log10(x) - std::log10(x0)) / (std::log10(x1) - std::log10(x0));
    } else {
      t = (x - x0) / (x1 - x0);
    }
    return kMarginL + t * (kW - kMarginL - kMarginR);
  }
  double py(double y) const {
    const double t = (y - y0) / (y1 - y0);
    return kH - kMarginB - t * (kH - kMarginT - kMarginB);
  }
};

std::string svg_open(const std::string& title) {
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kW) +
                    "\" height=\"" + std::to_string(kH) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + std::to_string(kW / 2) + "\" y=\"22\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"14\">" + esc(title) + "</text>\n";
  return out;
}

std::string axes(const Frame& f, const std::string& x_label, const std::string& y_label) {
  std::string out;
  out += "<line x1=\"" + num(kMarginL) + "\" y1=\"" + num(kH - kMarginB) + "\" x2=\"" +
         num(kW - kMarginR) + "\" y2=\"" + num(kH - kMarginB) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + num(kMarginL) + "\" y1=\"" + num(kMarginT) + "\" x2=\"" + num(kMarginL) +
         "\" y2=\"" + num(kH - kMarginB) + "\" stroke=\"black\"/>\n";
  out += "<text x=\"" + std::to_string(kW / 2) + "\" y=\"" + std::to_string(kH - 10) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + esc(x_label) +
         "</text>\n";
  out += "<text x=\"16\" y=\"" + std::to_string(kH / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "transform=\"rotate(-90 16 " + std::to_string(kH / 2) + ")\">" + esc(y_label) +
         "</text>\n";
  // min/max tick labels
  out += "<text x=\"" + num(kMarginL) + "\" y=\"" + num(kH - kMarginB + 16) +
         "\" font-family=\"sans-serif\" font-size=\"10\">" + num(f.x0) + "</text>\n";
  out += "<text x=\"" + num(kW - kMarginR) + "\" y=\"" + num(kH - kMarginB + 16) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + num(f.x1) +
         "</text>\n";
  out += "<text x=\"" + num(kMarginL - 6) + "\" y=\"" + num(kH - kMarginB) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + num(f.y0) +
         "</text>\n";
  out += "<text x=\"" + num(kMarginL - 6) + "\" y=\"" + num(kMarginT + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + num(f.y1) +
         "</text>\n";
  return out;
}

}  // namespace

std::string svg_line_chart(const std::vector<SvgSeries>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label, bool log_x) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) {
      if (log_x && v <= 0.0) continue;
      x0 = std::min(x0, v);
      x1 = std::max(x1, v);
    }
    for (double v : s.y) {
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
  }
  if (x0 >= x1) x1 = x0 + 1;
  if (y0 >= y1) y1 = y0 + 1;
  Frame f{x0, x1, y0, y1, log_x};

  std::string out = svg_open(title);
  out += axes(f, x_label, y_label);
  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = kColors[si % 6];
    std::string path;
    bool first = true;
    for (size_t i = 0; i < series[si].x.size(); ++i) {
      double xv = series[si].x[i];
      if (log_x && xv <= 0.0) xv = x0;  // clamp zero onto the left edge
      path += (first ? "M" : "L");
      path += num(f.px(xv)) + " " + num(f.py(series[si].y[i])) + " ";
      first = false;
    }
    out += "<path d=\"" + path + "\" fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + num(kW - kMarginR - 4) + "\" y=\"" +
           std::to_string(kMarginT + 14 * int(si)) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" + color +
           "\">" + esc(series[si].label) + "</text>\n";
  }
  return out + "</svg>\n";
}

std::string svg_scatter(const std::vector<double>& x, const std::vector<double>& y,
                        const std::string& title, const std::string& x_label,
                        const std::string& y_label) {
  if (x.size() != y.size()) throw ContractError("svg_scatter: x/y size mismatch");
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (double v : x) {
    x0 = std::min(x0, v);
    x1 = std::max(x1, v);
  }
  for (double v : y) {
    y0 = std::min(y0, v);
    y1 = std::max(y1, v);
  }
  if (x.empty() || x0 >= x1) x1 = x0 + 1;
  if (y.empty() || y0 >= y1) y1 = y0 + 1;
  Frame f{x0, x1, y0, y1, false};
  std::string out = svg_open(title);
  out += axes(f, x_label, y_label);
  for (size_t i = 0; i < x.size(); ++i) {
    out += "<circle cx=\"" + num(f.px(x[i])) + "\" cy=\"" + num(f.py(y[i])) +
           "\" r=\"2.5\" fill=\"#1f77b4\" fill-opacity=\"0.6\"/>\n";
  }
  return out + "</svg>\n";
}

std::string svg_histogram(const std::vector<long>& bins, double lo, double hi,
                          const std::string& title, const std::string& x_label) {
  long peak = 1;
  for (long b : bins) peak = std::max(peak, b);
  Frame f{lo, hi, 0.0, double(peak), false};
  std::string out = svg_open(title);
  out += axes(f, x_label, "count");
  const double width = (hi - lo) / double(bins.size());
  for (size_t i = 0; i < bins.size(); ++i) {
    const double bx0 = f.px(lo + double(i) * width);
    const double bx1 = f.px(lo + double(i + 1) * width);
    const double by = f.py(double(bins[i]));
    out += "<rect x=\"" + num(bx0) + "\" y=\"" + num(by) + "\" width=\"" + num(bx1 - bx0) +
           "\" height=\"" + num(double(kH - kMarginB) - by) + "\" fill=\"#1f77b4\"/>\n";
  }
  return out + "</svg>\n";
}

std::string svg_grouped_bars(const std::vector<std::string>& bucket_labels,
                             const std::vector<long>& first, const std::vector<long>& second,
                             const std::string& first_label, const std::string& second_label,
                             const std::string& title) {
  if (bucket_labels.size() != first.size() || first.size() != second.size()) {
    throw ContractError("svg_grouped_bars: size mismatch");
  }
  long peak = 1;
  for (size_t i = 0; i < first.size(); ++i) peak = std::max({peak, first[i], second[i]});
  Frame f{0.0, double(bucket_labels.size()), 0.0, double(peak), false};
  std::string out = svg_open(title);
  out += axes(f, "bucket", "count");
  const double slot = (kW - kMarginL - kMarginR) / double(std::max<size_t>(1, bucket_labels.size()));
  for (size_t i = 0; i < bucket_labels.size(); ++i) {
    const double x0 = kMarginL + double(i) * slot;
    const double by1 = f.py(double(first[i]));
    const double by2 = f.py(double(second[i]));
    out += "<rect x=\"" + num(x0 + slot * 0.15) + "\" y=\"" + num(by1) + "\" width=\"" +
           num(slot * 0.3) + "\" height=\"" + num(double(kH - kMarginB) - by1) +
           "\" fill=\"#ff7f0e\"/>\n";
    out += "<rect x=\"" + num(x0 + slot * 0.55) + "\" y=\"" + num(by2) + "\" width=\"" +
           num(slot * 0.3) + "\" height=\"" + num(double(kH - kMarginB) - by2) +
           "\" fill=\"#1f77b4\"/>\n";
    out += "<text x=\"" + num(x0 + slot * 0.5) + "\" y=\"" + num(kH - kMarginB + 16) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
           esc(bucket_labels[i]) + "</text>\n";
  }
  out += "<text x=\"" + num(kW - kMarginR - 4) + "\" y=\"" + std::to_string(kMarginT) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#ff7f0e\">" +
         esc(first_label) + "</text>\n";
  out += "<text x=\"" + num(kW - kMarginR - 4) + "\" y=\"" + std::to_string(kMarginT + 14) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#1f77b4\">" +
         esc(second_label) + "</text>\n";
  return out + "</svg>\n";
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("write_text_file: cannot write '" + path + "'");
  out << content;
}

}  // namespace embed2text
