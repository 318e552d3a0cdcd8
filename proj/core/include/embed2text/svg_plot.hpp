#pragma once

#include <string>
#include <vector>

namespace embed2text {

// Minimal SVG emitters for run artifacts. No styling knobs: fixed size, fixed
// palette, log-x support for the noise sweep.

struct SvgSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::string svg_line_chart(const std::vector<SvgSeries>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label,
                           bool log_x = false);

std::string svg_scatter(const std::vector<double>& x, const std::vector<double>& y,
                        const std::string& title, const std::string& x_label,
                        const std::string& y_label);

std::string svg_histogram(const std::vector<long>& bins, double lo, double hi,
                          const std::string& title, const std::string& x_label);

// Paired bars per bucket (used by the word-frequency accuracy plot).
std::string svg_grouped_bars(const std::vector<std::string>& bucket_labels,
                             const std::vector<long>& first, const std::vector<long>& second,
                             const std::string& first_label, const std::string& second_label,
                             const std::string& title);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace embed2text
