#include "lisa/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "lisa/errors.hpp"
#include "lisa/image_io.hpp"

namespace lisa {

namespace {

using Rgb = std::array<double, 3>;

constexpr int kPlotW = 480;
constexpr int kPlotH = 320;
constexpr int kMargin = 32;

const std::string kSchemas =
    "expected one of: metrics CSV with columns step,total,l1,ang,sep; "
    "predictions CSV with columns yaw,pitch,error_deg; "
    "eval CSV with columns group,mean_deg (or variant,mean_deg)";

class Canvas {
 public:
  Canvas(int h, int w) : img_({3, h, w}, 1.0) {}

  void px(int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || y >= img_.dim(1) || x >= img_.dim(2)) return;
    for (int k = 0; k < 3; ++k) img_.at(k, y, x) = c[k];
  }
  void rect(int x0, int y0, int x1, int y1, const Rgb& c) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) px(x, y, c);
  }
  void line(double x0, double y0, double x1, double y1, const Rgb& c) {
    const int n = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int i = 0; i <= n; ++i) {
      const double t = static_cast<double>(i) / n;
      px(static_cast<int>(std::lround(x0 + t * (x1 - x0))),
         static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
    }
  }
  void axes() {
    const Rgb k{0.2, 0.2, 0.2};
    line(kMargin, kMargin, kMargin, kPlotH - kMargin, k);
    line(kMargin, kPlotH - kMargin, kPlotW - kMargin, kPlotH - kMargin, k);
  }
  const Tensor& image() const { return img_; }

 private:
  Tensor img_;
};

// Perceptually ordered ramp from dark blue through green to yellow.
Rgb ramp(double t) {
  static const Rgb stops[] = {{0.27, 0.00, 0.33}, {0.23, 0.32, 0.55}, {0.13, 0.57, 0.55},
                              {0.37, 0.79, 0.38}, {0.99, 0.91, 0.14}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  const double f = t - i;
  Rgb c;
  for (int k = 0; k < 3; ++k) c[k] = stops[i][k] * (1 - f) + stops[i + 1][k] * f;
  return c;
}

double to_number(const std::string& s, std::size_t record) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("non-numeric field '" + s + "'", record);
  }
}

std::vector<double> numeric_column(const CsvTable& t, int col, bool allow_null = false) {
  std::vector<double> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string& f = t.rows[r][static_cast<std::size_t>(col)];
    out.push_back(allow_null && f == "null" ? std::numeric_limits<double>::quiet_NaN()
                                            : to_number(f, r));
  }
  return out;
}

Tensor render_losses(const CsvTable& t) {
  const int step_col = t.column("step");
  const std::vector<double> steps = numeric_column(t, step_col);
  const char* names[] = {"total", "l1", "ang", "sep"};
  const Rgb colors[] = {{0.1, 0.1, 0.1}, {0.12, 0.47, 0.71}, {0.84, 0.15, 0.16}, {0.17, 0.63, 0.17}};
  std::vector<std::vector<double>> series;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const char* n : names) {
    series.push_back(numeric_column(t, t.column(n)));
    for (double v : series.back()) {
      if (v > 0 && std::isfinite(v)) {
        lo = std::min(lo, std::log10(v));
        hi = std::max(hi, std::log10(v));
      }
    }
  }
  Canvas c(kPlotH, kPlotW);
  c.axes();
  if (!std::isfinite(lo)) return c.image();
  if (hi - lo < 1e-9) hi = lo + 1.0;
  const double s0 = steps.front(), s1 = std::max(steps.back(), s0 + 1.0);
  auto sx = [&](double s) { return kMargin + (s - s0) / (s1 - s0) * (kPlotW - 2 * kMargin); };
  auto sy = [&](double v) {
    return kPlotH - kMargin - (std::log10(v) - lo) / (hi - lo) * (kPlotH - 2 * kMargin);
  };
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& v = series[k];
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (v[i - 1] > 0 && v[i] > 0) c.line(sx(steps[i - 1]), sy(v[i - 1]), sx(steps[i]), sy(v[i]), colors[k]);
    }
    c.rect(kPlotW - kMargin - 12, kMargin + 10 * static_cast<int>(k), kPlotW - kMargin,
           kMargin + 10 * static_cast<int>(k) + 6, colors[k]);
  }
  return c.image();
}

Tensor render_heatmap(const ErrorHeatmap& h) {
  constexpr int cell = 32;
  Canvas c(h.pitch_bins * cell, h.yaw_bins * cell + 24);
  double max_err = 0.0;
  for (const auto& k : h.cells) {
    if (k.count) max_err = std::max(max_err, k.mean_error_deg);
  }
  for (const auto& k : h.cells) {
    // Pitch grows upwards on screen.
    const int y0 = (h.pitch_bins - 1 - k.pitch_bin) * cell;
    const int x0 = k.yaw_bin * cell;
    const Rgb col = k.count ? ramp(max_err > 0 ? k.mean_error_deg / max_err : 0.0)
                            : Rgb{0.85, 0.85, 0.85};
    c.rect(x0, y0, x0 + cell - 1, y0 + cell - 1, col);
  }
  const int bar_x = h.yaw_bins * cell + 8;
  const int height = h.pitch_bins * cell;
  for (int y = 0; y < height; ++y) {
    c.rect(bar_x, y, bar_x + 12, y + 1, ramp(1.0 - static_cast<double>(y) / (height - 1)));
  }
  return c.image();
}

Tensor render_groups(const std::vector<std::pair<std::string, double>>& groups) {
  Canvas c(kPlotH, kPlotW);
  c.axes();
  double hi = 0.0;
  for (const auto& g : groups) {
    if (std::isfinite(g.second)) hi = std::max(hi, g.second);
  }
  if (hi <= 0.0) hi = 1.0;
  const int n = static_cast<int>(groups.size());
  const double slot = static_cast<double>(kPlotW - 2 * kMargin) / std::max(n, 1);
  for (int i = 0; i < n; ++i) {
    const double v = groups[static_cast<std::size_t>(i)].second;
    if (!std::isfinite(v)) continue;
    const int x0 = kMargin + static_cast<int>(i * slot + 0.15 * slot);
    const int x1 = kMargin + static_cast<int>((i + 1) * slot - 0.15 * slot);
    const int y1 = kPlotH - kMargin;
    const int y0 = y1 - static_cast<int>(v / hi * (kPlotH - 2 * kMargin));
    c.rect(x0, y0, x1, y1, ramp(0.15 + 0.7 * i / std::max(n - 1, 1)));
  }
  return c.image();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

int CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

CsvTable parse_csv(const std::string& text) {
  auto split = [](const std::string& line) {
    std::vector<std::string> f;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        f.push_back(cur);
        cur.clear();
      } else if (ch != '\r') {
        cur += ch;
      }
    }
    f.push_back(cur);
    return f;
  };
  std::istringstream is(text);
  std::string line;
  CsvTable t;
  while (std::getline(is, line) && line.find_first_not_of(" \t\r") == std::string::npos) {
  }
  if (line.find_first_not_of(" \t\r") == std::string::npos) throw InvalidArgument("CSV is empty");
  t.header = split(line);
  std::size_t record = 0;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto f = split(line);
    if (f.size() != t.header.size()) {
      throw ParseError("CSV row has " + std::to_string(f.size()) + " fields, header has " +
                           std::to_string(t.header.size()),
                       record);
    }
    t.rows.push_back(std::move(f));
    ++record;
  }
  return t;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_csv(ss.str());
}

ErrorHeatmap compute_error_heatmap(const std::vector<double>& yaw, const std::vector<double>& pitch,
                                   const std::vector<double>& error_deg, int yaw_bins,
                                   int pitch_bins) {
  if (yaw.empty() || yaw.size() != pitch.size() || yaw.size() != error_deg.size()) {
    throw InvalidArgument("heatmap needs equally sized, non-empty yaw/pitch/error columns");
  }
  if (yaw_bins < 1 || pitch_bins < 1) throw InvalidArgument("heatmap bin counts must be positive");
  ErrorHeatmap h;
  h.yaw_bins = yaw_bins;
  h.pitch_bins = pitch_bins;
  const auto [ymin, ymax] = std::minmax_element(yaw.begin(), yaw.end());
  const auto [pmin, pmax] = std::minmax_element(pitch.begin(), pitch.end());
  h.yaw_min = *ymin;
  h.yaw_max = *ymax;
  h.pitch_min = *pmin;
  h.pitch_max = *pmax;
  auto bin = [](double v, double lo, double hi, int n) {
    if (hi <= lo) return 0;
    return std::clamp(static_cast<int>(std::floor((v - lo) / (hi - lo) * n)), 0, n - 1);
  };
  std::vector<double> sum(static_cast<std::size_t>(yaw_bins * pitch_bins), 0.0);
  std::vector<std::size_t> cnt(sum.size(), 0);
  for (std::size_t i = 0; i < yaw.size(); ++i) {
    const int b = bin(pitch[i], h.pitch_min, h.pitch_max, pitch_bins) * yaw_bins +
                  bin(yaw[i], h.yaw_min, h.yaw_max, yaw_bins);
    sum[static_cast<std::size_t>(b)] += error_deg[i];
    ++cnt[static_cast<std::size_t>(b)];
  }
  const double dy = (h.yaw_max - h.yaw_min) / yaw_bins;
  const double dp = (h.pitch_max - h.pitch_min) / pitch_bins;
  for (int p = 0; p < pitch_bins; ++p) {
    for (int y = 0; y < yaw_bins; ++y) {
      const std::size_t k = static_cast<std::size_t>(p * yaw_bins + y);
      HeatmapCell c;
      c.yaw_bin = y;
      c.pitch_bin = p;
      c.yaw_lo = h.yaw_min + y * dy;
      c.yaw_hi = h.yaw_min + (y + 1) * dy;
      c.pitch_lo = h.pitch_min + p * dp;
      c.pitch_hi = h.pitch_min + (p + 1) * dp;
      c.count = cnt[k];
      c.mean_error_deg = cnt[k] ? sum[k] / static_cast<double>(cnt[k])
                                : std::numeric_limits<double>::quiet_NaN();
      h.cells.push_back(c);
    }
  }
  return h;
}

std::string heatmap_csv(const ErrorHeatmap& h) {
  std::string out = "yaw_bin,pitch_bin,yaw_lo,yaw_hi,pitch_lo,pitch_hi,count,mean_error_deg\n";
  char buf[256];
  for (const auto& c : h.cells) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g,%zu,", c.yaw_bin, c.pitch_bin,
                  c.yaw_lo, c.yaw_hi, c.pitch_lo, c.pitch_hi, c.count);
    out += buf;
    if (c.count) {
      std::snprintf(buf, sizeof buf, "%.17g", c.mean_error_deg);
      out += buf;
    } else {
      out += "null";
    }
    out += "\n";
  }
  return out;
}

std::vector<std::filesystem::path> plot_csv(const std::filesystem::path& input,
                                            const std::filesystem::path& out_dir,
                                            const std::string& run_id) {
  const CsvTable t = read_csv(input);
  if (t.rows.empty()) throw InvalidArgument(input.string() + " has a header but no rows");

  auto has = [&](std::initializer_list<const char*> cols) {
    for (const char* c : cols) {
      if (t.column(c) < 0) return false;
    }
    return true;
  };
  const bool is_metrics = has({"step", "total", "l1", "ang", "sep"});
  const bool is_preds = has({"yaw", "pitch", "error_deg"});
  const int name_col = t.column("group") >= 0 ? t.column("group") : t.column("variant");
  const bool is_groups = name_col >= 0 && has({"mean_deg"});
  if (!is_metrics && !is_preds && !is_groups) {
    throw InvalidArgument(input.string() + ": unrecognized columns; " + kSchemas);
  }

  // Render everything before touching the file system.
  std::vector<std::pair<std::filesystem::path, Tensor>> images;
  std::vector<std::pair<std::filesystem::path, std::string>> texts;
  if (is_metrics) images.emplace_back(out_dir / (run_id + "_loss.png"), render_losses(t));
  if (is_preds) {
    const ErrorHeatmap h =
        compute_error_heatmap(numeric_column(t, t.column("yaw")), numeric_column(t, t.column("pitch")),
                              numeric_column(t, t.column("error_deg")));
    images.emplace_back(out_dir / (run_id + "_heatmap.png"), render_heatmap(h));
    texts.emplace_back(out_dir / (run_id + "_heatmap.csv"), heatmap_csv(h));
  }
  if (is_groups) {
    // Rows sharing a name (e.g. several seeds) are averaged.
    const auto means = numeric_column(t, t.column("mean_deg"), true);
    std::vector<std::pair<std::string, double>> groups;
    std::map<std::string, std::pair<double, int>> acc;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const std::string& name = t.rows[r][static_cast<std::size_t>(name_col)];
      if (!acc.count(name)) groups.emplace_back(name, 0.0);
      auto& a = acc[name];
      if (std::isfinite(means[r])) {
        a.first += means[r];
        ++a.second;
      }
    }
    for (auto& g : groups) {
      const auto& a = acc[g.first];
      g.second = a.second ? a.first / a.second : std::numeric_limits<double>::quiet_NaN();
    }
    images.emplace_back(out_dir / (run_id + "_groups.png"), render_groups(groups));
  }

  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& [path, img] : images) {
    write_png(path, img, 8);
    written.push_back(path);
  }
  for (const auto& [path, text] : texts) {
    write_text(path, text);
    written.push_back(path);
  }
  return written;
}

}  // namespace lisa
