#include "critcase/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace critcase {
namespace {

constexpr const char* kStage = "plots";
constexpr std::size_t kMaxQQPoints = 2000;
constexpr std::size_t kHistogramBins = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, kStage, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::io, kStage, "write failure on " + path.string());
}

/// Fixed-size SVG chart with linear axes in data coordinates.
class Chart {
 public:
  Chart(const std::string& title, const std::string& x_label, const std::string& y_label, double x_lo, double x_hi,
        double y_lo, double y_hi)
      : x_lo_(x_lo), x_hi_(x_hi > x_lo ? x_hi : x_lo + 1.0), y_lo_(y_lo), y_hi_(y_hi > y_lo ? y_hi : y_lo + 1.0) {
    body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
          << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    body_ << "<style>text{font-family:sans-serif;font-size:11px}.centroid{stroke:#000;stroke-width:2.5;fill:none}";
    for (std::size_t i = 0; i < std::size(kPalette); ++i) body_ << ".c" << i << "{fill:" << kPalette[i] << '}';
    body_ << "</style>\n";
    body_ << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    body_ << "<text x=\"" << kWidth / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << title
          << "</text>\n";
    axes(x_label, y_label);
  }

  double px(double x) const { return kLeft + (x - x_lo_) / (x_hi_ - x_lo_) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y_lo_) / (y_hi_ - y_lo_) * (kHeight - kTop - kBottom); }

  void dot(double x, double y, double r, const std::string& cls) {
    body_ << "<circle class=\"" << cls << "\" cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"" << r
          << "\"/>\n";
  }
  void dot_fill(double x, double y, double r, const std::string& fill, const std::string& cls) {
    body_ << "<circle class=\"" << cls << "\" cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"" << r
          << "\" fill=\"" << fill << "\" stroke=\"#000\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke, const std::string& cls,
            bool dashed = false) {
    body_ << "<line class=\"" << cls << "\" x1=\"" << fmt(px(x1)) << "\" y1=\"" << fmt(py(y1)) << "\" x2=\""
          << fmt(px(x2)) << "\" y2=\"" << fmt(py(y2)) << "\" stroke=\"" << stroke << "\" stroke-width=\"1.5\""
          << (dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& xy, const std::string& stroke, const std::string& cls) {
    body_ << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : xy) body_ << fmt(px(x)) << ',' << fmt(py(y)) << ' ';
    body_ << "\"/>\n";
  }
  void bar(double x0, double x1, double height, const std::string& fill) {
    const double top = py(height);
    body_ << "<rect x=\"" << fmt(px(x0)) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(px(x1) - px(x0))
          << "\" height=\"" << fmt(py(y_lo_) - top) << "\" fill=\"" << fill << "\"/>\n";
  }
  void cross(double x, double y) {
    const double cx = px(x), cy = py(y);
    body_ << "<path class=\"centroid\" d=\"M" << fmt(cx - 7) << ' ' << fmt(cy) << 'H' << fmt(cx + 7) << 'M'
          << fmt(cx) << ' ' << fmt(cy - 7) << 'V' << fmt(cy + 7) << "\"/>\n";
  }
  void label(double x, double y, const std::string& text) {
    body_ << "<text x=\"" << fmt(px(x) + 6) << "\" y=\"" << fmt(py(y) - 6) << "\">" << text << "</text>\n";
  }

  std::string finish() {
    body_ << "</svg>\n";
    return body_.str();
  }

 private:
  static constexpr int kWidth = 640;
  static constexpr int kHeight = 420;
  static constexpr int kLeft = 70;
  static constexpr int kRight = 20;
  static constexpr int kTop = 30;
  static constexpr int kBottom = 45;

  void axes(const std::string& x_label, const std::string& y_label) {
    const double x0 = kLeft, y0 = kHeight - kBottom;
    body_ << "<path d=\"M" << x0 << ' ' << kTop << "V" << y0 << "H" << kWidth - kRight
          << "\" stroke=\"#000\" fill=\"none\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x_lo_ + (x_hi_ - x_lo_) * i / 4.0;
      const double yv = y_lo_ + (y_hi_ - y_lo_) * i / 4.0;
      body_ << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << y0 + 15 << "\" text-anchor=\"middle\">" << fmt_tick(xv)
            << "</text>\n";
      body_ << "<text x=\"" << x0 - 5 << "\" y=\"" << fmt(py(yv) + 4) << "\" text-anchor=\"end\">" << fmt_tick(yv)
            << "</text>\n";
    }
    body_ << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 8
          << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
    body_ << "<text transform=\"translate(14," << (kTop + y0) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
          << y_label << "</text>\n";
  }

  double x_lo_, x_hi_, y_lo_, y_hi_;
  std::ostringstream body_;
};

std::pair<double, double> padded(double lo, double hi) {
  const double pad = hi > lo ? 0.05 * (hi - lo) : 1.0;
  return {lo - pad, hi + pad};
}

std::string qq_svg(const std::vector<QQPoint>& qq, const std::string& title) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& p : qq) {
    lo = std::min({lo, p.theoretical, p.empirical});
    hi = std::max({hi, p.theoretical, p.empirical});
  }
  const auto [a, b] = padded(lo, hi);
  Chart chart(title, "theoretical quantile (V)", "sample quantile (V)", a, b, a, b);
  chart.line(a, a, b, b, "#d62728", "identity");
  for (const auto& p : qq) chart.dot(p.theoretical, p.empirical, 2.0, "c0");
  return chart.finish();
}

std::string qq_csv(const std::vector<QQPoint>& qq) {
  std::ostringstream os;
  os << "theoretical_v,empirical_v\n";
  for (const auto& p : qq) os << format_double(p.theoretical) << ',' << format_double(p.empirical) << '\n';
  return os.str();
}

std::vector<double> group_voltages(const GroupReport& g, const MeasurementDataset& ds) {
  std::vector<double> values;
  for (std::size_t t = 0; t < ds.time_count(); ++t) {
    for (NodeId n : g.group.nodes) {
      if (ds.voltages.present(t, n)) values.push_back(ds.voltages.value(t, n));
    }
  }
  return values;
}

}  // namespace

std::vector<QQPoint> thin_qq(const std::vector<QQPoint>& points, std::size_t max_points) {
  if (points.size() <= max_points || max_points < 2) return points;
  std::vector<QQPoint> out;
  out.reserve(max_points);
  const double step = static_cast<double>(points.size() - 1) / static_cast<double>(max_points - 1);
  for (std::size_t i = 0; i < max_points; ++i) {
    out.push_back(points[static_cast<std::size_t>(std::llround(step * static_cast<double>(i)))]);
  }
  return out;
}

void emit_pooled_qq(const std::vector<double>& values, double k_sigma, const std::filesystem::path& svg_path,
                    const std::filesystem::path& csv_path) {
  const auto qq = thin_qq(qq_points(values), kMaxQQPoints);
  write_text(svg_path, qq_svg(qq, "QQ plot, pooled voltages (band mu +/- " + format_double(k_sigma) + " sigma)"));
  write_text(csv_path, qq_csv(qq));
}

std::vector<std::string> emit_plots(const GroupReport& g, const MeasurementDataset& ds, double sse_ratio,
                                    const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, kStage, "cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::string> written;
  const std::string gid = "group " + std::to_string(g.group_id);
  const auto values = group_voltages(g, ds);

  {
    const auto qq = thin_qq(qq_points(values), kMaxQQPoints);
    write_text(dir / "qq.svg", qq_svg(qq, "QQ plot, " + gid));
    write_text(dir / "qq.csv", qq_csv(qq));
    written.insert(written.end(), {"qq.svg", "qq.csv"});
  }

  {
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it;
    const double hi = *hi_it > lo ? *hi_it : lo + 1.0;
    const double width = (hi - lo) / kHistogramBins;
    std::vector<std::size_t> counts(kHistogramBins, 0);
    for (double v : values) {
      const auto b = std::min<std::size_t>(static_cast<std::size_t>((v - lo) / width), kHistogramBins - 1);
      ++counts[b];
    }
    const auto& fit = g.tail.fit;
    const auto density = [&](double x) {
      if (!(fit.sigma > 0.0)) return 0.0;
      const double z = (x - fit.mu) / fit.sigma;
      return static_cast<double>(values.size()) * width * std::exp(-0.5 * z * z) /
             (fit.sigma * std::sqrt(2.0 * std::numbers::pi));
    };
    double y_max = static_cast<double>(*std::max_element(counts.begin(), counts.end()));
    y_max = std::max(y_max, density(fit.mu));
    Chart chart("Voltage histogram and fitted Gaussian, " + gid, "voltage (V)", "samples", lo, hi, 0.0, 1.1 * y_max);
    std::ostringstream csv;
    csv << "bin_lo_v,bin_hi_v,count,gaussian_expected\n";
    for (std::size_t b = 0; b < kHistogramBins; ++b) {
      const double x0 = lo + width * static_cast<double>(b);
      chart.bar(x0, x0 + width, static_cast<double>(counts[b]), "#9ecae1");
      csv << format_double(x0) << ',' << format_double(x0 + width) << ',' << counts[b] << ','
          << format_double(density(x0 + width / 2)) << '\n';
    }
    std::vector<std::pair<double, double>> curve;
    for (int i = 0; i <= 200; ++i) {
      const double x = lo + (hi - lo) * i / 200.0;
      curve.emplace_back(x, density(x));
    }
    chart.polyline(curve, "#08519c", "gaussian");
    chart.line(g.tail.threshold, 0.0, g.tail.threshold, 1.05 * y_max, "#d62728", "tail-threshold", true);
    chart.label(g.tail.threshold, 1.0 * y_max, "mu + " + format_double(g.tail.k_tail) + " sigma");
    write_text(dir / "histogram.svg", chart.finish());
    write_text(dir / "histogram.csv", csv.str());
    written.insert(written.end(), {"histogram.svg", "histogram.csv"});
  }

  if (g.elbow) {
    const auto& e = *g.elbow;
    const double y_max = e.sse_by_k.front();
    Chart chart("Elbow, " + gid + " (rule: " + to_string(e.rule) + ")", "number of clusters k", "SSE", 1.0,
                static_cast<double>(std::max<std::size_t>(e.k_max(), 2)), 0.0, 1.05 * y_max);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t k = 1; k <= e.k_max(); ++k) pts.emplace_back(static_cast<double>(k), e.sse_by_k[k - 1]);
    chart.polyline(pts, "#1f77b4", "sse");
    for (const auto& [x, y] : pts) chart.dot(x, y, 3.0, "c0");
    if (e.rule == ElbowRule::sse_ratio) {
      const double guide = sse_ratio * e.sse_by_k.front();
      chart.line(1.0, guide, static_cast<double>(e.k_max()), guide, "#7f7f7f", "ratio-guide", true);
      chart.label(1.0, guide, format_double(sse_ratio) + " x SSE1");
    }
    chart.dot_fill(static_cast<double>(e.chosen_k), e.sse_by_k[e.chosen_k - 1], 6.0, "#d62728", "chosen-k");
    write_text(dir / "elbow.svg", chart.finish());
    written.push_back("elbow.svg");
  }

  if (g.model) {
    const auto& m = *g.model;
    const auto& pts = g.candidates.points;
    const auto& s = g.candidates.scale;
    const auto [t0, t1] = padded(s.t_lo, s.t_hi);
    const auto [v0, v1] = padded(s.v_lo, s.v_hi);
    Chart chart("K-means clusters, " + gid + " (k = " + std::to_string(m.k) + ")", "time of day (min)",
                "voltage (V)", t0, t1, v0, v1);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      chart.dot(pts[i].minutes, pts[i].origin.value, 1.8, "c" + std::to_string(m.assignment[i] % std::size(kPalette)));
    }
    for (std::size_t c = 0; c < m.k; ++c) {
      chart.cross(m.centroids[c].minutes, m.centroids[c].volts);
      chart.label(m.centroids[c].minutes, m.centroids[c].volts,
                  "C" + std::to_string(c + 1) + (g.clusters[c].daylight ? "" : " (after window)"));
    }
    write_text(dir / "clusters.svg", chart.finish());
    written.push_back("clusters.svg");
  }
  return written;
}

}  // namespace critcase
