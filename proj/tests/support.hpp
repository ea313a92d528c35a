// Fixture builders and independent reference implementations for the tests.
#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "critcase/core.hpp"
#include "critcase/critical.hpp"

namespace testsupport {

using critcase::MeasurementDataset;
using critcase::NodeId;

// 2017-01-05T00:00:00 as local seconds.
inline constexpr critcase::LocalSeconds kJan5 = 1483574400;

// Nodes labelled A, B, C... (single letters, so the sorted order is the id order).
inline MeasurementDataset make_dataset(std::size_t nodes, std::size_t times, double base_v = 6351.0,
                                       std::int64_t interval = 600, critcase::LocalSeconds start = kJan5) {
  MeasurementDataset ds;
  ds.v_base = 11000.0;
  ds.season_label = "test";
  for (std::size_t t = 0; t < times; ++t) ds.timestamps.push_back(start + static_cast<std::int64_t>(t) * interval);
  for (std::size_t n = 0; n < nodes; ++n) {
    ds.topology.nodes.push_back({std::string(1, static_cast<char>('A' + n)), false});
  }
  for (std::size_t n = 1; n < nodes; ++n) ds.topology.edges.push_back({n - 1, n});
  ds.voltages = critcase::SeriesMatrix(times, nodes);
  ds.currents = critcase::SeriesMatrix(times, nodes);
  for (std::size_t t = 0; t < times; ++t) {
    for (std::size_t n = 0; n < nodes; ++n) ds.voltages.set(t, n, base_v);
  }
  return ds;
}

// Pearson coefficient straight from the definition, in long double.
inline std::optional<double> brute_pearson(const std::vector<std::optional<double>>& x,
                                           const std::vector<std::optional<double>>& y) {
  std::vector<long double> a, b;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] && y[i]) {
      a.push_back(*x[i]);
      b.push_back(*y[i]);
    }
  }
  const long double n = static_cast<long double>(a.size());
  if (a.size() < 2) return std::nullopt;
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  long double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  cov /= n;
  const long double sa = std::sqrt(va / n), sb = std::sqrt(vb / n);
  if (sa == 0 || sb == 0) return std::nullopt;
  return static_cast<double>(cov / (sa * sb));
}

// Upper tail probability P(Z > z) of the standard normal.
inline double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

inline std::vector<critcase::Point2D> points_of(const std::vector<std::pair<double, double>>& xy) {
  std::vector<critcase::Point2D> out;
  for (std::size_t i = 0; i < xy.size(); ++i) {
    critcase::Point2D p;
    p.v_norm = xy[i].first;
    p.t_norm = xy[i].second;
    p.origin = {0, i, xy[i].first};
    out.push_back(p);
  }
  return out;
}

// Minimum SSE over every assignment of the points to k non-empty clusters.
inline double exhaustive_min_sse(const std::vector<critcase::Point2D>& p, std::size_t k) {
  const std::size_t n = p.size();
  std::vector<std::size_t> label(n, 0);
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == n) {
      std::vector<long double> sv(k, 0), st(k, 0);
      std::vector<std::size_t> cnt(k, 0);
      for (std::size_t j = 0; j < n; ++j) {
        sv[label[j]] += p[j].v_norm;
        st[label[j]] += p[j].t_norm;
        ++cnt[label[j]];
      }
      for (std::size_t c = 0; c < k; ++c) {
        if (cnt[c] == 0) return;
      }
      long double s = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const long double dv = p[j].v_norm - sv[label[j]] / cnt[label[j]];
        const long double dt = p[j].t_norm - st[label[j]] / cnt[label[j]];
        s += dv * dv + dt * dt;
      }
      best = std::min(best, static_cast<double>(s));
      return;
    }
    for (std::size_t c = 0; c < k; ++c) {
      label[i] = c;
      rec(i + 1);
    }
  };
  rec(0);
  return best;
}

// Three tight blobs; labels[i] is the blob of point i.
inline std::vector<critcase::Point2D> three_blobs(std::uint64_t seed, double sd, std::size_t per_blob,
                                                  std::vector<std::size_t>* labels = nullptr) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  const double c[3][2] = {{0.1, 0.1}, {0.5, 0.9}, {0.9, 0.2}};
  std::vector<std::pair<double, double>> xy;
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < per_blob; ++i) {
      xy.emplace_back(c[b][0] + g(rng), c[b][1] + g(rng));
      if (labels) labels->push_back(b);
    }
  }
  return points_of(xy);
}

inline std::vector<critcase::Point2D> uniform_scatter(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<double, double>> xy;
  for (std::size_t i = 0; i < n; ++i) xy.emplace_back(u(rng), u(rng));
  return points_of(xy);
}

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("critcase_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testsupport
