#include "critcase/critical.hpp"

#include <algorithm>
#include <cmath>
#include <atomic>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

namespace critcase {
namespace {

constexpr const char* kStage = "critical";
constexpr std::size_t kSubsetSeedCap = 256;

double dist2(const Coord& a, const Coord& b) {
  const double dv = a.v - b.v;
  const double dt = a.t - b.t;
  return dv * dv + dt * dt;
}

std::size_t nearest(const Coord& p, std::span<const Coord> centres) {
  std::size_t best = 0;
  double best_d = dist2(p, centres[0]);
  for (std::size_t j = 1; j < centres.size(); ++j) {
    const double d = dist2(p, centres[j]);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

struct Run {
  std::vector<Coord> centres;
  std::vector<std::size_t> assignment;
  double sse = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> trace;
};

double total_sse(std::span<const Coord> pts, std::span<const Coord> centres, std::span<const std::size_t> assign) {
  double s = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) s += dist2(pts[i], centres[assign[i]]);
  return s;
}

void recompute_means(std::span<const Coord> pts, std::span<const std::size_t> assign, std::vector<Coord>& centres,
                     std::vector<std::size_t>& counts) {
  const std::size_t k = centres.size();
  std::vector<Coord> sums(k);
  counts.assign(k, 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    sums[assign[i]].v += pts[i].v;
    sums[assign[i]].t += pts[i].t;
    ++counts[assign[i]];
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] == 0) continue;
    centres[j] = {sums[j].v / static_cast<double>(counts[j]), sums[j].t / static_cast<double>(counts[j])};
  }
}

// Lloyd iterations from `centres` until no assignment changes. Appends to
// `run` so that transfer passes can resume it.
void lloyd(std::span<const Coord> pts, std::vector<Coord>& centres, std::size_t max_iter, Run& run) {
  const std::size_t n = pts.size();
  const std::size_t k = centres.size();
  std::vector<std::size_t> counts;
  run.converged = false;
  while (run.iterations < max_iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = nearest(pts[i], centres);
      if (j != run.assignment[i]) {
        run.assignment[i] = j;
        changed = true;
      }
    }
    run.trace.push_back(total_sse(pts, centres, run.assignment));
    ++run.iterations;
    if (!changed) {
      run.converged = true;
      return;
    }
    recompute_means(pts, run.assignment, centres, counts);
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      // Re-seed an empty cluster at the point farthest from its own centre.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = dist2(pts[i], centres[run.assignment[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --counts[run.assignment[far]];
      run.assignment[far] = j;
      counts[j] = 1;
      centres[j] = pts[far];
    }
  }
}

// One pass of single-point transfers: a point leaves its cluster when the
// exact SSE change n_b/(n_b+1) d_b - n_a/(n_a-1) d_a is negative. Returns
// whether anything moved; centres are exact means afterwards.
bool transfer_pass(std::span<const Coord> pts, std::vector<Coord>& centres, std::vector<std::size_t>& assign) {
  const std::size_t k = centres.size();
  std::vector<std::size_t> counts;
  recompute_means(pts, assign, centres, counts);
  const double tol = 1e-12 * (1.0 + total_sse(pts, centres, assign));
  bool moved = false;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::size_t a = assign[i];
    if (counts[a] < 2) continue;
    const double na = static_cast<double>(counts[a]);
    const double leave = na / (na - 1.0) * dist2(pts[i], centres[a]);
    std::size_t best = a;
    double best_delta = -tol;
    for (std::size_t b = 0; b < k; ++b) {
      if (b == a) continue;
      const double nb = static_cast<double>(counts[b]);
      const double delta = nb / (nb + 1.0) * dist2(pts[i], centres[b]) - leave;
      if (delta < best_delta) {
        best_delta = delta;
        best = b;
      }
    }
    if (best == a) continue;
    const double nb = static_cast<double>(counts[best]);
    centres[a] = {(na * centres[a].v - pts[i].v) / (na - 1.0), (na * centres[a].t - pts[i].t) / (na - 1.0)};
    centres[best] = {(nb * centres[best].v + pts[i].v) / (nb + 1.0), (nb * centres[best].t + pts[i].t) / (nb + 1.0)};
    --counts[a];
    ++counts[best];
    assign[i] = best;
    moved = true;
  }
  recompute_means(pts, assign, centres, counts);
  return moved;
}

Run cluster_run(std::span<const Coord> pts, std::vector<Coord> centres, std::size_t max_iter) {
  Run run;
  run.assignment.assign(pts.size(), std::numeric_limits<std::size_t>::max());
  lloyd(pts, centres, max_iter, run);
  while (run.converged && run.iterations < max_iter) {
    if (!transfer_pass(pts, centres, run.assignment)) break;
    run.trace.push_back(total_sse(pts, centres, run.assignment));
    ++run.iterations;
    lloyd(pts, centres, max_iter, run);
  }
  std::vector<std::size_t> counts;
  recompute_means(pts, run.assignment, centres, counts);
  run.centres = std::move(centres);
  run.sse = total_sse(pts, run.centres, run.assignment);
  return run;
}

std::vector<Coord> farthest_point_seeding(std::span<const Coord> pts, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Coord> centres;
  centres.push_back(pts[static_cast<std::size_t>(rng() % pts.size())]);
  std::vector<double> d(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) d[i] = dist2(pts[i], centres[0]);
  while (centres.size() < k) {
    const auto far = static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
    centres.push_back(pts[far]);
    for (std::size_t i = 0; i < pts.size(); ++i) d[i] = std::min(d[i], dist2(pts[i], centres.back()));
  }
  return centres;
}

// Every k-subset of the distinct points, in lexicographic order, when there
// are at most `cap` of them; empty otherwise.
std::vector<std::vector<Coord>> subset_seeds(std::span<const Coord> pts, std::size_t k, std::size_t cap) {
  std::vector<std::pair<double, double>> xy;
  for (const auto& p : pts) xy.emplace_back(p.v, p.t);
  std::sort(xy.begin(), xy.end());
  xy.erase(std::unique(xy.begin(), xy.end()), xy.end());
  const std::size_t m = xy.size();
  double count = 1.0;
  for (std::size_t i = 0; i < k; ++i) count = count * static_cast<double>(m - i) / static_cast<double>(i + 1);
  std::vector<std::vector<Coord>> out;
  if (count > static_cast<double>(cap)) return out;
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  while (true) {
    std::vector<Coord> c;
    for (std::size_t i : idx) c.push_back({xy[i].first, xy[i].second});
    out.push_back(std::move(c));
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == m - k + i - 1) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  return out;
}

std::vector<Coord> coords_of(std::span<const Point2D> points) {
  std::vector<Coord> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = {points[i].v_norm, points[i].t_norm};
  return out;
}

double normalize_axis(double x, double lo, double hi) { return hi > lo ? (x - lo) / (hi - lo) : 0.5; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(master ^ h);
}

TailSelection select_tail(std::span<const NodeId> nodes, const MeasurementDataset& ds, double k_tail,
                          std::size_t group_id) {
  std::vector<double> values;
  for (std::size_t t = 0; t < ds.time_count(); ++t) {
    for (NodeId n : nodes) {
      if (ds.voltages.present(t, n)) values.push_back(ds.voltages.value(t, n));
    }
  }
  if (values.size() < kMinTailSamples) {
    throw Error(ErrorKind::stage, kStage,
                "group " + std::to_string(group_id) + " has " + std::to_string(values.size()) +
                    " voltage samples, tail selection needs at least " + std::to_string(kMinTailSamples));
  }
  TailSelection tail;
  tail.group_id = group_id;
  tail.k_tail = k_tail;
  tail.fit = fit_gaussian(values);
  tail.threshold = tail.fit.mu + k_tail * tail.fit.sigma;
  std::vector<NodeId> sorted(nodes.begin(), nodes.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t t = 0; t < ds.time_count(); ++t) {
    for (NodeId n : sorted) {
      if (ds.voltages.present(t, n) && ds.voltages.value(t, n) > tail.threshold) {
        tail.candidates.push_back({n, t, ds.voltages.value(t, n)});
      }
    }
  }
  return tail;
}

double Scale::to_volts(double v_norm) const { return v_hi > v_lo ? v_lo + v_norm * (v_hi - v_lo) : v_lo; }
double Scale::to_minutes(double t_norm) const { return t_hi > t_lo ? t_lo + t_norm * (t_hi - t_lo) : t_lo; }

NormalizedCandidates normalize_candidates(const TailSelection& tail, const MeasurementDataset& ds) {
  NormalizedCandidates out;
  if (tail.candidates.empty()) return out;
  Scale& s = out.scale;
  s.v_lo = s.t_lo = std::numeric_limits<double>::infinity();
  s.v_hi = s.t_hi = -std::numeric_limits<double>::infinity();
  std::vector<double> minutes(tail.candidates.size());
  for (std::size_t i = 0; i < tail.candidates.size(); ++i) {
    const auto& c = tail.candidates[i];
    minutes[i] = time_of_day_minutes(c.t_index, ds);
    s.v_lo = std::min(s.v_lo, c.value);
    s.v_hi = std::max(s.v_hi, c.value);
    s.t_lo = std::min(s.t_lo, minutes[i]);
    s.t_hi = std::max(s.t_hi, minutes[i]);
  }
  out.points.reserve(tail.candidates.size());
  for (std::size_t i = 0; i < tail.candidates.size(); ++i) {
    const auto& c = tail.candidates[i];
    out.points.push_back({normalize_axis(c.value, s.v_lo, s.v_hi), normalize_axis(minutes[i], s.t_lo, s.t_hi), c,
                          minutes[i]});
  }
  return out;
}

std::size_t distinct_point_count(std::span<const Point2D> points) {
  std::vector<std::pair<double, double>> xy;
  xy.reserve(points.size());
  for (const auto& p : points) xy.emplace_back(p.v_norm, p.t_norm);
  std::sort(xy.begin(), xy.end());
  return static_cast<std::size_t>(std::unique(xy.begin(), xy.end()) - xy.begin());
}

std::vector<std::size_t> ClusterModel::cluster_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t a : assignment) ++sizes[a];
  return sizes;
}

ClusterModel kmeans(std::span<const Point2D> points, std::size_t k, std::uint64_t seed, const KMeansOptions& options,
                    const Scale& scale, std::span<const Coord> warm_start) {
  if (k == 0) throw Error(ErrorKind::stage, kStage, "k must be at least 1");
  const std::size_t distinct = distinct_point_count(points);
  if (k > distinct) {
    throw Error(ErrorKind::stage, kStage,
                "k = " + std::to_string(k) + " exceeds the " + std::to_string(distinct) + " distinct points");
  }
  if (!warm_start.empty() && warm_start.size() != k) {
    throw Error(ErrorKind::stage, kStage, "warm start must provide exactly k centres");
  }
  const auto pts = coords_of(points);
  const std::size_t restarts = std::max<std::size_t>(options.restarts, 1);

  std::optional<Run> best;
  std::size_t best_index = 0;
  const auto consider = [&](Run run, std::size_t index) {
    if (!best || run.sse < best->sse) {
      best = std::move(run);
      best_index = index;
    }
  };
  for (std::size_t r = 0; r < restarts; ++r) {
    consider(cluster_run(pts, farthest_point_seeding(pts, k, seed + r), options.max_iter), r);
  }
  if (!warm_start.empty()) {
    consider(cluster_run(pts, std::vector<Coord>(warm_start.begin(), warm_start.end()), options.max_iter), restarts);
  }
  // Tiny inputs: also start from every k-subset of the points.
  for (auto& start : subset_seeds(pts, k, kSubsetSeedCap)) {
    consider(cluster_run(pts, std::move(start), options.max_iter), restarts + 1);
  }

  ClusterModel model;
  model.k = k;
  model.seed = seed;
  model.restarts = restarts;
  model.best_restart = best_index;
  model.sse = best->sse;
  model.iterations = best->iterations;
  model.converged = best->converged;
  model.sse_trace = std::move(best->trace);
  model.assignment = std::move(best->assignment);
  for (const auto& c : best->centres) model.centroids.push_back({c.v, c.t, scale.to_volts(c.v), scale.to_minutes(c.t)});
  return model;
}

std::vector<double> knee_distances(std::span<const double> sse_by_k) {
  const std::size_t kk = sse_by_k.size();
  std::vector<double> out(kk, 0.0);
  if (kk < 3 || !(sse_by_k[0] > 0.0)) return out;
  const double floor = sse_by_k[0] * 1e-12;
  const double y_first = std::log(std::max(sse_by_k[0], floor));
  const double y_last = std::log(std::max(sse_by_k[kk - 1], floor));
  if (!(y_first > y_last)) return out;
  const double x_last = std::log(static_cast<double>(kk));
  for (std::size_t i = 1; i + 1 < kk; ++i) {
    const double x = std::log(static_cast<double>(i + 1)) / x_last;
    const double y = (std::log(std::max(sse_by_k[i], floor)) - y_last) / (y_first - y_last);
    // Chord runs from (0, 1) to (1, 0); positive means below it.
    out[i] = (1.0 - x - y) / std::sqrt(2.0);
  }
  return out;
}

ElbowCurve elbow_select(std::span<const Point2D> points, std::uint64_t seed, const ElbowOptions& options,
                        const Scale& scale) {
  const std::size_t distinct = distinct_point_count(points);
  if (distinct < 2) throw Error(ErrorKind::stage, kStage, "elbow selection needs at least 2 distinct points");
  if (options.k_max < 1) throw Error(ErrorKind::validation, kStage, "k_max must be at least 1");
  const std::size_t kk = std::min(options.k_max, distinct);
  const auto pts = coords_of(points);

  ElbowCurve curve;
  for (std::size_t k = 1; k <= kk; ++k) {
    std::vector<Coord> warm;
    if (k > 1) {
      const auto& prev = curve.models.back();
      for (const auto& c : prev.centroids) warm.push_back({c.v_norm, c.t_norm});
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const double d = dist2(pts[i], warm[nearest(pts[i], warm)]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      warm.push_back(pts[far]);
    }
    auto model = kmeans(points, k, derive_seed(seed, "k=" + std::to_string(k)), options.kmeans, scale, warm);
    curve.sse_by_k.push_back(model.sse);
    curve.models.push_back(std::move(model));
  }

  const auto dist = knee_distances(curve.sse_by_k);
  const auto best = std::max_element(dist.begin(), dist.end());
  curve.knee_k = static_cast<std::size_t>(best - dist.begin()) + 1;
  curve.knee_distance = *best;
  if (curve.knee_distance >= options.knee_floor && curve.knee_distance > 0.0) {
    curve.rule = ElbowRule::knee;
    curve.chosen_k = curve.knee_k;
  } else {
    curve.rule = ElbowRule::sse_ratio;
    curve.chosen_k = kk;
    for (std::size_t k = 1; k <= kk; ++k) {
      if (curve.sse_by_k[k - 1] <= options.ratio * curve.sse_by_k[0]) {
        curve.chosen_k = k;
        break;
      }
    }
  }
  return curve;
}

std::vector<bool> flag_daylight(const ClusterModel& model, const DaylightWindow& window) {
  if (!(window.start_min >= 0.0 && window.end_min < kMinutesPerDay && window.start_min < window.end_min)) {
    throw Error(ErrorKind::validation, kStage, "daylight window must satisfy 0 <= start < end < 1440");
  }
  std::vector<bool> out;
  out.reserve(model.centroids.size());
  for (const auto& c : model.centroids) out.push_back(c.minutes >= window.start_min && c.minutes <= window.end_min);
  return out;
}

std::vector<std::vector<SampleRef>> pick_representatives(const ClusterModel& model, std::span<const Point2D> points,
                                                         const std::vector<bool>& daylight, std::size_t per_cluster,
                                                         RepresentativeMode mode, bool include_non_daylight) {
  if (per_cluster < 1) throw Error(ErrorKind::validation, kStage, "per_cluster must be at least 1");
  if (points.size() != model.assignment.size() || daylight.size() != model.k) {
    throw Error(ErrorKind::stage, kStage, "model, points and daylight flags do not belong together");
  }
  std::vector<std::vector<std::size_t>> members(model.k);
  for (std::size_t i = 0; i < points.size(); ++i) members[model.assignment[i]].push_back(i);

  std::vector<std::vector<SampleRef>> out(model.k);
  for (std::size_t c = 0; c < model.k; ++c) {
    if (!daylight[c] && !include_non_daylight) continue;
    auto& idx = members[c];
    const Coord centre{model.centroids[c].v_norm, model.centroids[c].t_norm};
    const auto tie = [&](std::size_t a, std::size_t b) {
      const auto& oa = points[a].origin;
      const auto& ob = points[b].origin;
      if (oa.t_index != ob.t_index) return oa.t_index < ob.t_index;
      return oa.node < ob.node;
    };
    if (mode == RepresentativeMode::max_voltage) {
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (points[a].origin.value != points[b].origin.value) return points[a].origin.value > points[b].origin.value;
        return tie(a, b);
      });
    } else {
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double da = dist2({points[a].v_norm, points[a].t_norm}, centre);
        const double db = dist2({points[b].v_norm, points[b].t_norm}, centre);
        if (da != db) return da < db;
        return tie(a, b);
      });
    }
    const std::size_t take = std::min(per_cluster, idx.size());
    for (std::size_t i = 0; i < take; ++i) out[c].push_back(points[idx[i]].origin);
  }
  return out;
}

GroupReport analyze_group(std::size_t group_id, const NodeGroup& group, const MeasurementDataset& ds,
                          const CriticalOptions& options) {
  GroupReport report;
  report.group_id = group_id;
  report.group = group;
  report.tail = select_tail(group.nodes, ds, options.k_tail, group_id);
  report.candidates = normalize_candidates(report.tail, ds);
  const auto& points = report.candidates.points;
  if (points.empty()) {
    report.notes.push_back("no samples above the tail threshold; clustering skipped");
    return report;
  }
  const std::uint64_t seed = derive_seed(options.seed, "critical/group/" + std::to_string(group_id));
  if (distinct_point_count(points) < 2) {
    report.notes.push_back("single distinct candidate; elbow skipped, one cluster");
    report.model = kmeans(points, 1, seed, options.elbow.kmeans, report.candidates.scale);
  } else {
    report.elbow = elbow_select(points, seed, options.elbow, report.candidates.scale);
    report.model = report.elbow->models[report.elbow->chosen_k - 1];
  }
  const auto daylight = flag_daylight(*report.model, options.daylight);
  const auto reps = pick_representatives(*report.model, points, daylight, options.per_cluster, options.mode,
                                         options.include_non_daylight);
  const auto sizes = report.model->cluster_sizes();
  for (std::size_t c = 0; c < report.model->k; ++c) {
    report.clusters.push_back({sizes[c], daylight[c], reps[c]});
    if (!daylight[c]) {
      report.notes.push_back("cluster " + std::to_string(c + 1) + " centred at " +
                             format_clock(report.model->centroids[c].minutes) +
                             " lies outside the daylight window");
    }
  }
  return report;
}

CriticalCaseReport analyze_groups(const GroupPartition& partition, const MeasurementDataset& ds,
                                  const CriticalOptions& options, std::size_t threads) {
  const std::size_t n = partition.groups.size();
  if (threads == 0) threads = std::max<std::size_t>(std::thread::hardware_concurrency(), 1);
  CriticalCaseReport report;
  report.groups.resize(n);
  std::vector<std::exception_ptr> errors(n);
  const auto work = [&](std::size_t g) {
    try {
      report.groups[g] = analyze_group(g + 1, partition.groups[g], ds, options);
    } catch (...) {
      errors[g] = std::current_exception();
    }
  };
  if (threads <= 1 || n <= 1) {
    for (std::size_t g = 0; g < n; ++g) work(g);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(threads, n); ++w) {
      pool.emplace_back([&] {
        for (std::size_t g = next++; g < n; g = next++) work(g);
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return report;
}

std::string to_string(ElbowRule r) { return r == ElbowRule::knee ? "knee" : "sse-ratio"; }
std::string to_string(RepresentativeMode m) {
  return m == RepresentativeMode::max_voltage ? "max-voltage" : "nearest-centroid";
}
RepresentativeMode representative_mode_from_string(const std::string& s) {
  if (s == "max-voltage") return RepresentativeMode::max_voltage;
  if (s == "nearest-centroid") return RepresentativeMode::nearest_centroid;
  throw Error(ErrorKind::validation, "config", "unknown representative mode '" + s + "'");
}

}  // namespace critcase
