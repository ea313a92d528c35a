#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "critcase/bad_data.hpp"
#include "critcase/core.hpp"
#include "critcase/grouping.hpp"

namespace critcase {

// ---------------------------------------------------------------------------
// Upper-tail selection

struct TailSelection {
  std::size_t group_id = 0;
  GaussianFit fit;
  double k_tail = 2.0;
  double threshold = 0.0;  // mu + k_tail * sigma
  /// Samples strictly above the threshold, sorted by (t_index, node).
  std::vector<SampleRef> candidates;
};

inline constexpr std::size_t kMinTailSamples = 50;

/// Fits one Gaussian to every present voltage of the group's nodes and keeps
/// the samples above mu + k_tail * sigma.
TailSelection select_tail(std::span<const NodeId> nodes, const MeasurementDataset& dataset,
                          double k_tail = 2.0, std::size_t group_id = 0);

// ---------------------------------------------------------------------------
// Normalised (voltage, time-of-day) points

/// Min-max scaling of both axes onto [0, 1]. A degenerate axis maps to 0.5.
struct Scale {
  double v_lo = 0.0;
  double v_hi = 1.0;
  double t_lo = 0.0;
  double t_hi = 1.0;

  double to_volts(double v_norm) const;
  double to_minutes(double t_norm) const;
};

struct Point2D {
  double v_norm = 0.0;
  double t_norm = 0.0;
  SampleRef origin;
  double minutes = 0.0;  // time of day of origin
};

struct NormalizedCandidates {
  std::vector<Point2D> points;
  Scale scale;
};

NormalizedCandidates normalize_candidates(const TailSelection& tail, const MeasurementDataset& dataset);

std::size_t distinct_point_count(std::span<const Point2D> points);

// ---------------------------------------------------------------------------
// K-means

struct Coord {
  double v = 0.0;
  double t = 0.0;
};

struct Centroid {
  double v_norm = 0.0;
  double t_norm = 0.0;
  double volts = 0.0;
  double minutes = 0.0;
};

struct ClusterModel {
  std::size_t k = 0;
  std::vector<Centroid> centroids;
  std::vector<std::size_t> assignment;  // point index -> cluster index
  double sse = 0.0;                     // in normalised space
  std::size_t iterations = 0;
  bool converged = false;
  std::uint64_t seed = 0;
  std::size_t restarts = 0;
  /// restarts when the warm start won, restarts + 1 for a subset start.
  std::size_t best_restart = 0;
  /// SSE after every assignment step of the winning run.
  std::vector<double> sse_trace;

  std::vector<std::size_t> cluster_sizes() const;
};

struct KMeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iter = 300;
};

/// Lloyd's algorithm over normalised points, best of `restarts` runs. Each
/// converged run is polished with single-point transfers (a point moves when
/// that lowers the exact SSE) and Lloyd resumes until neither changes anything.
///
/// Run r starts from greedy farthest-point seeding whose first centre is
/// drawn from a generator seeded with seed + r. Distance ties go to the lowest
/// centroid index and an emptied cluster is re-seeded at the point farthest
/// from its own centroid. `warm_start`, when given, adds one more run from
/// exactly those k centres. When the distinct points have at most 256
/// k-subsets, every subset is tried as a start as well. Throws if k is 0 or
/// exceeds the number of distinct points.
ClusterModel kmeans(std::span<const Point2D> points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& options = {}, const Scale& scale = {},
                    std::span<const Coord> warm_start = {});

// ---------------------------------------------------------------------------
// Elbow selection

enum class ElbowRule { knee, sse_ratio };

struct ElbowOptions {
  std::size_t k_max = 10;
  double ratio = 0.3;
  double knee_floor = 0.1;
  KMeansOptions kmeans;
};

struct ElbowCurve {
  std::vector<double> sse_by_k;  // sse_by_k[k - 1]
  std::size_t chosen_k = 1;
  ElbowRule rule = ElbowRule::sse_ratio;
  std::size_t knee_k = 1;
  double knee_distance = 0.0;
  /// Winning model for each k, same indexing as sse_by_k.
  std::vector<ClusterModel> models;

  std::size_t k_max() const { return sse_by_k.size(); }
};

/// SSE curve for k = 1..min(k_max, distinct points) and the chosen k.
///
/// The curve is mapped to the unit square on log-log axes (ln k against
/// ln SSE); the knee is the interior k farthest below the chord between the
/// end points. A knee at least `knee_floor` away wins; otherwise the smallest
/// k with SSE <= ratio * SSE_1 is taken. Each k > 1 also runs from the
/// previous winner's centres plus its farthest point, so the curve never
/// rises.
ElbowCurve elbow_select(std::span<const Point2D> points, std::uint64_t seed, const ElbowOptions& options = {},
                        const Scale& scale = {});

/// Perpendicular distances below the chord for each k (index k-1), on the
/// normalised log-log curve. End points are 0.
std::vector<double> knee_distances(std::span<const double> sse_by_k);

// ---------------------------------------------------------------------------
// Daylight and representatives

struct DaylightWindow {
  double start_min = 300.0;
  double end_min = 1140.0;
};

/// true for clusters whose de-normalised time centroid is inside the window.
std::vector<bool> flag_daylight(const ClusterModel& model, const DaylightWindow& window);

enum class RepresentativeMode { max_voltage, nearest_centroid };

/// Top `per_cluster` members of every daylight cluster. Non-daylight clusters
/// get an empty list unless `include_non_daylight`.
std::vector<std::vector<SampleRef>> pick_representatives(const ClusterModel& model,
                                                         std::span<const Point2D> points,
                                                         const std::vector<bool>& daylight,
                                                         std::size_t per_cluster = 1,
                                                         RepresentativeMode mode = RepresentativeMode::max_voltage,
                                                         bool include_non_daylight = false);

// ---------------------------------------------------------------------------
// Per-group analysis

struct CriticalOptions {
  double k_tail = 2.0;
  ElbowOptions elbow;
  DaylightWindow daylight;
  std::size_t per_cluster = 1;
  RepresentativeMode mode = RepresentativeMode::max_voltage;
  bool include_non_daylight = false;
  std::uint64_t seed = 42;
};

struct ClusterSummary {
  std::size_t size = 0;
  bool daylight = true;
  std::vector<SampleRef> representatives;
};

struct GroupReport {
  std::size_t group_id = 0;  // 1-based
  NodeGroup group;
  TailSelection tail;
  NormalizedCandidates candidates;
  std::optional<ElbowCurve> elbow;
  std::optional<ClusterModel> model;
  std::vector<ClusterSummary> clusters;
  std::vector<std::string> notes;
};

struct CriticalCaseReport {
  std::vector<GroupReport> groups;
};

GroupReport analyze_group(std::size_t group_id, const NodeGroup& group, const MeasurementDataset& dataset,
                          const CriticalOptions& options);

/// Runs analyze_group for every group on up to `threads` workers (0 means
/// hardware concurrency). Output order and content do not depend on threads.
CriticalCaseReport analyze_groups(const GroupPartition& partition, const MeasurementDataset& dataset,
                                  const CriticalOptions& options, std::size_t threads = 1);

/// Seed for a named sub-stage, mixed from the master seed.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

std::string to_string(ElbowRule r);
std::string to_string(RepresentativeMode m);
RepresentativeMode representative_mode_from_string(const std::string& s);

}  // namespace critcase
