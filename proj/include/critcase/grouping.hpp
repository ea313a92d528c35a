#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "critcase/core.hpp"

namespace critcase {

inline constexpr std::size_t kDefaultMinSupport = 100;

/// Symmetric node-by-node table with an overlap count per entry. Entries with
/// too little overlap are undefined.
class PairMatrix {
 public:
  PairMatrix() = default;
  explicit PairMatrix(std::size_t n) : n_(n), values_(n * n), support_(n * n, 0) {}

  std::size_t size() const noexcept { return n_; }
  std::optional<double> at(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
  std::size_t support(std::size_t i, std::size_t j) const { return support_[i * n_ + j]; }

  void set(std::size_t i, std::size_t j, std::optional<double> v, std::size_t support) {
    values_[i * n_ + j] = v;
    values_[j * n_ + i] = v;
    support_[i * n_ + j] = support;
    support_[j * n_ + i] = support;
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::optional<double>> values_;
  std::vector<std::size_t> support_;
};

enum class DiffMetric { mean_abs, p95_abs };

struct VoltageDiffMatrix {
  DiffMetric metric = DiffMetric::mean_abs;
  PairMatrix d;  // volts, indexed by NodeId
};

/// Time aggregate of |V_i(t) - V_j(t)| over the timestamps where both nodes
/// are present, for every node pair. Throws if a topology edge has fewer than
/// `min_support` common samples.
VoltageDiffMatrix voltage_diff_matrix(const MeasurementDataset& dataset,
                                      DiffMetric metric = DiffMetric::mean_abs,
                                      std::size_t min_support = kDefaultMinSupport);

/// Nearest-rank percentile of an unsorted sample (q in (0, 1]).
double nearest_rank_percentile(std::vector<double> values, double q);

enum class GroupOrigin { voltage_component, correlation_split };

struct NodeGroup {
  std::vector<NodeId> nodes;  // ascending
  GroupOrigin origin = GroupOrigin::voltage_component;

  bool operator==(const NodeGroup&) const = default;
};

struct GroupPartition {
  std::vector<NodeGroup> groups;

  bool operator==(const GroupPartition&) const = default;
};

inline constexpr double kThresholdPctSaneMin = 0.05;
inline constexpr double kThresholdPctSaneMax = 5.0;

/// Connected components of the topology restricted to edges with
/// d <= threshold_pct/100 * v_base. Groups are ordered by their smallest node.
GroupPartition group_by_voltage(const Topology& topology, const VoltageDiffMatrix& diff,
                                double threshold_pct, double v_base);

/// Pearson coefficient over positions where both series are present.
/// nullopt when the overlap is below `min_support` or either side is constant.
std::optional<double> pearson_correlation(std::span<const std::optional<double>> x,
                                          std::span<const std::optional<double>> y,
                                          std::size_t min_support = kDefaultMinSupport);

enum class CorrelationSignal { current, voltage };

struct CorrelationMatrix {
  std::vector<NodeId> nodes;  // load nodes, ascending; matrix rows follow this order
  PairMatrix r;

  std::optional<std::size_t> index_of(NodeId node) const;
};

CorrelationMatrix correlation_matrix(const MeasurementDataset& dataset, CorrelationSignal signal,
                                     std::size_t min_support = kDefaultMinSupport);

struct LoadScore {
  NodeId node = 0;
  std::size_t group = 0;  // index into the input partition
  std::optional<double> mean_correlation;
  bool split = false;
};

struct RefinedPartition {
  GroupPartition partition;
  CorrelationMatrix correlation;
  std::vector<LoadScore> scores;
};

/// Moves weakly correlated load nodes out of their voltage group into
/// singleton groups.
///
/// A load node's score is the mean of its defined correlations with the other
/// load nodes of its original group. Nodes scoring below `corr_limit` are
/// visited by ascending (score, NodeId) and split off while the group still
/// keeps at least two load nodes. Scores are never recomputed after a split.
RefinedPartition refine_by_correlation(const GroupPartition& partition, const MeasurementDataset& dataset,
                                       double corr_limit = 0.7,
                                       CorrelationSignal signal = CorrelationSignal::current,
                                       std::size_t min_support = kDefaultMinSupport);

/// Disjointness, coverage, connectivity of voltage components and singleton
/// splits. Returns the broken laws, empty when the partition is sound.
std::vector<std::string> check_partition(const GroupPartition& partition, const Topology& topology);

void write_pair_matrix_csv(std::ostream& out, const PairMatrix& m, const std::vector<std::string>& labels);
void write_partition_csv(std::ostream& out, const GroupPartition& partition, const Topology& topology);

std::string to_string(DiffMetric m);
std::string to_string(GroupOrigin o);
std::string to_string(CorrelationSignal s);
DiffMetric diff_metric_from_string(const std::string& s);
CorrelationSignal correlation_signal_from_string(const std::string& s);

}  // namespace critcase
