#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace critcase {

/// Dense 0-based node index within one dataset.
using NodeId = std::size_t;

/// Civil time of the network's region, in seconds since 1970-01-01T00:00
/// local. Never converted after ingestion.
using LocalSeconds = std::int64_t;

inline constexpr double kMinutesPerDay = 1440.0;

enum class ErrorKind { validation, stage, io };

/// Every failure carries the pipeline stage it came from so the CLI can emit a
/// machine-parsable diagnostic and pick the exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string stage, const std::string& message)
      : std::runtime_error(message), kind_(kind), stage_(std::move(stage)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& stage() const noexcept { return stage_; }

 private:
  ErrorKind kind_;
  std::string stage_;
};

struct NodeMeta {
  std::string label;
  bool has_load = false;

  bool operator==(const NodeMeta&) const = default;
};

struct Edge {
  NodeId a = 0;
  NodeId b = 0;

  bool operator==(const Edge&) const = default;
};

struct Topology {
  std::vector<Edge> edges;
  std::vector<NodeMeta> nodes;

  std::size_t node_count() const { return nodes.size(); }
  /// Adjacency lists, neighbours in ascending order.
  std::vector<std::vector<NodeId>> adjacency() const;
  bool is_connected() const;
  std::optional<NodeId> find(const std::string& label) const;

  bool operator==(const Topology&) const = default;
};

/// Row-major [timestamp x node] matrix where every cell is either a value or
/// MISSING. Missing cells are skipped by consumers, never read as numbers.
class SeriesMatrix {
 public:
  SeriesMatrix() = default;
  SeriesMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), values_(rows * cols, 0.0), present_(rows * cols, 0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  bool present(std::size_t t, NodeId node) const { return present_[t * cols_ + node] != 0; }
  /// Precondition: present(t, node).
  double value(std::size_t t, NodeId node) const { return values_[t * cols_ + node]; }
  std::optional<double> at(std::size_t t, NodeId node) const {
    if (!present(t, node)) return std::nullopt;
    return value(t, node);
  }

  void set(std::size_t t, NodeId node, double v) {
    values_[t * cols_ + node] = v;
    present_[t * cols_ + node] = 1;
  }
  void clear(std::size_t t, NodeId node) {
    values_[t * cols_ + node] = 0.0;
    present_[t * cols_ + node] = 0;
  }

  std::vector<std::optional<double>> column(NodeId node) const;
  std::size_t present_count() const;

  bool operator==(const SeriesMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
  std::vector<std::uint8_t> present_;
};

enum class SampleSource : std::uint8_t { unspecified, measured, estimated };

struct MeasurementDataset {
  std::vector<LocalSeconds> timestamps;
  SeriesMatrix voltages;  // volts
  SeriesMatrix currents;  // amperes, meaningful only at load nodes
  /// Per-cell provenance tag, same shape as voltages. Informational only.
  std::vector<SampleSource> sources;
  double v_base = 0.0;
  Topology topology;
  std::string season_label;

  std::size_t node_count() const { return topology.node_count(); }
  std::size_t time_count() const { return timestamps.size(); }
  /// Spacing of the first two timestamps, if there are two.
  std::optional<std::int64_t> interval_s() const;
  SampleSource source(std::size_t t, NodeId node) const {
    return sources.empty() ? SampleSource::unspecified : sources[t * node_count() + node];
  }

  bool operator==(const MeasurementDataset&) const = default;
};

/// One (node, time) voltage sample.
struct SampleRef {
  NodeId node = 0;
  std::size_t t_index = 0;
  double value = 0.0;

  bool operator==(const SampleRef&) const = default;
};

struct Violation {
  std::string invariant;
  std::optional<NodeId> node;
  std::optional<std::size_t> index;
  double value = 0.0;

  std::string describe() const;
};

/// Checks every MeasurementDataset invariant. Never throws; an empty result
/// means the dataset is well formed. Topology connectivity is not checked here
/// (see Topology::is_connected), it is a warning only.
std::vector<Violation> validate_dataset(const MeasurementDataset& dataset);

/// Minutes since local midnight, in [0, 1440).
double time_of_day_minutes(std::size_t t_index, const MeasurementDataset& dataset);
double time_of_day_minutes(LocalSeconds t);

/// "YYYY-MM-DDTHH:MM:SS" for a local timestamp.
std::string format_timestamp(LocalSeconds t);

/// "HH:MM" for minutes of day.
std::string format_clock(double minutes);

/// Shortest round-trip decimal form, locale independent.
std::string format_double(double v);

}  // namespace critcase
