#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "critcase/core.hpp"

namespace critcase {

struct PlantedGroup {
  std::vector<NodeId> nodes;
  double offset_v = 0.0;
};

struct TapChange {
  double minute = 1188.0;  // 19:48
  double step_v = 50.0;
};

/// Recipe for a synthetic feeder history. Node labels are N01, N02, ... so the
/// label order equals the id order.
struct SynthSpec {
  std::size_t n_nodes = 0;
  std::vector<Edge> edges;
  std::vector<NodeId> load_nodes;
  std::vector<PlantedGroup> group_plan;
  std::vector<NodeId> decorrelated_loads;
  std::size_t outlier_count = 0;
  std::optional<TapChange> tap_change;
  std::int64_t interval_s = 600;
  std::size_t days = 90;
  std::uint64_t seed = 2017;

  double v_nominal = 6351.0;  // 11 kV line, phase-neutral
  double v_base = 11000.0;
  /// Grouping threshold in volts the planted structure must respect.
  double threshold_v = 22.0;
  double node_spread_v = 6.0;
  double noise_v = 1.0;
  double ridge_v = 60.0;      // midday PV voltage rise on a clear day
  double load_drop_v = 25.0;  // voltage sag at peak load
  std::string start_date = "2017-01-01";
  std::string season_label = "summer";
};

/// 49-node feeder with 16 load nodes, three planted voltage groups and
/// decorrelated loads on N07 and N38. Five outliers, tap step at 19:48.
SynthSpec default_feeder_spec();

struct GroundTruth {
  std::vector<PlantedGroup> groups;
  std::vector<NodeId> decorrelated_loads;
  std::vector<SampleRef> outliers;  // sorted by (node, t_index)
  std::optional<TapChange> tap_change;
  std::uint64_t seed_used = 0;
  std::size_t attempts = 0;
  /// Largest |r| between a decorrelated load and a peer load in its group.
  double max_decorrelated_peer_r = 0.0;
};

/// Throws Error(validation) on an inconsistent spec.
void check_spec(const SynthSpec& spec);

std::pair<MeasurementDataset, GroundTruth> generate(const SynthSpec& spec);

std::string node_label(NodeId id, std::size_t n_nodes);

/// JSON text forms; parse accepts partial documents, missing keys keep the
/// defaults of default_feeder_spec().
std::string spec_to_json(const SynthSpec& spec);
SynthSpec spec_from_json(const std::string& text);
std::string ground_truth_to_json(const GroundTruth& truth, const MeasurementDataset& dataset);

}  // namespace critcase
