#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "critcase/bad_data.hpp"
#include "critcase/core.hpp"
#include "critcase/critical.hpp"
#include "critcase/grouping.hpp"
#include "critcase/ingest.hpp"

namespace critcase {

inline constexpr const char* kVersion = "1.0.0";

struct BadDataConfig {
  double k_sigma = 7.0;
  FitScope scope = FitScope::pooled;
};

struct GroupingConfig {
  double dv_threshold_pct = 0.2;
  DiffMetric dv_metric = DiffMetric::mean_abs;
  double corr_limit = 0.7;
  CorrelationSignal corr_signal = CorrelationSignal::current;
  std::size_t min_support = kDefaultMinSupport;
};

struct PipelineConfig {
  IngestConfig ingest;
  BadDataConfig bad_data;
  GroupingConfig grouping;
  CriticalOptions critical;
  /// Relative input paths are resolved against this directory. Not serialised.
  std::filesystem::path base_dir;
};

std::string config_to_json(const PipelineConfig& config);
/// Missing keys keep their defaults. Throws Error(validation) on bad input.
PipelineConfig config_from_json(const std::string& text);
PipelineConfig load_config_file(const std::filesystem::path& path);

/// Range checks for every field; returns human-readable problems.
std::vector<std::string> check_config(const PipelineConfig& config);

struct PipelineResult {
  MeasurementDataset dataset;  // as loaded
  MeasurementDataset clean;
  BadDataLedger ledger;
  VoltageDiffMatrix diff;
  GroupPartition voltage_groups;
  RefinedPartition refined;
  CriticalCaseReport report;
  std::vector<std::string> warnings;
};

/// ingest -> validate -> bad data -> voltage grouping -> correlation split ->
/// per-group tail, elbow, k-means, daylight flags and representatives.
/// `threads` only bounds the per-group fan-out; results do not depend on it.
PipelineResult run_pipeline(const PipelineConfig& config, std::size_t threads = 1);

/// Same stages on an in-memory dataset (ingest skipped).
PipelineResult run_pipeline(const PipelineConfig& config, MeasurementDataset dataset, std::size_t threads = 1);

/// Report document with stable field order.
std::string report_to_json(const PipelineResult& result, const PipelineConfig& config);

/// Writes config.echo, report.json, ledger.csv, matrices/ and groups/<id>/.
void write_run_directory(const PipelineResult& result, const PipelineConfig& config,
                         const std::filesystem::path& out_dir);

}  // namespace critcase
