#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "critcase/core.hpp"

namespace critcase {

struct IngestConfig {
  std::filesystem::path measurement_path;
  std::filesystem::path topology_path;
  double v_base = 11000.0;
  std::int64_t expected_interval_s = 600;
  /// IANA zone used only for timestamps that carry an explicit UTC offset.
  std::string timezone;
  std::string season_label;
};

/// Parses an ISO-8601 timestamp ("2017-01-05T19:48", "2017-01-05 19:48:00",
/// optionally with fractional seconds and a "Z" or "+10:00" suffix) into local
/// milliseconds. Offset-bearing values are converted to `timezone` civil time.
/// Returns false on malformed input.
bool parse_timestamp_ms(std::string_view text, const std::string& timezone, std::int64_t& out_ms);

/// Reads the measurement and topology files into a dataset.
///
/// Node labels from both files are sorted lexicographically and mapped to ids
/// 0..n-1. The timestamp grid runs from the earliest to the latest observed
/// record at the expected interval; every (node, time) without a record is
/// MISSING. Records within 1 s of the grid are snapped onto it, anything
/// further off is an error. Repeated records with identical values are
/// dropped, conflicting ones are an error.
MeasurementDataset load_dataset(const IngestConfig& config);

/// Writes a dataset back out in the same two file formats. Loading the result
/// reproduces the dataset exactly.
void write_dataset(const MeasurementDataset& dataset, const std::filesystem::path& measurement_path,
                   const std::filesystem::path& topology_path);

}  // namespace critcase
