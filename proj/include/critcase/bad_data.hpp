#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "critcase/core.hpp"

namespace critcase {

/// Mean and population standard deviation of a sample.
struct GaussianFit {
  double mu = 0.0;
  double sigma = 0.0;
  std::size_t n = 0;
};

/// Throws if fewer than two values are given.
GaussianFit fit_gaussian(std::span<const double> values);

enum class FitScope { pooled, per_node };

struct Band {
  std::optional<NodeId> node;  // nullopt for the pooled band
  GaussianFit fit;
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct BadDataLedger {
  FitScope scope = FitScope::pooled;
  double k_sigma = 7.0;
  /// One pooled band, or one band per node in node order.
  std::vector<Band> bands;
  /// Sorted by (node, t_index).
  std::vector<SampleRef> removed;

  const Band& band_for(NodeId node) const;
};

struct BadDataResult {
  MeasurementDataset clean;
  BadDataLedger ledger;
  std::vector<std::string> warnings;
};

/// Masks every voltage outside mu +/- k_sigma*sigma. The fit is taken once on
/// the input; values are never altered, only masked.
BadDataResult detect_bad_data(const MeasurementDataset& dataset, double k_sigma = 7.0,
                              FitScope scope = FitScope::pooled);

/// Re-applies the bands recorded in `ledger` without refitting. Returns the
/// masked dataset; `removed` receives what was masked.
MeasurementDataset apply_bands(const MeasurementDataset& dataset, const BadDataLedger& ledger,
                               std::vector<SampleRef>& removed);

struct QQPoint {
  double theoretical = 0.0;
  double empirical = 0.0;
};

/// Sorted sample against normal quantiles at (i - 0.5)/n, scaled by the
/// sample's own fit.
std::vector<QQPoint> qq_points(std::span<const double> values);

/// Standard normal quantile.
double normal_quantile(double p);

/// All present voltages, row-major.
std::vector<double> present_voltages(const MeasurementDataset& dataset);

/// `node,timestamp,voltage,band_lo,band_hi`
void write_ledger_csv(std::ostream& out, const BadDataLedger& ledger, const MeasurementDataset& dataset);

std::string to_string(FitScope scope);
FitScope fit_scope_from_string(const std::string& s);

}  // namespace critcase
