#include "critcase/bad_data.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <boost/math/distributions/normal.hpp>

namespace critcase {
namespace {

constexpr const char* kStage = "bad_data";

Band make_band(std::optional<NodeId> node, const GaussianFit& fit, double k) {
  return {node, fit, fit.mu - k * fit.sigma, fit.mu + k * fit.sigma};
}

}  // namespace

GaussianFit fit_gaussian(std::span<const double> values) {
  if (values.size() < 2) {
    throw Error(ErrorKind::stage, kStage,
                "gaussian fit needs at least 2 values, got " + std::to_string(values.size()));
  }
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) return {*lo, 0.0, values.size()};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double n = static_cast<double>(values.size());
  const double mu = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mu) * (v - mu);
  return {mu, std::sqrt(ss / n), values.size()};
}

const Band& BadDataLedger::band_for(NodeId node) const {
  if (scope == FitScope::pooled) return bands.front();
  return bands.at(node);
}

std::vector<double> present_voltages(const MeasurementDataset& ds) {
  std::vector<double> out;
  out.reserve(ds.voltages.rows() * ds.voltages.cols());
  for (std::size_t t = 0; t < ds.time_count(); ++t) {
    for (NodeId n = 0; n < ds.node_count(); ++n) {
      if (ds.voltages.present(t, n)) out.push_back(ds.voltages.value(t, n));
    }
  }
  return out;
}

MeasurementDataset apply_bands(const MeasurementDataset& ds, const BadDataLedger& ledger,
                               std::vector<SampleRef>& removed) {
  removed.clear();
  MeasurementDataset clean = ds;
  for (NodeId n = 0; n < ds.node_count(); ++n) {
    const Band& band = ledger.band_for(n);
    for (std::size_t t = 0; t < ds.time_count(); ++t) {
      if (!ds.voltages.present(t, n)) continue;
      const double v = ds.voltages.value(t, n);
      if (!band.contains(v)) {
        removed.push_back({n, t, v});
        clean.voltages.clear(t, n);
      }
    }
  }
  return clean;
}

BadDataResult detect_bad_data(const MeasurementDataset& ds, double k_sigma, FitScope scope) {
  if (!(k_sigma > 0.0)) throw Error(ErrorKind::validation, kStage, "k_sigma must be positive");
  BadDataResult result;
  if (k_sigma < 7.0) {
    result.warnings.push_back("k_sigma " + format_double(k_sigma) +
                              " is narrower than the 7-sigma band; valid extreme voltages may be removed");
  }
  result.ledger.scope = scope;
  result.ledger.k_sigma = k_sigma;
  if (scope == FitScope::pooled) {
    const auto values = present_voltages(ds);
    result.ledger.bands.push_back(make_band(std::nullopt, fit_gaussian(values), k_sigma));
  } else {
    std::vector<double> values;
    for (NodeId n = 0; n < ds.node_count(); ++n) {
      values.clear();
      for (std::size_t t = 0; t < ds.time_count(); ++t) {
        if (ds.voltages.present(t, n)) values.push_back(ds.voltages.value(t, n));
      }
      if (values.size() < 2) {
        throw Error(ErrorKind::stage, kStage,
                    "node " + ds.topology.nodes[n].label + " has " + std::to_string(values.size()) +
                        " voltage samples; per-node fit needs at least 2");
      }
      result.ledger.bands.push_back(make_band(n, fit_gaussian(values), k_sigma));
    }
  }
  result.clean = apply_bands(ds, result.ledger, result.ledger.removed);
  return result;
}

double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

std::vector<QQPoint> qq_points(std::span<const double> values) {
  const GaussianFit fit = fit_gaussian(values);
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  std::vector<QQPoint> out(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double p = (static_cast<double>(i) + 0.5) / n;
    out[i] = {fit.mu + fit.sigma * normal_quantile(p), sorted[i]};
  }
  return out;
}

void write_ledger_csv(std::ostream& out, const BadDataLedger& ledger, const MeasurementDataset& ds) {
  out << "node,timestamp,voltage,band_lo,band_hi\n";
  for (const auto& s : ledger.removed) {
    const Band& band = ledger.band_for(s.node);
    out << ds.topology.nodes[s.node].label << ',' << format_timestamp(ds.timestamps[s.t_index]) << ','
        << format_double(s.value) << ',' << format_double(band.lo) << ',' << format_double(band.hi) << '\n';
  }
}

std::string to_string(FitScope scope) { return scope == FitScope::pooled ? "pooled" : "per-node"; }

FitScope fit_scope_from_string(const std::string& s) {
  if (s == "pooled") return FitScope::pooled;
  if (s == "per-node" || s == "per_node") return FitScope::per_node;
  throw Error(ErrorKind::validation, "config", "unknown bad-data scope '" + s + "'");
}

}  // namespace critcase
