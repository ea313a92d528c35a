#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "critcase/critical.hpp"

namespace critcase {

/// Figure analogues for one group, written under `dir`:
///   qq.svg / qq.csv                 QQ scatter with identity line
///   histogram.svg / histogram.csv   voltage histogram, fitted Gaussian, mu + k sigma marker
///   elbow.svg                       SSE against k, chosen k marked, ratio guide when used
///   clusters.svg                    (time, voltage) scatter coloured by cluster, centroids
/// elbow.svg and clusters.svg are skipped when the group has no clustering.
/// Returns the names of the files written.
std::vector<std::string> emit_plots(const GroupReport& group, const MeasurementDataset& dataset, double sse_ratio,
                                    const std::filesystem::path& dir);

/// QQ scatter of the pooled dataset voltages (the bad-data view).
void emit_pooled_qq(const std::vector<double>& values, double k_sigma, const std::filesystem::path& svg_path,
                    const std::filesystem::path& csv_path);

/// At most `max_points` QQ pairs at evenly spaced ranks, always keeping both
/// extremes.
std::vector<QQPoint> thin_qq(const std::vector<QQPoint>& points, std::size_t max_points);

}  // namespace critcase
