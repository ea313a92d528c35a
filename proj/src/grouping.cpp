#include "critcase/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <set>

namespace critcase {
namespace {

constexpr const char* kStage = "grouping";

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  // The smaller root wins so each root is its component's minimum.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::size_t> parent_;
};

bool induced_connected(const std::vector<NodeId>& nodes, const std::set<NodeId>& passable,
                       const std::vector<std::vector<NodeId>>& adj) {
  if (nodes.size() <= 1) return true;
  const std::set<NodeId> members(nodes.begin(), nodes.end());
  std::set<NodeId> seen{nodes.front()};
  std::vector<NodeId> stack{nodes.front()};
  while (!stack.empty()) {
    const NodeId u = stack.back();
    stack.pop_back();
    for (NodeId v : adj[u]) {
      if ((members.count(v) || passable.count(v)) && seen.insert(v).second) stack.push_back(v);
    }
  }
  return std::all_of(nodes.begin(), nodes.end(), [&](NodeId n) { return seen.count(n) > 0; });
}

}  // namespace

double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::stage, kStage, "percentile of an empty sample");
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  const std::size_t idx = std::clamp<std::size_t>(rank, 1, values.size()) - 1;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx), values.end());
  return values[idx];
}

VoltageDiffMatrix voltage_diff_matrix(const MeasurementDataset& ds, DiffMetric metric,
                                      std::size_t min_support) {
  const std::size_t n = ds.node_count();
  VoltageDiffMatrix out{metric, PairMatrix(n)};
  std::vector<double> diffs;
  diffs.reserve(ds.time_count());
  for (NodeId i = 0; i < n; ++i) {
    std::size_t own = 0;
    for (std::size_t t = 0; t < ds.time_count(); ++t) own += ds.voltages.present(t, i) ? 1 : 0;
    out.d.set(i, i, 0.0, own);
    for (NodeId j = i + 1; j < n; ++j) {
      diffs.clear();
      for (std::size_t t = 0; t < ds.time_count(); ++t) {
        if (ds.voltages.present(t, i) && ds.voltages.present(t, j)) {
          diffs.push_back(std::abs(ds.voltages.value(t, i) - ds.voltages.value(t, j)));
        }
      }
      std::optional<double> value;
      if (!diffs.empty() && diffs.size() >= min_support) {
        if (metric == DiffMetric::mean_abs) {
          value = std::accumulate(diffs.begin(), diffs.end(), 0.0) / static_cast<double>(diffs.size());
        } else {
          value = nearest_rank_percentile(diffs, 0.95);
        }
      }
      out.d.set(i, j, value, diffs.size());
    }
  }
  for (const auto& e : ds.topology.edges) {
    if (e.a >= n || e.b >= n || e.a == e.b) continue;
    if (!out.d.at(e.a, e.b)) {
      throw Error(ErrorKind::stage, kStage,
                  "edge " + ds.topology.nodes[e.a].label + "-" + ds.topology.nodes[e.b].label + " has " +
                      std::to_string(out.d.support(e.a, e.b)) + " common voltage samples, need " +
                      std::to_string(min_support));
    }
  }
  return out;
}

GroupPartition group_by_voltage(const Topology& topology, const VoltageDiffMatrix& diff, double threshold_pct,
                                double v_base) {
  if (!(threshold_pct >= 0.0)) throw Error(ErrorKind::validation, kStage, "threshold_pct must be >= 0");
  if (diff.d.size() != topology.node_count()) {
    throw Error(ErrorKind::stage, kStage, "difference matrix does not match the topology");
  }
  const double limit = threshold_pct / 100.0 * v_base;
  DisjointSets sets(topology.node_count());
  for (const auto& e : topology.edges) {
    if (e.a == e.b) continue;
    const auto d = diff.d.at(e.a, e.b);
    if (!d) {
      throw Error(ErrorKind::stage, kStage,
                  "no voltage difference for edge " + topology.nodes[e.a].label + "-" + topology.nodes[e.b].label);
    }
    if (*d <= limit) sets.unite(e.a, e.b);
  }
  GroupPartition out;
  std::vector<std::size_t> group_of_root(topology.node_count(), SIZE_MAX);
  for (NodeId v = 0; v < topology.node_count(); ++v) {
    const std::size_t root = sets.find(v);
    if (group_of_root[root] == SIZE_MAX) {
      group_of_root[root] = out.groups.size();
      out.groups.push_back({{}, GroupOrigin::voltage_component});
    }
    out.groups[group_of_root[root]].nodes.push_back(v);
  }
  return out;
}

std::optional<double> pearson_correlation(std::span<const std::optional<double>> x,
                                          std::span<const std::optional<double>> y, std::size_t min_support) {
  const std::size_t len = std::min(x.size(), y.size());
  std::size_t n = 0;
  double sx = 0.0, sy = 0.0;
  double x_min = INFINITY, x_max = -INFINITY, y_min = INFINITY, y_max = -INFINITY;
  for (std::size_t t = 0; t < len; ++t) {
    if (!x[t] || !y[t]) continue;
    ++n;
    sx += *x[t];
    sy += *y[t];
    x_min = std::min(x_min, *x[t]);
    x_max = std::max(x_max, *x[t]);
    y_min = std::min(y_min, *y[t]);
    y_max = std::max(y_max, *y[t]);
  }
  if (n == 0 || n < min_support || x_min == x_max || y_min == y_max) return std::nullopt;
  const double mx = sx / static_cast<double>(n);
  const double my = sy / static_cast<double>(n);
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    if (!x[t] || !y[t]) continue;
    const double dx = *x[t] - mx;
    const double dy = *y[t] - my;
    cov += dx * dy;
    vx += dx * dx;
    vy += dy * dy;
  }
  // The 1/n factors of cov and both sigmas cancel.
  return std::clamp(cov / (std::sqrt(vx) * std::sqrt(vy)), -1.0, 1.0);
}

std::optional<std::size_t> CorrelationMatrix::index_of(NodeId node) const {
  const auto it = std::lower_bound(nodes.begin(), nodes.end(), node);
  if (it == nodes.end() || *it != node) return std::nullopt;
  return static_cast<std::size_t>(it - nodes.begin());
}

CorrelationMatrix correlation_matrix(const MeasurementDataset& ds, CorrelationSignal signal,
                                     std::size_t min_support) {
  CorrelationMatrix out;
  for (NodeId n = 0; n < ds.node_count(); ++n) {
    if (ds.topology.nodes[n].has_load) out.nodes.push_back(n);
  }
  const SeriesMatrix& source = signal == CorrelationSignal::current ? ds.currents : ds.voltages;
  std::vector<std::vector<std::optional<double>>> series;
  series.reserve(out.nodes.size());
  for (NodeId n : out.nodes) series.push_back(source.column(n));

  out.r = PairMatrix(out.nodes.size());
  for (std::size_t i = 0; i < out.nodes.size(); ++i) {
    std::size_t own = 0;
    for (const auto& v : series[i]) own += v ? 1 : 0;
    const auto self = pearson_correlation(series[i], series[i], min_support);
    out.r.set(i, i, self ? std::optional<double>(1.0) : std::nullopt, own);
    for (std::size_t j = i + 1; j < out.nodes.size(); ++j) {
      std::size_t overlap = 0;
      for (std::size_t t = 0; t < series[i].size(); ++t) overlap += (series[i][t] && series[j][t]) ? 1 : 0;
      out.r.set(i, j, pearson_correlation(series[i], series[j], min_support), overlap);
    }
  }
  return out;
}

RefinedPartition refine_by_correlation(const GroupPartition& partition, const MeasurementDataset& ds,
                                       double corr_limit, CorrelationSignal signal, std::size_t min_support) {
  if (!(corr_limit >= -1.0 && corr_limit <= 1.0)) {
    throw Error(ErrorKind::validation, kStage, "corr_limit must lie in [-1, 1]");
  }
  RefinedPartition out;
  out.correlation = correlation_matrix(ds, signal, min_support);
  const auto& cm = out.correlation;

  std::vector<NodeGroup> kept;
  std::vector<NodeGroup> splits;
  for (std::size_t g = 0; g < partition.groups.size(); ++g) {
    const auto& group = partition.groups[g];
    std::vector<NodeId> loads;
    for (NodeId n : group.nodes) {
      if (ds.topology.nodes.at(n).has_load) loads.push_back(n);
    }
    NodeGroup remaining = group;
    if (loads.size() >= 2) {
      std::vector<LoadScore> scores;
      for (NodeId n : loads) {
        const std::size_t i = *cm.index_of(n);
        if (cm.r.support(i, i) == 0) {
          throw Error(ErrorKind::stage, kStage,
                      "load node " + ds.topology.nodes[n].label + " has no " + to_string(signal) + " samples");
        }
        double sum = 0.0;
        std::size_t defined = 0;
        for (NodeId m : loads) {
          if (m == n) continue;
          if (const auto r = cm.r.at(i, *cm.index_of(m))) {
            sum += *r;
            ++defined;
          }
        }
        LoadScore score{n, g, std::nullopt, false};
        if (defined > 0) score.mean_correlation = sum / static_cast<double>(defined);
        scores.push_back(score);
      }
      std::vector<std::size_t> order;
      for (std::size_t s = 0; s < scores.size(); ++s) {
        if (scores[s].mean_correlation && *scores[s].mean_correlation < corr_limit) order.push_back(s);
      }
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (*scores[a].mean_correlation != *scores[b].mean_correlation) {
          return *scores[a].mean_correlation < *scores[b].mean_correlation;
        }
        return scores[a].node < scores[b].node;
      });
      std::size_t load_count = loads.size();
      for (std::size_t s : order) {
        if (load_count < 2) break;
        scores[s].split = true;
        --load_count;
        splits.push_back({{scores[s].node}, GroupOrigin::correlation_split});
        std::erase(remaining.nodes, scores[s].node);
      }
      out.scores.insert(out.scores.end(), scores.begin(), scores.end());
    }
    kept.push_back(std::move(remaining));
  }
  out.partition.groups = std::move(kept);
  out.partition.groups.insert(out.partition.groups.end(), splits.begin(), splits.end());
  std::stable_sort(out.partition.groups.begin(), out.partition.groups.end(),
                   [](const NodeGroup& a, const NodeGroup& b) { return a.nodes.front() < b.nodes.front(); });
  return out;
}

std::vector<std::string> check_partition(const GroupPartition& partition, const Topology& topology) {
  std::vector<std::string> broken;
  std::vector<int> count(topology.node_count(), 0);
  std::set<NodeId> split_nodes;
  for (std::size_t g = 0; g < partition.groups.size(); ++g) {
    const auto& group = partition.groups[g];
    if (group.nodes.empty()) broken.push_back("group " + std::to_string(g) + " is empty");
    if (!std::is_sorted(group.nodes.begin(), group.nodes.end())) {
      broken.push_back("group " + std::to_string(g) + " is not sorted");
    }
    for (NodeId n : group.nodes) {
      if (n >= topology.node_count()) {
        broken.push_back("group " + std::to_string(g) + " has invalid node " + std::to_string(n));
        continue;
      }
      ++count[n];
    }
    if (group.origin == GroupOrigin::correlation_split) {
      if (group.nodes.size() != 1) {
        broken.push_back("correlation split group " + std::to_string(g) + " is not a singleton");
      } else {
        split_nodes.insert(group.nodes.front());
        if (group.nodes.front() < topology.node_count() && !topology.nodes[group.nodes.front()].has_load) {
          broken.push_back("correlation split group " + std::to_string(g) + " holds a node without load");
        }
      }
    }
  }
  for (NodeId n = 0; n < topology.node_count(); ++n) {
    if (count[n] == 0) broken.push_back("node " + std::to_string(n) + " is not covered");
    if (count[n] > 1) broken.push_back("node " + std::to_string(n) + " is in several groups");
  }
  const auto adj = topology.adjacency();
  for (std::size_t g = 0; g < partition.groups.size(); ++g) {
    const auto& group = partition.groups[g];
    if (group.origin != GroupOrigin::voltage_component) continue;
    if (std::any_of(group.nodes.begin(), group.nodes.end(), [&](NodeId n) { return n >= topology.node_count(); })) {
      continue;
    }
    if (!induced_connected(group.nodes, split_nodes, adj)) {
      broken.push_back("voltage group " + std::to_string(g) + " is not connected");
    }
  }
  return broken;
}

void write_pair_matrix_csv(std::ostream& out, const PairMatrix& m, const std::vector<std::string>& labels) {
  out << "node";
  for (const auto& l : labels) out << ',' << l;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << labels[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      out << ',';
      if (const auto v = m.at(i, j)) out << format_double(*v);
    }
    out << '\n';
  }
}

void write_partition_csv(std::ostream& out, const GroupPartition& partition, const Topology& topology) {
  out << "group_id,node,provenance\n";
  for (std::size_t g = 0; g < partition.groups.size(); ++g) {
    for (NodeId n : partition.groups[g].nodes) {
      out << g + 1 << ',' << topology.nodes[n].label << ',' << to_string(partition.groups[g].origin) << '\n';
    }
  }
}

std::string to_string(DiffMetric m) { return m == DiffMetric::mean_abs ? "mean_abs" : "p95_abs"; }
std::string to_string(GroupOrigin o) {
  return o == GroupOrigin::voltage_component ? "voltage-component" : "correlation-split";
}
std::string to_string(CorrelationSignal s) { return s == CorrelationSignal::current ? "current" : "voltage"; }

DiffMetric diff_metric_from_string(const std::string& s) {
  if (s == "mean_abs") return DiffMetric::mean_abs;
  if (s == "p95_abs") return DiffMetric::p95_abs;
  throw Error(ErrorKind::validation, "config", "unknown dv_metric '" + s + "'");
}

CorrelationSignal correlation_signal_from_string(const std::string& s) {
  if (s == "current") return CorrelationSignal::current;
  if (s == "voltage") return CorrelationSignal::voltage;
  throw Error(ErrorKind::validation, "config", "unknown corr_signal '" + s + "'");
}

}  // namespace critcase
