#include "critcase/core.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace critcase {

std::vector<std::vector<NodeId>> Topology::adjacency() const {
  std::vector<std::vector<NodeId>> adj(nodes.size());
  for (const auto& e : edges) {
    if (e.a >= nodes.size() || e.b >= nodes.size() || e.a == e.b) continue;
    adj[e.a].push_back(e.b);
    adj[e.b].push_back(e.a);
  }
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return adj;
}

bool Topology::is_connected() const {
  if (nodes.empty()) return true;
  const auto adj = adjacency();
  std::vector<char> seen(nodes.size(), 0);
  std::vector<NodeId> stack{0};
  seen[0] = 1;
  std::size_t visited = 1;
  while (!stack.empty()) {
    const NodeId u = stack.back();
    stack.pop_back();
    for (NodeId v : adj[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        ++visited;
        stack.push_back(v);
      }
    }
  }
  return visited == nodes.size();
}

std::optional<NodeId> Topology::find(const std::string& label) const {
  for (NodeId i = 0; i < nodes.size(); ++i) {
    if (nodes[i].label == label) return i;
  }
  return std::nullopt;
}

std::vector<std::optional<double>> SeriesMatrix::column(NodeId node) const {
  std::vector<std::optional<double>> out(rows_);
  for (std::size_t t = 0; t < rows_; ++t) out[t] = at(t, node);
  return out;
}

std::size_t SeriesMatrix::present_count() const {
  return static_cast<std::size_t>(std::count(present_.begin(), present_.end(), std::uint8_t{1}));
}

std::optional<std::int64_t> MeasurementDataset::interval_s() const {
  if (timestamps.size() < 2) return std::nullopt;
  return timestamps[1] - timestamps[0];
}

std::string Violation::describe() const {
  std::ostringstream os;
  os << invariant;
  if (node) os << " node=" << *node;
  if (index) os << " index=" << *index;
  os << " value=" << format_double(value);
  return os.str();
}

std::vector<Violation> validate_dataset(const MeasurementDataset& ds) {
  std::vector<Violation> out;
  const std::size_t n_t = ds.timestamps.size();
  const std::size_t n_nodes = ds.node_count();

  if (!(ds.v_base > 0.0)) out.push_back({"non-positive v_base", std::nullopt, std::nullopt, ds.v_base});

  if (n_t >= 2) {
    const std::int64_t interval = ds.timestamps[1] - ds.timestamps[0];
    for (std::size_t i = 1; i < n_t; ++i) {
      const std::int64_t step = ds.timestamps[i] - ds.timestamps[i - 1];
      if (step <= 0) {
        out.push_back({"non-increasing timestamps", std::nullopt, i, static_cast<double>(step)});
      } else if (step != interval) {
        out.push_back({"non-uniform interval", std::nullopt, i, static_cast<double>(step)});
      }
    }
  }

  const auto check_shape = [&](const SeriesMatrix& m, const char* what) {
    if (m.rows() != n_t || m.cols() != n_nodes) {
      out.push_back({std::string("dimension mismatch: ") + what, std::nullopt, std::nullopt,
                     static_cast<double>(m.rows() * m.cols())});
      return false;
    }
    return true;
  };
  if (check_shape(ds.voltages, "voltages")) {
    for (std::size_t t = 0; t < n_t; ++t) {
      for (NodeId n = 0; n < n_nodes; ++n) {
        if (!ds.voltages.present(t, n)) continue;
        const double v = ds.voltages.value(t, n);
        if (!std::isfinite(v)) {
          out.push_back({"non-finite voltage", n, t, v});
        } else if (v <= 0.0) {
          out.push_back({"non-positive voltage", n, t, v});
        }
      }
    }
  }
  check_shape(ds.currents, "currents");
  if (!ds.sources.empty() && ds.sources.size() != n_t * n_nodes) {
    out.push_back({"dimension mismatch: sources", std::nullopt, std::nullopt,
                   static_cast<double>(ds.sources.size())});
  }

  std::set<std::pair<NodeId, NodeId>> seen;
  for (std::size_t i = 0; i < ds.topology.edges.size(); ++i) {
    const auto& e = ds.topology.edges[i];
    if (e.a >= n_nodes || e.b >= n_nodes) {
      out.push_back({"invalid edge endpoint", std::nullopt, i,
                     static_cast<double>(std::max(e.a, e.b))});
      continue;
    }
    if (e.a == e.b) {
      out.push_back({"self-loop", e.a, i, static_cast<double>(e.a)});
      continue;
    }
    if (!seen.insert(std::minmax(e.a, e.b)).second) {
      out.push_back({"duplicate edge", e.a, i, static_cast<double>(e.b)});
    }
  }
  return out;
}

double time_of_day_minutes(LocalSeconds t) {
  constexpr std::int64_t day = 86400;
  const std::int64_t sec = ((t % day) + day) % day;
  return static_cast<double>(sec) / 60.0;
}

double time_of_day_minutes(std::size_t t_index, const MeasurementDataset& dataset) {
  if (t_index >= dataset.timestamps.size()) {
    throw Error(ErrorKind::stage, "core",
                "time index " + std::to_string(t_index) + " out of bounds (" +
                    std::to_string(dataset.timestamps.size()) + " timestamps)");
  }
  return time_of_day_minutes(dataset.timestamps[t_index]);
}

std::string format_timestamp(LocalSeconds t) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{t}};
  const auto day = floor<days>(tp);
  const year_month_day ymd{day};
  const hh_mm_ss hms{tp - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

std::string format_clock(double minutes) {
  int total = static_cast<int>(std::lround(minutes));
  total = ((total % 1440) + 1440) % 1440;
  char buf[8];
  std::snprintf(buf, sizeof buf, "%02d:%02d", total / 60, total % 60);
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace critcase
