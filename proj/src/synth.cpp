#include "critcase/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "json.hpp"

#include "critcase/bad_data.hpp"
#include "critcase/grouping.hpp"
#include "critcase/ingest.hpp"

namespace critcase {
namespace {

constexpr const char* kStage = "synth";
constexpr std::size_t kMaxAttempts = 16;

double bump(double m, double centre, double width) {
  const double z = (m - centre) / width;
  return std::exp(-0.5 * z * z);
}

/// Raised cosine over 06:00-18:00, peak 1 at noon.
double solar_ridge(double m) {
  if (m < 360.0 || m > 1080.0) return 0.0;
  return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * (m - 360.0) / 720.0));
}

double residential_profile(double m) { return 0.35 + 0.25 * bump(m, 450.0, 90.0) + 0.6 * bump(m, 1140.0, 120.0); }

LocalSeconds parse_start(const std::string& date) {
  std::int64_t ms = 0;
  if (!parse_timestamp_ms(date + "T00:00:00", "", ms)) {
    throw Error(ErrorKind::validation, kStage, "bad start_date '" + date + "'");
  }
  return ms / 1000;
}

Edge edge_1based(std::size_t a, std::size_t b) { return {a - 1, b - 1}; }

std::vector<NodeId> ids_1based(std::initializer_list<std::size_t> labels) {
  std::vector<NodeId> out;
  for (auto l : labels) out.push_back(l - 1);
  return out;
}

std::vector<NodeId> range_1based(std::size_t first, std::size_t last) {
  std::vector<NodeId> out;
  for (std::size_t l = first; l <= last; ++l) out.push_back(l - 1);
  return out;
}

std::pair<MeasurementDataset, GroundTruth> generate_once(const SynthSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::size_t n = spec.n_nodes;
  const std::size_t steps_per_day = static_cast<std::size_t>(86400 / spec.interval_s);
  const std::size_t n_t = steps_per_day * spec.days;

  MeasurementDataset ds;
  ds.v_base = spec.v_base;
  ds.season_label = spec.season_label;
  for (NodeId i = 0; i < n; ++i) ds.topology.nodes.push_back({node_label(i, n), false});
  for (NodeId l : spec.load_nodes) ds.topology.nodes[l].has_load = true;
  ds.topology.edges = spec.edges;
  const LocalSeconds start = parse_start(spec.start_date);
  ds.timestamps.resize(n_t);
  for (std::size_t t = 0; t < n_t; ++t) ds.timestamps[t] = start + static_cast<LocalSeconds>(t) * spec.interval_s;
  ds.voltages = SeriesMatrix(n_t, n);
  ds.currents = SeriesMatrix(n_t, n);
  ds.sources.assign(n_t * n, SampleSource::estimated);
  for (NodeId l : spec.load_nodes) {
    for (std::size_t t = 0; t < n_t; ++t) ds.sources[t * n + l] = SampleSource::measured;
  }
  for (std::size_t t = 0; t < n_t; ++t) ds.sources[t * n] = SampleSource::measured;

  std::vector<double> offset(n, 0.0);
  for (const auto& g : spec.group_plan) {
    for (NodeId v : g.nodes) offset[v] = g.offset_v - spec.node_spread_v * unit(rng);
  }
  const std::set<NodeId> decorrelated(spec.decorrelated_loads.begin(), spec.decorrelated_loads.end());
  std::vector<double> load_base(n, 0.0);
  for (NodeId l : spec.load_nodes) load_base[l] = 20.0 + 40.0 * unit(rng);

  std::vector<double> own_walk(n, 0.0);
  for (NodeId l : spec.decorrelated_loads) own_walk[l] = gauss(rng);

  double sun = 1.0, load_day = 1.0, source_walk = 0.0;
  for (std::size_t t = 0; t < n_t; ++t) {
    if (t % steps_per_day == 0) {
      sun = 0.55 + 0.45 * unit(rng);
      load_day = 0.9 + 0.2 * unit(rng);
    }
    const double m = time_of_day_minutes(ds.timestamps[t]);
    source_walk = 0.98 * source_walk + gauss(rng);
    const double load = residential_profile(m) * load_day;
    double common = spec.v_nominal + spec.ridge_v * sun * solar_ridge(m) - spec.load_drop_v * load + source_walk;
    if (spec.tap_change && m >= spec.tap_change->minute) common += spec.tap_change->step_v;
    for (NodeId v = 0; v < n; ++v) ds.voltages.set(t, v, common + offset[v] + spec.noise_v * gauss(rng));
    for (NodeId l : spec.load_nodes) {
      double current = 0.0;
      if (decorrelated.count(l)) {
        own_walk[l] = 0.95 * own_walk[l] + 0.3122 * gauss(rng);  // unit stationary variance
        current = load_base[l] * std::max(0.05, 0.6 + 0.25 * own_walk[l]);
      } else {
        current = load_base[l] * load * (1.0 + 0.02 * gauss(rng));
      }
      ds.currents.set(t, l, current);
    }
  }

  GroundTruth truth;
  truth.groups = spec.group_plan;
  truth.decorrelated_loads = spec.decorrelated_loads;
  truth.tap_change = spec.tap_change;
  truth.seed_used = seed;

  if (spec.outlier_count > 0) {
    const auto clean_fit = fit_gaussian(present_voltages(ds));
    std::set<std::pair<NodeId, std::size_t>> taken;
    while (taken.size() < spec.outlier_count) {
      const NodeId v = static_cast<NodeId>(rng() % n);
      const std::size_t t = static_cast<std::size_t>(rng() % n_t);
      if (!taken.insert({v, t}).second) continue;
      const double sign = taken.size() % 2 == 1 ? 1.0 : -1.0;
      const double value = clean_fit.mu + sign * 9.0 * clean_fit.sigma;
      ds.voltages.set(t, v, value);
      truth.outliers.push_back({v, t, value});
    }
    std::sort(truth.outliers.begin(), truth.outliers.end(), [](const SampleRef& a, const SampleRef& b) {
      return std::pair(a.node, a.t_index) < std::pair(b.node, b.t_index);
    });
  }

  for (NodeId d : spec.decorrelated_loads) {
    const auto xd = ds.currents.column(d);
    for (const auto& g : spec.group_plan) {
      if (std::find(g.nodes.begin(), g.nodes.end(), d) == g.nodes.end()) continue;
      for (NodeId peer : g.nodes) {
        if (peer == d || !ds.topology.nodes[peer].has_load) continue;
        const auto r = pearson_correlation(xd, ds.currents.column(peer), 2);
        truth.max_decorrelated_peer_r = std::max(truth.max_decorrelated_peer_r, r ? std::abs(*r) : 0.0);
      }
    }
  }
  return {std::move(ds), std::move(truth)};
}

}  // namespace

std::string node_label(NodeId id, std::size_t n_nodes) {
  const std::size_t width = std::max<std::size_t>(2, std::to_string(n_nodes).size());
  std::string digits = std::to_string(id + 1);
  return "N" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

SynthSpec default_feeder_spec() {
  SynthSpec s;
  s.n_nodes = 49;
  // Planted group 1: N01-N20, N07 on a leaf.
  for (auto [a, b] : std::initializer_list<std::pair<std::size_t, std::size_t>>{
           {1, 2},   {2, 3},   {3, 4},   {4, 5},   {5, 6},   {6, 8},   {8, 9},   {9, 10},  {10, 11}, {11, 12},
           {6, 7},   {3, 13},  {13, 14}, {14, 15}, {9, 16},  {16, 17}, {11, 18}, {18, 19}, {19, 20},
           // group 1 -> group 2
           {12, 21},
           // planted group 2: N21-N33
           {21, 22}, {22, 23}, {23, 24}, {24, 25}, {25, 26}, {26, 27}, {23, 28}, {28, 29}, {25, 30}, {30, 31},
           {27, 32}, {32, 33},
           // group 2 -> group 3
           {27, 34},
           // planted group 3: N34-N49, N38 on a leaf
           {34, 35}, {35, 36}, {36, 37}, {37, 39}, {39, 40}, {40, 41}, {41, 42}, {37, 38}, {35, 43}, {43, 44},
           {40, 45}, {45, 46}, {42, 47}, {47, 48}, {48, 49}}) {
    s.edges.push_back(edge_1based(a, b));
  }
  s.load_nodes = ids_1based({3, 5, 7, 10, 15, 17, 24, 26, 29, 31, 36, 38, 41, 44, 46, 49});
  s.group_plan = {{range_1based(1, 20), 0.0}, {range_1based(21, 33), -40.0}, {range_1based(34, 49), -80.0}};
  s.decorrelated_loads = ids_1based({7, 38});
  s.outlier_count = 5;
  s.tap_change = TapChange{1188.0, 50.0};
  return s;
}

void check_spec(const SynthSpec& spec) {
  const auto fail = [](const std::string& why) { throw Error(ErrorKind::validation, kStage, why); };
  if (spec.n_nodes == 0) fail("n_nodes must be positive");
  if (spec.interval_s <= 0 || 86400 % spec.interval_s != 0) fail("interval_s must divide one day");
  if (spec.days == 0) fail("days must be positive");
  if (!(spec.v_nominal > 0.0) || !(spec.v_base > 0.0)) fail("voltages must be positive");
  if (spec.node_spread_v < 0.0 || spec.noise_v < 0.0) fail("spread and noise must be non-negative");
  for (const auto& e : spec.edges) {
    if (e.a >= spec.n_nodes || e.b >= spec.n_nodes || e.a == e.b) fail("invalid edge");
  }
  std::vector<int> cover(spec.n_nodes, 0);
  for (const auto& g : spec.group_plan) {
    for (NodeId v : g.nodes) {
      if (v >= spec.n_nodes) fail("group plan names node " + std::to_string(v + 1) + " beyond n_nodes");
      ++cover[v];
    }
  }
  if (std::any_of(cover.begin(), cover.end(), [](int c) { return c != 1; })) {
    fail("group plan must cover every node exactly once");
  }
  for (std::size_t i = 0; i < spec.group_plan.size(); ++i) {
    for (std::size_t j = i + 1; j < spec.group_plan.size(); ++j) {
      if (std::abs(spec.group_plan[i].offset_v - spec.group_plan[j].offset_v) <= spec.threshold_v) {
        fail("planted group offsets must differ by more than threshold_v");
      }
    }
  }
  if (spec.node_spread_v >= spec.threshold_v) fail("node_spread_v must stay below threshold_v");
  const std::set<NodeId> loads(spec.load_nodes.begin(), spec.load_nodes.end());
  for (NodeId l : spec.load_nodes) {
    if (l >= spec.n_nodes) fail("load node out of range");
  }
  for (NodeId d : spec.decorrelated_loads) {
    if (!loads.count(d)) fail("decorrelated node " + std::to_string(d + 1) + " is not a load node");
  }
  if (spec.outlier_count > spec.n_nodes * spec.days) fail("too many outliers");
  if (spec.tap_change && !(spec.tap_change->minute >= 0.0 && spec.tap_change->minute < kMinutesPerDay)) {
    fail("tap change minute must lie in [0, 1440)");
  }
  parse_start(spec.start_date);
}

std::pair<MeasurementDataset, GroundTruth> generate(const SynthSpec& spec) {
  check_spec(spec);
  for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto result = generate_once(spec, spec.seed + attempt);
    result.second.attempts = attempt + 1;
    if (result.second.max_decorrelated_peer_r < 0.3) return result;
  }
  throw Error(ErrorKind::stage, kStage,
              "could not decorrelate the planted loads in " + std::to_string(kMaxAttempts) + " attempts");
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using json = nlohmann::ordered_json;

std::vector<std::string> labels_of(const std::vector<NodeId>& ids, std::size_t n) {
  std::vector<std::string> out;
  for (NodeId id : ids) out.push_back(node_label(id, n));
  return out;
}

NodeId id_of(const std::string& label, std::size_t n) {
  if (label.size() < 2 || label[0] != 'N') throw Error(ErrorKind::validation, kStage, "bad node label '" + label + "'");
  std::size_t num = 0;
  try {
    num = std::stoul(label.substr(1));
  } catch (const std::exception&) {
    throw Error(ErrorKind::validation, kStage, "bad node label '" + label + "'");
  }
  if (num < 1 || num > n) throw Error(ErrorKind::validation, kStage, "node label '" + label + "' out of range");
  return num - 1;
}

std::vector<NodeId> ids_of(const json& arr, std::size_t n) {
  std::vector<NodeId> out;
  for (const auto& l : arr) out.push_back(id_of(l.get<std::string>(), n));
  return out;
}

}  // namespace

std::string spec_to_json(const SynthSpec& s) {
  json j;
  j["n_nodes"] = s.n_nodes;
  j["edges"] = json::array();
  for (const auto& e : s.edges) j["edges"].push_back({node_label(e.a, s.n_nodes), node_label(e.b, s.n_nodes)});
  j["load_nodes"] = labels_of(s.load_nodes, s.n_nodes);
  j["group_plan"] = json::array();
  for (const auto& g : s.group_plan) {
    j["group_plan"].push_back({{"nodes", labels_of(g.nodes, s.n_nodes)}, {"offset_v", g.offset_v}});
  }
  j["decorrelated_loads"] = labels_of(s.decorrelated_loads, s.n_nodes);
  j["outlier_count"] = s.outlier_count;
  if (s.tap_change) {
    j["tap_change"] = {{"minute", s.tap_change->minute}, {"step_v", s.tap_change->step_v}};
  } else {
    j["tap_change"] = nullptr;
  }
  j["interval_s"] = s.interval_s;
  j["days"] = s.days;
  j["seed"] = s.seed;
  j["v_nominal"] = s.v_nominal;
  j["v_base"] = s.v_base;
  j["threshold_v"] = s.threshold_v;
  j["node_spread_v"] = s.node_spread_v;
  j["noise_v"] = s.noise_v;
  j["ridge_v"] = s.ridge_v;
  j["load_drop_v"] = s.load_drop_v;
  j["start_date"] = s.start_date;
  j["season_label"] = s.season_label;
  return j.dump(2) + "\n";
}

SynthSpec spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::validation, kStage, std::string("synth spec is not valid JSON: ") + e.what());
  }
  SynthSpec s = default_feeder_spec();
  try {
    s.n_nodes = j.value("n_nodes", s.n_nodes);
    const std::size_t n = s.n_nodes;
    if (j.contains("edges")) {
      s.edges.clear();
      for (const auto& e : j["edges"]) {
        s.edges.push_back({id_of(e.at(0).get<std::string>(), n), id_of(e.at(1).get<std::string>(), n)});
      }
    }
    if (j.contains("load_nodes")) s.load_nodes = ids_of(j["load_nodes"], n);
    if (j.contains("group_plan")) {
      s.group_plan.clear();
      for (const auto& g : j["group_plan"]) s.group_plan.push_back({ids_of(g.at("nodes"), n), g.at("offset_v")});
    }
    if (j.contains("decorrelated_loads")) s.decorrelated_loads = ids_of(j["decorrelated_loads"], n);
    s.outlier_count = j.value("outlier_count", s.outlier_count);
    if (j.contains("tap_change")) {
      if (j["tap_change"].is_null()) {
        s.tap_change.reset();
      } else {
        s.tap_change = TapChange{j["tap_change"].at("minute"), j["tap_change"].at("step_v")};
      }
    }
    s.interval_s = j.value("interval_s", s.interval_s);
    s.days = j.value("days", s.days);
    s.seed = j.value("seed", s.seed);
    s.v_nominal = j.value("v_nominal", s.v_nominal);
    s.v_base = j.value("v_base", s.v_base);
    s.threshold_v = j.value("threshold_v", s.threshold_v);
    s.node_spread_v = j.value("node_spread_v", s.node_spread_v);
    s.noise_v = j.value("noise_v", s.noise_v);
    s.ridge_v = j.value("ridge_v", s.ridge_v);
    s.load_drop_v = j.value("load_drop_v", s.load_drop_v);
    s.start_date = j.value("start_date", s.start_date);
    s.season_label = j.value("season_label", s.season_label);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::validation, kStage, std::string("bad synth spec field: ") + e.what());
  }
  return s;
}

std::string ground_truth_to_json(const GroundTruth& truth, const MeasurementDataset& ds) {
  json j;
  const auto label = [&](NodeId id) { return ds.topology.nodes[id].label; };
  j["seed_used"] = truth.seed_used;
  j["attempts"] = truth.attempts;
  j["groups"] = json::array();
  for (const auto& g : truth.groups) {
    json nodes = json::array();
    for (NodeId v : g.nodes) nodes.push_back(label(v));
    j["groups"].push_back({{"nodes", nodes}, {"offset_v", g.offset_v}});
  }
  j["decorrelated_loads"] = json::array();
  for (NodeId v : truth.decorrelated_loads) j["decorrelated_loads"].push_back(label(v));
  j["max_decorrelated_peer_r"] = truth.max_decorrelated_peer_r;
  j["outliers"] = json::array();
  for (const auto& o : truth.outliers) {
    j["outliers"].push_back(
        {{"node", label(o.node)}, {"timestamp", format_timestamp(ds.timestamps[o.t_index])}, {"voltage", o.value}});
  }
  if (truth.tap_change) {
    j["tap_change"] = {{"minute", truth.tap_change->minute},
                       {"clock", format_clock(truth.tap_change->minute)},
                       {"step_v", truth.tap_change->step_v}};
  } else {
    j["tap_change"] = nullptr;
  }
  return j.dump(2) + "\n";
}

}  // namespace critcase
