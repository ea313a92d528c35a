#include "critcase/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"

#include "critcase/plots.hpp"

namespace critcase {
namespace {

using json = nlohmann::ordered_json;

template <typename F>
auto in_stage(const char* stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::stage, stage, e.what());
  }
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "report", "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::io, "report", "write failure on " + path.string());
}

std::string read_file(const std::filesystem::path& path, const char* stage) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, stage, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json sample_json(const SampleRef& s, const MeasurementDataset& ds) {
  return {{"node", ds.topology.nodes[s.node].label},
          {"timestamp", format_timestamp(ds.timestamps[s.t_index])},
          {"clock", format_clock(time_of_day_minutes(s.t_index, ds))},
          {"voltage", s.value}};
}

json fit_json(const GaussianFit& f) { return {{"mu", f.mu}, {"sigma", f.sigma}, {"n", f.n}}; }

json labels_json(const std::vector<NodeId>& nodes, const Topology& topo) {
  json arr = json::array();
  for (NodeId n : nodes) arr.push_back(topo.nodes[n].label);
  return arr;
}

std::filesystem::path resolve(const PipelineConfig& config, const std::filesystem::path& p) {
  return p.is_relative() && !config.base_dir.empty() ? config.base_dir / p : p;
}

}  // namespace

std::string config_to_json(const PipelineConfig& c) {
  json j;
  j["ingest"] = {{"measurement_path", c.ingest.measurement_path.generic_string()},
                 {"topology_path", c.ingest.topology_path.generic_string()},
                 {"v_base", c.ingest.v_base},
                 {"expected_interval_s", c.ingest.expected_interval_s},
                 {"timezone", c.ingest.timezone},
                 {"season_label", c.ingest.season_label}};
  j["bad_data"] = {{"k_sigma", c.bad_data.k_sigma}, {"scope", to_string(c.bad_data.scope)}};
  j["grouping"] = {{"dv_threshold_pct", c.grouping.dv_threshold_pct},
                   {"dv_metric", to_string(c.grouping.dv_metric)},
                   {"corr_limit", c.grouping.corr_limit},
                   {"corr_signal", to_string(c.grouping.corr_signal)},
                   {"min_support", c.grouping.min_support}};
  const auto& k = c.critical;
  j["critical"] = {{"k_tail", k.k_tail},
                   {"k_max", k.elbow.k_max},
                   {"sse_ratio", k.elbow.ratio},
                   {"knee_floor", k.elbow.knee_floor},
                   {"daylight", {k.daylight.start_min, k.daylight.end_min}},
                   {"per_cluster", k.per_cluster},
                   {"mode", to_string(k.mode)},
                   {"include_non_daylight", k.include_non_daylight},
                   {"seed", k.seed},
                   {"restarts", k.elbow.kmeans.restarts},
                   {"max_iter", k.elbow.kmeans.max_iter}};
  return j.dump(2) + "\n";
}

PipelineConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::validation, "config", std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  try {
    if (j.contains("ingest")) {
      const auto& i = j["ingest"];
      c.ingest.measurement_path = i.value("measurement_path", std::string());
      c.ingest.topology_path = i.value("topology_path", std::string());
      c.ingest.v_base = i.value("v_base", c.ingest.v_base);
      c.ingest.expected_interval_s = i.value("expected_interval_s", c.ingest.expected_interval_s);
      c.ingest.timezone = i.value("timezone", c.ingest.timezone);
      c.ingest.season_label = i.value("season_label", c.ingest.season_label);
    }
    if (j.contains("bad_data")) {
      const auto& b = j["bad_data"];
      c.bad_data.k_sigma = b.value("k_sigma", c.bad_data.k_sigma);
      if (b.contains("scope")) c.bad_data.scope = fit_scope_from_string(b["scope"].get<std::string>());
    }
    if (j.contains("grouping")) {
      const auto& g = j["grouping"];
      c.grouping.dv_threshold_pct = g.value("dv_threshold_pct", c.grouping.dv_threshold_pct);
      if (g.contains("dv_metric")) c.grouping.dv_metric = diff_metric_from_string(g["dv_metric"].get<std::string>());
      c.grouping.corr_limit = g.value("corr_limit", c.grouping.corr_limit);
      if (g.contains("corr_signal")) {
        c.grouping.corr_signal = correlation_signal_from_string(g["corr_signal"].get<std::string>());
      }
      c.grouping.min_support = g.value("min_support", c.grouping.min_support);
    }
    if (j.contains("critical")) {
      const auto& k = j["critical"];
      auto& o = c.critical;
      o.k_tail = k.value("k_tail", o.k_tail);
      o.elbow.k_max = k.value("k_max", o.elbow.k_max);
      o.elbow.ratio = k.value("sse_ratio", o.elbow.ratio);
      o.elbow.knee_floor = k.value("knee_floor", o.elbow.knee_floor);
      if (k.contains("daylight")) {
        o.daylight.start_min = k["daylight"].at(0).get<double>();
        o.daylight.end_min = k["daylight"].at(1).get<double>();
      }
      o.per_cluster = k.value("per_cluster", o.per_cluster);
      if (k.contains("mode")) o.mode = representative_mode_from_string(k["mode"].get<std::string>());
      o.include_non_daylight = k.value("include_non_daylight", o.include_non_daylight);
      o.seed = k.value("seed", o.seed);
      o.elbow.kmeans.restarts = k.value("restarts", o.elbow.kmeans.restarts);
      o.elbow.kmeans.max_iter = k.value("max_iter", o.elbow.kmeans.max_iter);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::validation, "config", std::string("bad config field: ") + e.what());
  }
  return c;
}

PipelineConfig load_config_file(const std::filesystem::path& path) {
  PipelineConfig c = config_from_json(read_file(path, "config"));
  c.base_dir = path.parent_path();
  return c;
}

std::vector<std::string> check_config(const PipelineConfig& c) {
  std::vector<std::string> p;
  if (c.ingest.measurement_path.empty()) p.push_back("ingest.measurement_path is required");
  if (c.ingest.topology_path.empty()) p.push_back("ingest.topology_path is required");
  if (!(c.ingest.v_base > 0.0)) p.push_back("ingest.v_base must be > 0");
  if (c.ingest.expected_interval_s <= 0) p.push_back("ingest.expected_interval_s must be > 0");
  if (!(c.bad_data.k_sigma > 0.0)) p.push_back("bad_data.k_sigma must be > 0");
  if (!(c.grouping.dv_threshold_pct >= 0.0)) p.push_back("grouping.dv_threshold_pct must be >= 0");
  if (!(c.grouping.corr_limit >= -1.0 && c.grouping.corr_limit <= 1.0)) {
    p.push_back("grouping.corr_limit must lie in [-1, 1]");
  }
  if (c.grouping.min_support < 2) p.push_back("grouping.min_support must be >= 2");
  const auto& k = c.critical;
  if (!(k.k_tail >= 0.0) || !std::isfinite(k.k_tail)) p.push_back("critical.k_tail must be a finite value >= 0");
  if (k.elbow.k_max < 1) p.push_back("critical.k_max must be >= 1");
  if (!(k.elbow.ratio > 0.0 && k.elbow.ratio <= 1.0)) p.push_back("critical.sse_ratio must lie in (0, 1]");
  if (!(k.elbow.knee_floor >= 0.0)) p.push_back("critical.knee_floor must be >= 0");
  if (!(k.daylight.start_min >= 0.0 && k.daylight.end_min < kMinutesPerDay &&
        k.daylight.start_min < k.daylight.end_min)) {
    p.push_back("critical.daylight must satisfy 0 <= start < end < 1440");
  }
  if (k.per_cluster < 1) p.push_back("critical.per_cluster must be >= 1");
  if (k.elbow.kmeans.restarts < 1) p.push_back("critical.restarts must be >= 1");
  if (k.elbow.kmeans.max_iter < 1) p.push_back("critical.max_iter must be >= 1");
  return p;
}

PipelineResult run_pipeline(const PipelineConfig& config, std::size_t threads) {
  if (const auto problems = check_config(config); !problems.empty()) {
    throw Error(ErrorKind::validation, "config", problems.front());
  }
  IngestConfig ingest = config.ingest;
  ingest.measurement_path = resolve(config, ingest.measurement_path);
  ingest.topology_path = resolve(config, ingest.topology_path);
  auto dataset = in_stage("ingest", [&] { return load_dataset(ingest); });
  return run_pipeline(config, std::move(dataset), threads);
}

PipelineResult run_pipeline(const PipelineConfig& config, MeasurementDataset dataset, std::size_t threads) {
  if (const auto problems = check_config(config); !problems.empty()) {
    // Paths are irrelevant for in-memory datasets.
    for (const auto& p : problems) {
      if (p.find("_path") == std::string::npos) throw Error(ErrorKind::validation, "config", p);
    }
  }
  PipelineResult r;
  r.dataset = std::move(dataset);

  if (const auto violations = validate_dataset(r.dataset); !violations.empty()) {
    std::string msg = std::to_string(violations.size()) + " dataset violation(s); first: " + violations.front().describe();
    throw Error(ErrorKind::validation, "validate", msg);
  }
  if (!r.dataset.topology.is_connected()) r.warnings.push_back("topology is not connected");

  auto bad = in_stage("bad_data", [&] {
    return detect_bad_data(r.dataset, config.bad_data.k_sigma, config.bad_data.scope);
  });
  r.clean = std::move(bad.clean);
  r.ledger = std::move(bad.ledger);
  r.warnings.insert(r.warnings.end(), bad.warnings.begin(), bad.warnings.end());

  const auto& g = config.grouping;
  if (g.dv_threshold_pct < kThresholdPctSaneMin || g.dv_threshold_pct > kThresholdPctSaneMax) {
    r.warnings.push_back("dv_threshold_pct " + format_double(g.dv_threshold_pct) + " is outside the usual [" +
                         format_double(kThresholdPctSaneMin) + ", " + format_double(kThresholdPctSaneMax) +
                         "] % range");
  }
  r.diff = in_stage("grouping", [&] { return voltage_diff_matrix(r.clean, g.dv_metric, g.min_support); });
  r.voltage_groups = in_stage("grouping", [&] {
    return group_by_voltage(r.clean.topology, r.diff, g.dv_threshold_pct, r.clean.v_base);
  });
  r.refined = in_stage("grouping", [&] {
    return refine_by_correlation(r.voltage_groups, r.clean, g.corr_limit, g.corr_signal, g.min_support);
  });

  r.report = in_stage("critical", [&] { return analyze_groups(r.refined.partition, r.clean, config.critical, threads); });
  return r;
}

std::string report_to_json(const PipelineResult& r, const PipelineConfig& config) {
  const auto& ds = r.clean;
  const auto& topo = ds.topology;
  json j;
  j["tool"] = "critcase";
  j["version"] = kVersion;
  j["season_label"] = ds.season_label;

  std::size_t loads = 0;
  for (const auto& n : topo.nodes) loads += n.has_load ? 1 : 0;
  j["dataset"] = {{"nodes", ds.node_count()},
                  {"load_nodes", loads},
                  {"edges", topo.edges.size()},
                  {"timestamps", ds.time_count()},
                  {"interval_s", ds.interval_s().value_or(0)},
                  {"first", ds.timestamps.empty() ? "" : format_timestamp(ds.timestamps.front())},
                  {"last", ds.timestamps.empty() ? "" : format_timestamp(ds.timestamps.back())},
                  {"v_base", ds.v_base},
                  {"voltage_samples", r.dataset.voltages.present_count()}};
  j["warnings"] = r.warnings;

  json bands = json::array();
  for (const auto& b : r.ledger.bands) {
    bands.push_back({{"node", b.node ? json(topo.nodes[*b.node].label) : json(nullptr)},
                     {"fit", fit_json(b.fit)},
                     {"band_lo", b.lo},
                     {"band_hi", b.hi}});
  }
  j["bad_data"] = {{"scope", to_string(r.ledger.scope)},
                   {"k_sigma", r.ledger.k_sigma},
                   {"removed", r.ledger.removed.size()},
                   {"bands", bands}};

  json groups = json::array();
  for (std::size_t i = 0; i < r.refined.partition.groups.size(); ++i) {
    const auto& grp = r.refined.partition.groups[i];
    groups.push_back({{"id", i + 1}, {"origin", to_string(grp.origin)}, {"nodes", labels_json(grp.nodes, topo)}});
  }
  json scores = json::array();
  for (const auto& s : r.refined.scores) {
    scores.push_back({{"node", topo.nodes[s.node].label},
                      {"voltage_component", s.group + 1},
                      {"mean_correlation", s.mean_correlation ? json(*s.mean_correlation) : json(nullptr)},
                      {"split", s.split}});
  }
  std::size_t splits = 0;
  for (const auto& grp : r.refined.partition.groups) splits += grp.origin == GroupOrigin::correlation_split;
  j["grouping"] = {{"dv_metric", to_string(config.grouping.dv_metric)},
                   {"dv_threshold_pct", config.grouping.dv_threshold_pct},
                   {"dv_threshold_v", config.grouping.dv_threshold_pct / 100.0 * ds.v_base},
                   {"corr_limit", config.grouping.corr_limit},
                   {"corr_signal", to_string(config.grouping.corr_signal)},
                   {"voltage_components", r.voltage_groups.groups.size()},
                   {"correlation_splits", splits},
                   {"groups", groups},
                   {"load_scores", scores}};

  json per_group = json::array();
  json cases = json::array();
  for (const auto& g : r.report.groups) {
    json gj;
    gj["id"] = g.group_id;
    gj["origin"] = to_string(g.group.origin);
    gj["nodes"] = labels_json(g.group.nodes, topo);
    gj["tail"] = {{"fit", fit_json(g.tail.fit)},
                  {"k_tail", g.tail.k_tail},
                  {"threshold", g.tail.threshold},
                  {"candidates", g.tail.candidates.size()}};
    if (g.elbow) {
      gj["elbow"] = {{"sse_by_k", g.elbow->sse_by_k},
                     {"chosen_k", g.elbow->chosen_k},
                     {"rule", to_string(g.elbow->rule)},
                     {"knee_k", g.elbow->knee_k},
                     {"knee_distance", g.elbow->knee_distance}};
    } else {
      gj["elbow"] = nullptr;
    }
    json clusters = json::array();
    if (g.model) {
      for (std::size_t c = 0; c < g.model->k; ++c) {
        const auto& cen = g.model->centroids[c];
        json reps = json::array();
        for (const auto& s : g.clusters[c].representatives) {
          reps.push_back(sample_json(s, ds));
          json cj = sample_json(s, ds);
          cases.push_back({{"group", g.group_id}, {"cluster", c + 1}, {"node", cj["node"]},
                           {"timestamp", cj["timestamp"]}, {"voltage", s.value}});
        }
        clusters.push_back({{"index", c + 1},
                            {"size", g.clusters[c].size},
                            {"centroid",
                             {{"volts", cen.volts},
                              {"minutes", cen.minutes},
                              {"clock", format_clock(cen.minutes)},
                              {"v_norm", cen.v_norm},
                              {"t_norm", cen.t_norm}}},
                            {"daylight", g.clusters[c].daylight},
                            {"representatives", reps}});
      }
      gj["kmeans"] = {{"k", g.model->k},
                      {"sse", g.model->sse},
                      {"iterations", g.model->iterations},
                      {"converged", g.model->converged},
                      {"seed", g.model->seed},
                      {"restarts", g.model->restarts}};
    } else {
      gj["kmeans"] = nullptr;
    }
    gj["clusters"] = clusters;
    gj["notes"] = g.notes;
    per_group.push_back(gj);
  }
  j["groups"] = per_group;
  j["critical_cases"] = cases;
  return j.dump(2) + "\n";
}

void write_run_directory(const PipelineResult& r, const PipelineConfig& config, const std::filesystem::path& out) {
  std::error_code ec;
  std::filesystem::create_directories(out / "matrices", ec);
  if (ec) throw Error(ErrorKind::io, "report", "cannot create " + out.string() + ": " + ec.message());
  const auto& ds = r.clean;

  write_file(out / "config.echo", config_to_json(config));
  write_file(out / "report.json", report_to_json(r, config));
  {
    std::ostringstream os;
    write_ledger_csv(os, r.ledger, ds);
    write_file(out / "ledger.csv", os.str());
  }
  {
    std::vector<std::string> labels;
    for (const auto& n : ds.topology.nodes) labels.push_back(n.label);
    std::ostringstream diff;
    write_pair_matrix_csv(diff, r.diff.d, labels);
    write_file(out / "matrices" / "voltage_diff.csv", diff.str());

    std::vector<std::string> load_labels;
    for (NodeId n : r.refined.correlation.nodes) load_labels.push_back(ds.topology.nodes[n].label);
    std::ostringstream corr;
    write_pair_matrix_csv(corr, r.refined.correlation.r, load_labels);
    write_file(out / "matrices" / "correlation.csv", corr.str());

    std::ostringstream part;
    write_partition_csv(part, r.refined.partition, ds.topology);
    write_file(out / "matrices" / "partition.csv", part.str());
  }
  in_stage("report", [&] {
    emit_pooled_qq(present_voltages(r.dataset), r.ledger.k_sigma, out / "qq_pooled.svg", out / "qq_pooled.csv");
    return 0;
  });

  for (const auto& g : r.report.groups) {
    const auto dir = out / "groups" / std::to_string(g.group_id);
    std::filesystem::create_directories(dir / "plots", ec);
    if (ec) throw Error(ErrorKind::io, "report", "cannot create " + dir.string() + ": " + ec.message());
    if (g.elbow) {
      std::ostringstream os;
      const auto dist = knee_distances(g.elbow->sse_by_k);
      os << "k,sse,knee_distance,chosen\n";
      for (std::size_t k = 1; k <= g.elbow->k_max(); ++k) {
        os << k << ',' << format_double(g.elbow->sse_by_k[k - 1]) << ',' << format_double(dist[k - 1]) << ','
           << (k == g.elbow->chosen_k ? 1 : 0) << '\n';
      }
      write_file(dir / "elbow.csv", os.str());
    }
    if (g.model) {
      std::ostringstream os;
      os << "node,timestamp,minutes,voltage,v_norm,t_norm,cluster\n";
      const auto& pts = g.candidates.points;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        os << ds.topology.nodes[pts[i].origin.node].label << ',' << format_timestamp(ds.timestamps[pts[i].origin.t_index])
           << ',' << format_double(pts[i].minutes) << ',' << format_double(pts[i].origin.value) << ','
           << format_double(pts[i].v_norm) << ',' << format_double(pts[i].t_norm) << ','
           << g.model->assignment[i] + 1 << '\n';
      }
      write_file(dir / "clusters.csv", os.str());
      std::ostringstream cen;
      cen << "cluster,volts,minutes,v_norm,t_norm,size,daylight\n";
      for (std::size_t c = 0; c < g.model->k; ++c) {
        const auto& ct = g.model->centroids[c];
        cen << c + 1 << ',' << format_double(ct.volts) << ',' << format_double(ct.minutes) << ','
            << format_double(ct.v_norm) << ',' << format_double(ct.t_norm) << ',' << g.clusters[c].size << ','
            << (g.clusters[c].daylight ? 1 : 0) << '\n';
      }
      write_file(dir / "centroids.csv", cen.str());
    }
    emit_plots(g, ds, config.critical.elbow.ratio, dir / "plots");
  }
}

}  // namespace critcase
