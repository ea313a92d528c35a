#include "critcase/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

namespace critcase {
namespace {

constexpr const char* kStage = "ingest";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

bool parse_fixed_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  return parse_number(s.substr(pos, len), out);
}

std::int64_t civil_seconds(int y, unsigned mo, unsigned d, int h, int mi, int s) {
  using namespace std::chrono;
  const sys_days day{year{y} / month{mo} / std::chrono::day{d}};
  return day.time_since_epoch().count() * 86400LL + h * 3600LL + mi * 60LL + s;
}

std::mutex& tz_mutex() {
  static std::mutex m;
  return m;
}

bool zone_exists(const std::string& zone) {
  if (zone == "UTC" || zone == "Etc/UTC") return true;
  if (zone.find("..") != std::string::npos) return false;
  const char* dir = std::getenv("TZDIR");
  const std::filesystem::path root = dir ? dir : "/usr/share/zoneinfo";
  std::error_code ec;
  return std::filesystem::is_regular_file(root / zone, ec);
}

/// Civil local seconds in `zone` for a UTC instant.
std::int64_t utc_to_local(std::int64_t utc_seconds, const std::string& zone) {
  std::lock_guard lock(tz_mutex());
  const char* prev = std::getenv("TZ");
  const std::string saved = prev ? prev : "";
  const bool had_prev = prev != nullptr;
  ::setenv("TZ", zone.c_str(), 1);
  ::tzset();
  const std::time_t tt = static_cast<std::time_t>(utc_seconds);
  std::tm tm{};
  ::localtime_r(&tt, &tm);
  if (had_prev) {
    ::setenv("TZ", saved.c_str(), 1);
  } else {
    ::unsetenv("TZ");
  }
  ::tzset();
  return civil_seconds(tm.tm_year + 1900, static_cast<unsigned>(tm.tm_mon + 1),
                       static_cast<unsigned>(tm.tm_mday), tm.tm_hour, tm.tm_min, tm.tm_sec);
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, kStage, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (in.bad()) throw Error(ErrorKind::io, kStage, "read failure on " + path.string());
  return lines;
}

[[noreturn]] void malformed(const std::filesystem::path& path, std::size_t line_no, const std::string& why) {
  throw Error(ErrorKind::stage, kStage,
              path.filename().string() + ":" + std::to_string(line_no) + ": " + why);
}

struct Record {
  std::int64_t t = 0;
  std::string label;
  std::optional<double> voltage;
  std::optional<double> current;
  SampleSource source = SampleSource::unspecified;
  std::size_t line_no = 0;
};

std::optional<double> parse_optional_value(std::string_view field, const std::filesystem::path& path,
                                           std::size_t line_no, const char* what) {
  if (field.empty()) return std::nullopt;
  double v = 0.0;
  if (!parse_number(field, v) || !std::isfinite(v)) {
    malformed(path, line_no, std::string("bad ") + what + " '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace

bool parse_timestamp_ms(std::string_view text, const std::string& timezone, std::int64_t& out_ms) {
  const std::string_view s = trim(text);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (!parse_fixed_int(s, 0, 4, y) || s.size() < 16 || s[4] != '-' || !parse_fixed_int(s, 5, 2, mo) ||
      s[7] != '-' || !parse_fixed_int(s, 8, 2, d) || (s[10] != 'T' && s[10] != ' ') ||
      !parse_fixed_int(s, 11, 2, h) || s[13] != ':' || !parse_fixed_int(s, 14, 2, mi)) {
    return false;
  }
  std::size_t pos = 16;
  std::int64_t millis = 0;
  if (pos < s.size() && s[pos] == ':') {
    if (!parse_fixed_int(s, pos + 1, 2, sec)) return false;
    pos += 3;
    if (pos < s.size() && s[pos] == '.') {
      ++pos;
      int digits = 0;
      std::int64_t frac = 0;
      while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
        if (digits < 3) {
          frac = frac * 10 + (s[pos] - '0');
          ++digits;
        }
        ++pos;
      }
      if (digits == 0) return false;
      while (digits < 3) {
        frac *= 10;
        ++digits;
      }
      millis = frac;
    }
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 60) return false;
  using namespace std::chrono;
  if (!year_month_day{year{y} / month{static_cast<unsigned>(mo)} / day{static_cast<unsigned>(d)}}.ok()) {
    return false;
  }
  std::int64_t civil = civil_seconds(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h, mi, sec);

  const std::string_view rest = s.substr(pos);
  if (!rest.empty()) {
    std::int64_t offset_s = 0;
    if (rest == "Z") {
      offset_s = 0;
    } else if (rest[0] == '+' || rest[0] == '-') {
      int oh = 0, om = 0;
      if (!parse_fixed_int(rest, 1, 2, oh)) return false;
      if (rest.size() == 6 && rest[3] == ':') {
        if (!parse_fixed_int(rest, 4, 2, om)) return false;
      } else if (rest.size() == 5) {
        if (!parse_fixed_int(rest, 3, 2, om)) return false;
      } else if (rest.size() != 3) {
        return false;
      }
      offset_s = (oh * 3600LL + om * 60LL) * (rest[0] == '-' ? -1 : 1);
    } else {
      return false;
    }
    if (timezone.empty() || !zone_exists(timezone)) return false;
    civil = utc_to_local(civil - offset_s, timezone);
  }
  out_ms = civil * 1000 + millis;
  return true;
}

MeasurementDataset load_dataset(const IngestConfig& config) {
  if (!(config.v_base > 0.0)) throw Error(ErrorKind::validation, kStage, "v_base must be positive");
  if (config.expected_interval_s <= 0) {
    throw Error(ErrorKind::validation, kStage, "expected_interval_s must be positive");
  }
  const std::int64_t interval_ms = config.expected_interval_s * 1000;

  // Topology first so node labels declared only there are still indexed.
  std::map<std::string, bool> node_rows;
  std::vector<std::pair<std::string, std::string>> edge_labels;
  {
    const auto lines = read_lines(config.topology_path);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const std::size_t line_no = i + 1;
      if (trim(lines[i]).empty()) continue;
      const auto f = split_fields(lines[i]);
      if (f.size() != 3) malformed(config.topology_path, line_no, "expected 3 fields");
      if (f[0] == "edge") {
        if (f[1].empty() || f[2].empty()) malformed(config.topology_path, line_no, "empty edge endpoint");
        edge_labels.emplace_back(std::string(f[1]), std::string(f[2]));
      } else if (f[0] == "node") {
        if (f[1].empty()) malformed(config.topology_path, line_no, "empty node label");
        if (f[2] != "0" && f[2] != "1") malformed(config.topology_path, line_no, "has_load must be 0 or 1");
        const bool has_load = f[2] == "1";
        const auto [it, inserted] = node_rows.emplace(std::string(f[1]), has_load);
        if (!inserted && it->second != has_load) {
          malformed(config.topology_path, line_no, "conflicting node row for " + std::string(f[1]));
        }
      } else {
        malformed(config.topology_path, line_no, "unknown record kind '" + std::string(f[0]) + "'");
      }
    }
  }

  std::vector<Record> records;
  {
    const auto lines = read_lines(config.measurement_path);
    if (lines.empty()) malformed(config.measurement_path, 1, "missing header row");
    const auto header = split_fields(lines[0]);
    std::map<std::string_view, std::size_t> col;
    for (std::size_t c = 0; c < header.size(); ++c) col.emplace(header[c], c);
    for (const char* required : {"timestamp", "node", "voltage_v"}) {
      if (!col.count(required)) malformed(config.measurement_path, 1, std::string("missing column ") + required);
    }
    const std::size_t c_ts = col["timestamp"];
    const std::size_t c_node = col["node"];
    const std::size_t c_v = col["voltage_v"];
    const auto c_i = col.count("current_a") ? std::optional<std::size_t>(col["current_a"]) : std::nullopt;
    const auto c_src = col.count("source") ? std::optional<std::size_t>(col["source"]) : std::nullopt;

    records.reserve(lines.size());
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const std::size_t line_no = i + 1;
      if (trim(lines[i]).empty()) continue;
      const auto f = split_fields(lines[i]);
      if (f.size() != header.size()) {
        malformed(config.measurement_path, line_no,
                  "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
      }
      Record r;
      r.line_no = line_no;
      std::int64_t ms = 0;
      if (!parse_timestamp_ms(f[c_ts], config.timezone, ms)) {
        malformed(config.measurement_path, line_no, "bad timestamp '" + std::string(f[c_ts]) + "'");
      }
      const std::int64_t slot = floor_div(ms + interval_ms / 2, interval_ms);
      const std::int64_t snapped = slot * interval_ms;
      if (std::llabs(ms - snapped) > 1000) {
        malformed(config.measurement_path, line_no,
                  "timestamp '" + std::string(f[c_ts]) + "' is off the " +
                      std::to_string(config.expected_interval_s) + " s grid by more than 1 s");
      }
      r.t = snapped / 1000;
      if (f[c_node].empty()) malformed(config.measurement_path, line_no, "empty node label");
      r.label = std::string(f[c_node]);
      r.voltage = parse_optional_value(f[c_v], config.measurement_path, line_no, "voltage");
      if (c_i) r.current = parse_optional_value(f[*c_i], config.measurement_path, line_no, "current");
      if (c_src) {
        const auto s = f[*c_src];
        if (s == "measured") {
          r.source = SampleSource::measured;
        } else if (s == "estimated") {
          r.source = SampleSource::estimated;
        } else if (!s.empty()) {
          malformed(config.measurement_path, line_no, "bad source '" + std::string(s) + "'");
        }
      }
      records.push_back(std::move(r));
    }
  }
  if (records.empty()) throw Error(ErrorKind::stage, kStage, "no measurement records");

  std::map<std::string, NodeId> ids;
  for (const auto& [label, _] : node_rows) ids.emplace(label, 0);
  for (const auto& [a, b] : edge_labels) {
    ids.emplace(a, 0);
    ids.emplace(b, 0);
  }
  for (const auto& r : records) ids.emplace(r.label, 0);
  MeasurementDataset ds;
  ds.v_base = config.v_base;
  ds.season_label = config.season_label;
  {
    NodeId next = 0;
    for (auto& [label, id] : ids) {
      id = next++;
      const auto it = node_rows.find(label);
      ds.topology.nodes.push_back({label, it != node_rows.end() && it->second});
    }
  }
  for (const auto& [a, b] : edge_labels) ds.topology.edges.push_back({ids.at(a), ids.at(b)});

  const auto [lo, hi] = std::minmax_element(records.begin(), records.end(),
                                            [](const Record& x, const Record& y) { return x.t < y.t; });
  const std::int64_t t0 = lo->t;
  const std::int64_t n_t = (hi->t - t0) / config.expected_interval_s + 1;
  const std::size_t n_nodes = ds.topology.node_count();
  ds.timestamps.resize(static_cast<std::size_t>(n_t));
  for (std::int64_t i = 0; i < n_t; ++i) ds.timestamps[i] = t0 + i * config.expected_interval_s;
  ds.voltages = SeriesMatrix(ds.timestamps.size(), n_nodes);
  ds.currents = SeriesMatrix(ds.timestamps.size(), n_nodes);
  ds.sources.assign(ds.timestamps.size() * n_nodes, SampleSource::unspecified);

  std::vector<char> seen(ds.timestamps.size() * n_nodes, 0);
  for (const auto& r : records) {
    const auto t = static_cast<std::size_t>((r.t - t0) / config.expected_interval_s);
    const NodeId n = ids.at(r.label);
    const std::size_t cell = t * n_nodes + n;
    if (seen[cell]) {
      if (ds.voltages.at(t, n) != r.voltage || ds.currents.at(t, n) != r.current) {
        throw Error(ErrorKind::stage, kStage,
                    config.measurement_path.filename().string() + ":" + std::to_string(r.line_no) +
                        ": conflicting duplicate record for node " + r.label + " at " +
                        format_timestamp(r.t));
      }
      continue;
    }
    seen[cell] = 1;
    if (r.voltage) ds.voltages.set(t, n, *r.voltage);
    if (r.current) ds.currents.set(t, n, *r.current);
    ds.sources[cell] = r.source;
  }
  return ds;
}

void write_dataset(const MeasurementDataset& ds, const std::filesystem::path& measurement_path,
                   const std::filesystem::path& topology_path) {
  {
    std::ofstream out(measurement_path);
    if (!out) throw Error(ErrorKind::io, kStage, "cannot write " + measurement_path.string());
    out << "timestamp,node,voltage_v,current_a,source\n";
    for (std::size_t t = 0; t < ds.time_count(); ++t) {
      const std::string ts = format_timestamp(ds.timestamps[t]);
      for (NodeId n = 0; n < ds.node_count(); ++n) {
        const auto src = ds.source(t, n);
        if (!ds.voltages.present(t, n) && !ds.currents.present(t, n) && src == SampleSource::unspecified) {
          continue;
        }
        out << ts << ',' << ds.topology.nodes[n].label << ',';
        if (ds.voltages.present(t, n)) out << format_double(ds.voltages.value(t, n));
        out << ',';
        if (ds.currents.present(t, n)) out << format_double(ds.currents.value(t, n));
        out << ',';
        if (src == SampleSource::measured) out << "measured";
        if (src == SampleSource::estimated) out << "estimated";
        out << '\n';
      }
    }
    if (!out) throw Error(ErrorKind::io, kStage, "write failure on " + measurement_path.string());
  }
  {
    std::ofstream out(topology_path);
    if (!out) throw Error(ErrorKind::io, kStage, "cannot write " + topology_path.string());
    out << "record,field1,field2\n";
    for (const auto& node : ds.topology.nodes) {
      out << "node," << node.label << ',' << (node.has_load ? 1 : 0) << '\n';
    }
    for (const auto& e : ds.topology.edges) {
      out << "edge," << ds.topology.nodes[e.a].label << ',' << ds.topology.nodes[e.b].label << '\n';
    }
    if (!out) throw Error(ErrorKind::io, kStage, "write failure on " + topology_path.string());
  }
}

}  // namespace critcase
