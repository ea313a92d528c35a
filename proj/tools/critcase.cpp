// Command-line front end: run, synth, validate, version.

#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "critcase/pipeline.hpp"
#include "critcase/synth.hpp"

namespace {

using namespace critcase;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitStage = 2;
constexpr int kExitIo = 3;

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::stage: return "stage";
    case ErrorKind::io: return "io";
  }
  return "stage";
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::validation: return kExitValidation;
    case ErrorKind::io: return kExitIo;
    case ErrorKind::stage: break;
  }
  return kExitStage;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

void report_error(const Error& e) {
  std::cerr << "error stage=" << e.stage() << " kind=" << kind_name(e.kind()) << " message=\"" << one_line(e.what())
            << "\"\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw Error(ErrorKind::io, "synth", "cannot write " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "synth", "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

int cmd_run(const std::string& config_path, const std::string& out_dir, std::size_t threads) {
  const PipelineConfig config = load_config_file(config_path);
  const PipelineResult result = run_pipeline(config, threads);
  write_run_directory(result, config, out_dir);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "groups=" << result.refined.partition.groups.size() << " removed=" << result.ledger.removed.size()
            << " out=" << out_dir << '\n';
  return kExitOk;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  SynthSpec spec = spec_path.empty() ? default_feeder_spec() : spec_from_json(read_text(spec_path));
  auto [dataset, truth] = generate(spec);
  const std::filesystem::path out(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw Error(ErrorKind::io, "synth", "cannot create " + out.string() + ": " + ec.message());
  write_dataset(dataset, out / "measurements.csv", out / "topology.csv");
  write_text(out / "ground_truth.json", ground_truth_to_json(truth, dataset));
  write_text(out / "spec.echo.json", spec_to_json(spec));

  PipelineConfig config;
  config.ingest.measurement_path = "measurements.csv";
  config.ingest.topology_path = "topology.csv";
  config.ingest.v_base = spec.v_base;
  config.ingest.expected_interval_s = spec.interval_s;
  config.ingest.season_label = spec.season_label;
  write_text(out / "config.json", config_to_json(config));
  std::cout << "nodes=" << dataset.node_count() << " timestamps=" << dataset.time_count()
            << " seed=" << truth.seed_used << " out=" << out_dir << '\n';
  return kExitOk;
}

int cmd_validate(const std::string& config_path) {
  PipelineConfig config = load_config_file(config_path);
  if (const auto problems = check_config(config); !problems.empty()) {
    for (const auto& p : problems) std::cout << "config: " << p << '\n';
    return kExitValidation;
  }
  IngestConfig ingest = config.ingest;
  if (ingest.measurement_path.is_relative()) ingest.measurement_path = config.base_dir / ingest.measurement_path;
  if (ingest.topology_path.is_relative()) ingest.topology_path = config.base_dir / ingest.topology_path;
  const MeasurementDataset ds = load_dataset(ingest);
  const auto violations = validate_dataset(ds);
  for (const auto& v : violations) std::cout << "violation: " << v.describe() << '\n';
  if (!violations.empty()) return kExitValidation;
  std::cout << "ok nodes=" << ds.node_count() << " timestamps=" << ds.time_count() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Critical operating case extraction for distribution feeders"};
  app.require_subcommand(1);

  std::string config_path, out_dir, spec_path;
  std::size_t threads = 1;

  auto* run = app.add_subcommand("run", "Run the full pipeline and write a run directory");
  run->add_option("--config", config_path, "Pipeline config (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--threads", threads, "Worker threads for per-group analysis")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic feeder dataset with ground truth");
  synth->add_option("--spec", spec_path, "Synthesis spec (JSON); defaults to the built-in feeder");
  synth->add_option("--out", out_dir, "Output directory")->required();

  auto* validate = app.add_subcommand("validate", "Check a config and its input files");
  validate->add_option("--config", config_path, "Pipeline config (JSON)")->required();

  app.add_subcommand("version", "Print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir, threads);
    if (*synth) return cmd_synth(spec_path, out_dir);
    if (*validate) return cmd_validate(config_path);
    std::cout << "critcase " << kVersion << '\n';
    return kExitOk;
  } catch (const Error& e) {
    report_error(e);
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    report_error(Error(ErrorKind::stage, "internal", e.what()));
    return kExitStage;
  }
}
