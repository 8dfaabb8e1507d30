#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "snpassoc/pipeline.hpp"

using namespace snpassoc;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::string> output;
};

RunConfig load_with(const std::string& path, const Overrides& o) {
  RunConfig cfg = load_config(path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.output) cfg.output = *o.output;
  return cfg;
}

int do_run(const std::string& path, const Overrides& o) {
  const RunConfig cfg = load_with(path, o);
  const json report = run_pipeline(cfg, resolve_workers(cfg, o.workers));
  write_report(report, cfg.output);
  if (!cfg.output.empty()) std::cerr << "report written to " << cfg.output << "\n";
  return 0;
}

int do_validate(const std::string& path) {
  const RunConfig cfg = load_config(path);
  if (cfg.dataset) {
    try {
      const Dataset ds = load_dataset(cfg.dataset->path, cfg.dataset->schema);
      std::cout << path << ": ok (" << cfg.method << ", " << ds.rows() << " rows, " << ds.cols() << " predictors, "
                << ds.case_count() << " cases)\n";
      return 0;
    } catch (const Error& e) {
      throw RunError(cfg.source + " [dataset]: " + e.what());
    }
  }
  std::cout << path << ": ok (" << cfg.method << ")\n";
  return 0;
}

int do_synth(const std::string& path, const Overrides& o) {
  const RunConfig cfg = load_with(path, o);
  if (cfg.method != "synth") throw ConfigError("method.name", "the synth command needs a synth method block");
  const json report = run_pipeline(cfg, 1);
  const auto& r = report["result"];
  std::cout << "wrote " << r["output"].get<std::string>() << ": " << r["rows"] << " rows, " << r["cases"]
            << " cases, Bayes balanced error " << r["bayes_balanced_error"] << "\n";
  if (!cfg.output.empty()) write_report(report, cfg.output);
  return 0;
}

int do_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::io, "cli", "cannot open " + path);
  const json r = json::parse(in);
  std::cout << "method   " << r.value("method", "?") << "  (version " << r.value("version", "?") << ", seed "
            << r.value("seed", std::uint64_t{0}) << ")\n";
  if (r.contains("dataset")) {
    const auto& d = r["dataset"];
    std::cout << "dataset  " << d["path"].get<std::string>() << ": " << d["rows"] << " rows, " << d["predictors"]
              << " predictors, " << d["cases"] << " cases / " << d["controls"] << " controls\n";
  }
  if (r.contains("cv")) std::cout << "cv error " << r["cv"]["value"] << " (K=" << r["cv"]["K"] << ")\n";
  if (r.contains("permtest")) {
    const auto& p = r["permtest"];
    std::cout << "permtest p=" << p["p_value"] << " with B=" << p["B"] << " (accuracy bound " << p["accuracy_bound"]
              << "), " << (p["reject"].get<bool>() ? "reject" : "retain") << " independence at alpha=" << p["alpha"]
              << "\n";
  }
  if (r.contains("result")) std::cout << "result\n" << r["result"].dump(2) << "\n";
  if (r.contains("timing")) std::cout << "wall     " << r["timing"]["wall_seconds"] << " s\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Case-control genotype association analysis"};
  app.require_subcommand(1);
  Overrides o;
  std::string config, report_path;

  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "Override the master seed");
    sub->add_option("--workers", o.workers, std::string("Worker threads (default: $") + kWorkersEnv + " or 1)")
        ->check(CLI::PositiveNumber);
    sub->add_option("-o,--output", o.output, "Override the output path");
  };

  auto* run = app.add_subcommand("run", "Run the configured analysis and write a JSON report");
  run->add_option("config", config, "Run configuration (YAML)")->required();
  add_overrides(run);
  auto* validate = app.add_subcommand("validate", "Check a configuration and its dataset");
  validate->add_option("config", config, "Run configuration (YAML)")->required();
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset from a synth configuration");
  synth->add_option("config", config, "Run configuration (YAML)")->required();
  add_overrides(synth);
  auto* report = app.add_subcommand("report", "Pretty-print a JSON report");
  report->add_option("path", report_path, "Report file")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return do_run(config, o);
    if (*validate) return do_validate(config);
    if (*synth) return do_synth(config, o);
    if (*report) return do_report(report_path);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << (config.empty() ? "" : config + ": ") << e.what() << "\n";
    return 2;
  } catch (const RunError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
