// qtraj: photon-counter trajectory simulations from a JSON configuration.
//
//   qtraj kernel   --config c.json [--out dir]
//   qtraj simulate --config c.json [--out dir] [--seed s] [--traj n] [--workers w]
//   qtraj analyze  --config c.json --mode flux|coherence [--out dir]
//   qtraj sweep    --config c.json --param delta2 --values=-6,-18 [--coherence]
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "qtraj/io.hpp"
#include "qtraj/seed.hpp"

namespace fs = std::filesystem;
using namespace qtraj;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> traj;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "configuration file (JSON)")->required();
  cmd->add_option("--out", c.out, "output directory (overrides outputs.directory)");
  cmd->add_option("--seed", c.seed, "master seed (overrides ensemble.master_seed)");
  cmd->add_option("--traj", c.traj, "trajectories per hypothesis (overrides ensemble.n_traj)");
  cmd->add_option("--workers", c.workers, "worker threads (overrides ensemble.parallelism)");
}

EnsembleConfig load(const Common& c) {
  EnsembleConfig cfg = load_config(c.config);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.seed) cfg.master_seed = *c.seed;
  if (c.traj) cfg.n_traj = *c.traj;
  if (c.workers) cfg.workers = *c.workers;
  cfg.validate();
  return cfg;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

void print_summary(const EnsembleReport& r) {
  std::cout << "SNR=" << fmt(r.stats.snr) << " F=" << fmt(r.stats.F) << " S_th=" << fmt(r.stats.S_th)
            << " flagged=" << r.flagged << "\n";
  if (r.config.hypothesis_test)
    std::cout << "hypothesis_filter_accuracy=" << fmt(r.hypothesis_accuracy) << " se=" << fmt(r.hypothesis_accuracy_se)
              << "\n";
}

EnsembleReport simulate_into(const EnsembleConfig& cfg, const fs::path& dir) {
  const RecordSink sink = cfg.retention == Retention::statistics ? RecordSink{} : record_file_sink(dir);
  EnsembleReport r = run_ensemble(cfg, sink);
  write_bundle(r, dir);
  return r;
}

int cmd_kernel(const Common& c) {
  const EnsembleConfig cfg = load(c);
  const FilterKernel k = matched_kernel(cfg.model(), cfg.grid, cfg.kernel, cfg.kernel_estimate());
  const fs::path dir = cfg.output_dir;
  write_kernel_csv(k, dir / "kernel.csv");
  const auto energy = k.energy();
  for (std::size_t i = 0; i < energy.size(); ++i)
    std::cout << (i ? " " : "") << "energy_" << k.labels[i] << "=" << format_double(energy[i]);
  std::cout << "\n";
  return 0;
}

int cmd_simulate(const Common& c) {
  const EnsembleConfig cfg = load(c);
  print_summary(simulate_into(cfg, cfg.output_dir));
  return 0;
}

EnsembleEstimate analysis_estimate(const EnsembleConfig& cfg) {
  EnsembleEstimate e = cfg.kernel_estimate();
  e.seed = derive_seed(cfg.master_seed, seed_stream::analysis, 0);
  return e;
}

int cmd_analyze(const Common& c, const std::string& mode) {
  EnsembleConfig cfg = load(c);
  const fs::path dir = cfg.output_dir;
  if (mode == "flux") {
    if (cfg.source.initial == SourceInitial::superposition)
      fail(ErrorKind::configuration, "flux mode needs source.initial fock0 or fock1");
    const FluxResult f = output_flux(cfg.model(), cfg.source.initial, cfg.grid, analysis_estimate(cfg));
    write_traces_csv(f.flux, f.reference, dir / "traces.csv");
    std::cout << "total_flux=" << format_double(f.total) << " input_flux=" << format_double(f.input_total) << "\n";
    return 0;
  }
  cfg.source.initial = SourceInitial::superposition;
  const CoherenceResult r = coherence_trace(cfg.model(), cfg.grid, analysis_estimate(cfg));
  write_traces_csv(r.output, r.reference, dir / "traces.csv");
  std::cout << "retained_fraction=" << format_double(r.retained_fraction);
  if (cfg.units.size() > 1) std::cout << " se=" << format_double(r.retained_fraction_se);
  std::cout << "\n";
  return 0;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (*end != '\0') fail(ErrorKind::configuration, "--values entry '" + tok + "' is not a number");
    out.push_back(v);
  }
  return out;
}

int cmd_sweep(const Common& c, const std::string& param, const std::string& values_text, bool coherence) {
  const EnsembleConfig base = load(c);
  const std::vector<double> values = parse_values(values_text);
  (void)with_parameter(base, param, values.empty() ? 0.0 : values.front());
  const fs::path dir = base.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string());

  std::string summary = "# format_version=1\nvalue,SNR,F,S_th,runtime_seconds";
  if (coherence) summary += ",retained_coherence";
  summary += "\n";
  for (std::size_t v = 0; v < values.size(); ++v) {
    const EnsembleConfig cfg = with_parameter(base, param, values[v]);
    const EnsembleReport r = simulate_into(cfg, dir / ("value_" + std::to_string(v)));
    std::cout << param << "=" << format_double(values[v]) << " ";
    print_summary(r);
    summary += format_double(values[v]) + "," + format_double(r.stats.snr) + "," + format_double(r.stats.F) + "," +
               format_double(r.stats.S_th) + "," + format_double(r.runtime_seconds);
    if (coherence) {
      EnsembleConfig cc = cfg;
      cc.source.initial = SourceInitial::superposition;
      summary += "," + format_double(coherence_trace(cc.model(), cc.grid, analysis_estimate(cc)).retained_fraction);
    }
    summary += "\n";
  }
  std::ofstream out(dir / "summary.csv", std::ios::binary | std::ios::trunc);
  out << summary;
  if (!out) fail(ErrorKind::io, "cannot write " + (dir / "summary.csv").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantum-trajectory simulator for a non-absorbing microwave photon counter"};
  app.require_subcommand(1);

  Common kc, sc, ac, wc;
  std::string mode, param, values;
  bool coherence = false;
  auto* kernel = app.add_subcommand("kernel", "write the matched filter kernel(s)");
  add_common(kernel, kc);
  auto* simulate = app.add_subcommand("simulate", "run the Monte-Carlo ensemble and write the output bundle");
  add_common(simulate, sc);
  auto* analyze = app.add_subcommand("analyze", "unconditional flux or coherence traces");
  add_common(analyze, ac);
  analyze->add_option("--mode", mode, "flux or coherence")->required()->check(CLI::IsMember({"flux", "coherence"}));
  auto* sweep_cmd = app.add_subcommand("sweep", "one ensemble per value of a config parameter");
  add_common(sweep_cmd, wc);
  sweep_cmd->add_option("--param", param, "parameter name, e.g. delta2 or units.1.g")->required();
  sweep_cmd->add_option("--values", values, "comma-separated values (may be empty)")->required();
  sweep_cmd->add_flag("--coherence", coherence, "also report the retained-coherence fraction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code(ErrorKind::configuration);
  }

  try {
    if (*kernel) return cmd_kernel(kc);
    if (*simulate) return cmd_simulate(sc);
    if (*analyze) return cmd_analyze(ac, mode);
    return cmd_sweep(wc, param, values, coherence);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(ErrorKind::io);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
