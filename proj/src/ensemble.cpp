#include "qtraj/ensemble.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>

#include "qtraj/parallel.hpp"
#include "qtraj/seed.hpp"

namespace qtraj {

std::string to_string(Retention r) {
  switch (r) {
    case Retention::sample: return "sample";
    case Retention::all: return "all";
    case Retention::statistics: return "statistics";
  }
  return "?";
}

Retention retention_from_string(const std::string& s) {
  if (s == "sample") return Retention::sample;
  if (s == "all") return Retention::all;
  if (s == "statistics") return Retention::statistics;
  fail(ErrorKind::configuration, "ensemble.retention must be sample, all or statistics, got '" + s + "'");
}

void EnsembleConfig::validate() const {
  if (units.size() != 1 && units.size() != 2) fail(ErrorKind::configuration, "units must list 1 or 2 units");
  for (const auto& u : units) u.validate();
  source.validate();
  truncation.validate();
  grid.validate();
  if (n_traj < 1) fail(ErrorKind::configuration, "ensemble.n_traj must be >= 1");
  if (workers < 1) fail(ErrorKind::configuration, "ensemble.parallelism must be >= 1");
  if (retain_per_hypothesis < 0) fail(ErrorKind::configuration, "retained record count must be >= 0");
  if (kernel_estimator_M < 1) fail(ErrorKind::configuration, "filter.kernel_estimator_M must be >= 1");
  if (kernel_smoothing < 0) fail(ErrorKind::configuration, "filter.kernel_smoothing must be >= 0");
  if (hypothesis_stride < 1) fail(ErrorKind::configuration, "filter.hypothesis_stride must be >= 1");
  if (hypothesis_test && units.size() != 1)
    fail(ErrorKind::configuration, "the hypothesis filter supports single-unit models only");
}

CascadeModel EnsembleConfig::model() const { return build_model(units, source, truncation); }

EnsembleEstimate EnsembleConfig::kernel_estimate() const {
  EnsembleEstimate e;
  e.trajectories = kernel_estimator_M;
  e.seed = derive_seed(master_seed, seed_stream::kernel, 0);
  e.workers = workers;
  e.smoothing_width = kernel_smoothing;
  return e;
}

std::uint64_t trajectory_seed(std::uint64_t master, int hypothesis, int index) {
  return derive_seed(master, hypothesis == 0 ? seed_stream::hypothesis0 : seed_stream::hypothesis1,
                     static_cast<std::uint64_t>(index));
}

EnsembleReport run_ensemble(const EnsembleConfig& config, const RecordSink& sink) {
  config.validate();
  const CascadeModel model = config.model();
  const FilterKernel kernel = matched_kernel(model, config.grid, config.kernel, config.kernel_estimate());
  return run_ensemble(config, kernel, sink);
}

EnsembleReport run_ensemble(const EnsembleConfig& config, const FilterKernel& kernel, const RecordSink& sink) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  if (!(kernel.grid == config.grid)) fail(ErrorKind::signature, "kernel grid differs from the ensemble grid");
  const CascadeModel model = config.model();
  const int n = config.n_traj;

  std::optional<HypothesisFilter> filter;
  if (config.hypothesis_test) filter.emplace(model, HypothesisFilterOptions{config.hypothesis_stride, model.diffusive[0].label});

  EnsembleReport report;
  report.config = config;
  report.kernel = kernel;
  report.rows.resize(static_cast<std::size_t>(2 * n));
  std::vector<std::optional<TrajectoryRecord>> kept(sink ? 0 : static_cast<std::size_t>(2 * n));

  for (int hyp = 0; hyp < 2; ++hyp) {
    const QuantumState psi0 = initial_state(model, hyp == 0 ? SourceInitial::fock0 : SourceInitial::fock1);
    const Propagator prop(model, psi0);
    parallel_for(n, config.workers, [&](int i) {
      const int id = hyp * n + i;
      TrajectoryRow& row = report.rows[static_cast<std::size_t>(id)];
      row.id = id;
      row.hypothesis = hyp;
      row.seed = trajectory_seed(config.master_seed, hyp, i);
      TrajectoryRecord rec;
      try {
        rec = run_trajectory(prop, psi0, config.grid, row.seed);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::numerical) throw;
        row.flagged = true;
        row.flag_reason = e.what();
        row.S.assign(static_cast<std::size_t>(model.n_units), std::numeric_limits<double>::quiet_NaN());
        row.S_AB = std::numeric_limits<double>::quiet_NaN();
        return;
      }
      for (int u = 0; u < model.n_units; ++u)
        row.S.push_back(apply_filter(rec, kernel, model.diffusive[static_cast<std::size_t>(u)].label));
      row.S_AB = model.n_units == 1 ? row.S[0] : combine_two_channel(row.S[0], row.S[1]);
      row.jumps = static_cast<int>(rec.jump_times.size());
      row.flagged = rec.diagnostics.flagged;
      row.flag_reason = rec.diagnostics.flag_reason;
      if (filter) row.posterior = filter->posterior(rec);

      const bool retain = config.retention == Retention::all ||
                          (config.retention == Retention::sample && i < config.retain_per_hypothesis);
      if (!retain) return;
      if (sink)
        sink(row, rec);
      else
        kept[static_cast<std::size_t>(id)] = std::move(rec);
    });
  }

  for (const auto& row : report.rows) (row.flagged ? report.flagged : report.used)++;
  if (100 * report.flagged > 2 * n)
    fail(ErrorKind::numerical, std::to_string(report.flagged) + " of " + std::to_string(2 * n) +
                                   " trajectories flagged (limit 1%); raise d_cavity or reduce dt");
  report.stats = stats_from_rows(report.rows);

  if (filter) {
    int correct[2] = {0, 0}, total[2] = {0, 0};
    for (const auto& row : report.rows) {
      if (row.flagged) continue;
      const auto h = static_cast<std::size_t>(row.hypothesis);
      ++total[h];
      if ((row.posterior > 0.5) == (row.hypothesis == 1)) ++correct[h];
    }
    if (total[0] > 0 && total[1] > 0) {
      const double a0 = double(correct[0]) / total[0], a1 = double(correct[1]) / total[1];
      report.hypothesis_accuracy = 0.5 * (a0 + a1);
      report.hypothesis_accuracy_se = 0.5 * std::sqrt(a0 * (1 - a0) / total[0] + a1 * (1 - a1) / total[1]);
    }
  }

  for (auto& r : kept)
    if (r) report.records.push_back(std::move(*r));
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

DecisionStats stats_from_rows(std::span<const TrajectoryRow> rows) {
  std::vector<double> S0, S1;
  for (const auto& row : rows) {
    if (row.flagged) continue;
    (row.hypothesis == 0 ? S0 : S1).push_back(row.S_AB);
  }
  if (S0.empty() || S1.empty()) fail(ErrorKind::numerical, "no unflagged trajectories left for one hypothesis");
  return decision_stats(std::move(S0), std::move(S1));
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

const std::vector<std::string> kUnitFields{"gamma01", "gamma12", "g", "delta1", "delta2", "E", "kappa", "phi"};

double& unit_field(UnitParams& u, const std::string& f) {
  if (f == "gamma01") return u.gamma01;
  if (f == "gamma12") return u.gamma12;
  if (f == "g") return u.g;
  if (f == "delta1") return u.delta1;
  if (f == "delta2") return u.delta2;
  if (f == "E") return u.E;
  if (f == "kappa") return u.kappa;
  return u.phi;
}

bool is_unit_field(const std::string& f) { return std::find(kUnitFields.begin(), kUnitFields.end(), f) != kUnitFields.end(); }

int as_int(const std::string& name, double v) {
  if (v != std::floor(v) || std::abs(v) > 2e9) fail(ErrorKind::configuration, name + " needs an integer value");
  return static_cast<int>(v);
}

[[noreturn]] void unknown_parameter(const std::string& name) {
  std::string list;
  for (const auto& p : sweep_parameters()) list += (list.empty() ? "" : ", ") + p;
  fail(ErrorKind::configuration, "unknown sweep parameter '" + name + "'; known: " + list);
}

}  // namespace

std::vector<std::string> sweep_parameters() {
  std::vector<std::string> out;
  for (const auto& f : kUnitFields) out.push_back(f);
  for (const auto& f : kUnitFields) out.push_back("units.<i>." + f);
  for (const char* f : {"source.gamma_c", "grid.t0", "grid.T", "grid.dt", "truncation.d_cavity",
                        "truncation.top_level_tolerance", "ensemble.n_traj", "filter.kernel_estimator_M"})
    out.emplace_back(f);
  return out;
}

EnsembleConfig with_parameter(const EnsembleConfig& base, const std::string& name, double value) {
  EnsembleConfig c = base;
  if (is_unit_field(name)) {
    for (auto& u : c.units) unit_field(u, name) = value;
    return c;
  }
  if (name.rfind("units.", 0) == 0) {
    const auto dot = name.find('.', 6);
    if (dot != std::string::npos) {
      const std::string idx = name.substr(6, dot - 6), field = name.substr(dot + 1);
      if (!idx.empty() && std::all_of(idx.begin(), idx.end(), ::isdigit) && is_unit_field(field)) {
        const auto i = std::stoul(idx);
        if (i >= c.units.size()) fail(ErrorKind::configuration, "sweep parameter " + name + " names a missing unit");
        unit_field(c.units[i], field) = value;
        return c;
      }
    }
    unknown_parameter(name);
  }
  if (name == "source.gamma_c" || name == "gamma_c") c.source.gamma_c = value;
  else if (name == "grid.t0") c.grid.t0 = value;
  else if (name == "grid.T") c.grid.T = value;
  else if (name == "grid.dt") c.grid.dt = value;
  else if (name == "truncation.d_cavity") c.truncation.d_cavity = as_int(name, value);
  else if (name == "truncation.top_level_tolerance") c.truncation.top_level_tolerance = value;
  else if (name == "ensemble.n_traj") c.n_traj = as_int(name, value);
  else if (name == "filter.kernel_estimator_M") c.kernel_estimator_M = as_int(name, value);
  else unknown_parameter(name);
  return c;
}

std::vector<EnsembleReport> sweep(const EnsembleConfig& base, const std::string& parameter, std::span<const double> values,
                                  const std::function<void(std::size_t, const EnsembleReport&)>& on_done) {
  (void)with_parameter(base, parameter, 0.0);  // reject unknown names even for an empty list
  std::vector<EnsembleReport> out;
  for (std::size_t v = 0; v < values.size(); ++v) {
    out.push_back(run_ensemble(with_parameter(base, parameter, values[v])));
    if (on_done) on_done(v, out.back());
  }
  return out;
}

}  // namespace qtraj
