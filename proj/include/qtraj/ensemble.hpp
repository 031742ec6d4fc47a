#pragma once

// Monte-Carlo orchestration: trajectories per photon-number hypothesis with
// counter-based seeds, matched filtering, and deterministic reduction.

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "qtraj/detection.hpp"

namespace qtraj {

enum class Retention { sample, all, statistics };

std::string to_string(Retention r);
Retention retention_from_string(const std::string& s);

struct EnsembleConfig {
  std::vector<UnitParams> units{UnitParams{}};
  SourceParams source;
  Truncation truncation;
  TimeGrid grid;

  int n_traj = 2000;  // per hypothesis
  std::uint64_t master_seed = 1;
  int workers = 1;
  Retention retention = Retention::sample;
  int retain_per_hypothesis = 50;

  KernelVariant kernel = KernelVariant::paper;
  int kernel_estimator_M = 1000;
  int kernel_smoothing = 0;

  bool hypothesis_test = false;
  int hypothesis_stride = 50;

  std::string output_dir = "out";

  void validate() const;
  CascadeModel model() const;
  EnsembleEstimate kernel_estimate() const;
};

struct TrajectoryRow {
  int id = 0;
  int hypothesis = 0;
  std::uint64_t seed = 0;
  std::vector<double> S;  // per probe channel
  double S_AB = 0.0;      // decision statistic: S_A, or the mean of S_A and S_B
  int jumps = 0;
  bool flagged = false;
  std::string flag_reason;
  double posterior = std::numeric_limits<double>::quiet_NaN();  // hypothesis filter, when run
};

struct EnsembleReport {
  EnsembleConfig config;
  FilterKernel kernel;
  DecisionStats stats;
  std::vector<TrajectoryRow> rows;  // n = 0 rows first, then n = 1, by index
  int used = 0;
  int flagged = 0;
  /// Hypothesis-filter accuracy and its standard error; NaN when not run.
  double hypothesis_accuracy = std::numeric_limits<double>::quiet_NaN();
  double hypothesis_accuracy_se = std::numeric_limits<double>::quiet_NaN();

  // Not part of the deterministic report.
  double runtime_seconds = 0.0;
  std::vector<TrajectoryRecord> records;  // retained records when no sink is given
};

/// Receives retained records from worker threads; must be thread-safe.
using RecordSink = std::function<void(const TrajectoryRow&, const TrajectoryRecord&)>;

/// Trajectory seed: derive_seed(master, hypothesis, index).
std::uint64_t trajectory_seed(std::uint64_t master, int hypothesis, int index);

/// Runs 2 · n_traj trajectories. Blown-up or truncation-flagged trajectories
/// are excluded from the statistics; more than 1% flagged aborts.
EnsembleReport run_ensemble(const EnsembleConfig& config, const RecordSink& sink = {});

/// Same, with a precomputed kernel.
EnsembleReport run_ensemble(const EnsembleConfig& config, const FilterKernel& kernel, const RecordSink& sink = {});

/// Decision statistics from the unflagged rows.
DecisionStats stats_from_rows(std::span<const TrajectoryRow> rows);

/// Names accepted by with_parameter.
std::vector<std::string> sweep_parameters();

/// Copy of `base` with one scalar field replaced. Unit fields apply to every
/// unit unless prefixed "units.<i>.".
EnsembleConfig with_parameter(const EnsembleConfig& base, const std::string& name, double value);

/// One run_ensemble per value. All values share the master seed, so a
/// one-value sweep reproduces run_ensemble and differences between values use
/// common random numbers.
std::vector<EnsembleReport> sweep(const EnsembleConfig& base, const std::string& parameter, std::span<const double> values,
                                  const std::function<void(std::size_t, const EnsembleReport&)>& on_done = {});

}  // namespace qtraj
