#pragma once

// Matched linear filtering of homodyne records and 0-vs-1 photon decision
// statistics.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qtraj/dynamics.hpp"

namespace qtraj {

enum class KernelVariant { paper, baseline_subtracted };

std::string to_string(KernelVariant v);
KernelVariant kernel_variant_from_string(const std::string& s);

/// Filter kernels h(t_i), one per probe channel, on a record grid.
struct FilterKernel {
  TimeGrid grid;
  std::vector<std::string> labels;
  std::vector<std::vector<double>> h;
  /// +1 or -1 per channel: the sign applied so that E[S|n=1] > E[S|n=0].
  std::vector<int> orientation;

  int channel_index(const std::string& label) const;
  /// ∫ h² dt per channel.
  std::vector<double> energy() const;
};

struct Histogram {
  std::vector<double> edges;  // bins [edges[i], edges[i+1])
  std::vector<int> count0;
  std::vector<int> count1;
};

struct DecisionStats {
  std::vector<double> S0_samples;
  std::vector<double> S1_samples;
  double snr = 0.0;         // orientation-corrected, ≥ 0
  double snr_signed = 0.0;  // (S̄1 − S̄0)/√(Var S1 + Var S0)
  double S_th = 0.0;
  double F = 0.5;
  Histogram histogram;
};

/// Discrete Itô integral Σ_i h(t_i) dQ_i.
double filter_statistic(std::span<const double> h, std::span<const double> increments);

/// S = Σ_i h(t_i) dQ_i for the named channel.
double apply_filter(const TrajectoryRecord& record, const FilterKernel& kernel, const std::string& channel);

/// h = Ī1 (paper) or Ī1 − Ī0 per probe channel, sign-oriented using the
/// expected filter outputs Σ h (Ī1 − Ī0) dt. Throws a degenerate-kernel error
/// when max |h| < 1e-6 on any channel.
FilterKernel matched_kernel(const CascadeModel& model, const TimeGrid& grid, KernelVariant variant = KernelVariant::paper,
                            const EnsembleEstimate& estimate = {});

/// Builds the kernel from precomputed mean currents.
FilterKernel kernel_from_currents(const std::vector<MeanTrace>& I1, const std::vector<MeanTrace>& I0, KernelVariant variant);

/// Signed SNR (S̄1 − S̄0)/√(Var S1 + Var S0) with unbiased variances.
double snr(std::span<const double> S0, std::span<const double> S1);

/// F = (P(S < S_th | n=0) + P(S > S_th | n=1)) / 2 from sample counts.
double distinguishability(std::span<const double> S0, std::span<const double> S1, double S_th);

/// Maximizes F over the midpoints between adjacent distinct pooled values;
/// ties go to the smaller threshold. Returns (S_th, F).
std::pair<double, double> optimize_threshold(std::span<const double> S0, std::span<const double> S1);

inline double combine_two_channel(double SA, double SB) { return 0.5 * (SA + SB); }

/// Freedman–Diaconis bins on the pooled samples, shared by both hypotheses.
Histogram histogram(std::span<const double> S0, std::span<const double> S1);

/// SNR, optimal threshold, F and histogram. SNR is NaN when a hypothesis has
/// fewer than two samples or the variances vanish.
DecisionStats decision_stats(std::vector<double> S0, std::vector<double> S1);

struct HypothesisFilterOptions {
  /// Record steps merged into one filter step.
  int stride = 50;
  std::string channel = "A";
};

/// Likelihood-ratio filter on the probe record of a single-unit model. Each
/// hypothesis carries an unnormalized conditional density matrix driven by the
/// recorded increments through the linear SME; its trace is the likelihood.
class HypothesisFilter {
 public:
  explicit HypothesisFilter(const CascadeModel& model, HypothesisFilterOptions options = {});

  /// Posterior probability of n = 1 under a flat prior.
  double posterior(const TrajectoryRecord& record) const;
  /// log L1 − log L0.
  double log_likelihood_ratio(const TrajectoryRecord& record) const;

 private:
  const CascadeModel* model_;
  HypothesisFilterOptions options_;
  QuantumState psi0_, psi1_;
  Propagator prop0_, prop1_;
};

double hypothesis_filter(const TrajectoryRecord& record, const CascadeModel& model,
                         const HypothesisFilterOptions& options = {});

}  // namespace qtraj
