#pragma once

// Deterministic Lindblad integration, the diffusive stochastic master
// equation, and the hybrid jump/diffusion stochastic Schrödinger equation.
//
// Every integrator works inside the subspace reachable from its initial state
// under the Hamiltonian, the diffusive channels and the jump operator
// (Propagator). For the cascaded models that subspace is closed under the
// dynamics, so the restriction is exact; for a single signal photon it removes
// the sectors with two or more waveguide excitations.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qtraj/model.hpp"

namespace qtraj {

struct TimeGrid {
  double t0 = 0.0;
  double T = 80.0;
  double dt = 1e-3;

  void validate() const;
  /// Number of steps (T - t0) / dt; samples sit at the left endpoints t0 + i dt.
  int steps() const;
  double time(int i) const { return t0 + dt * i; }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

/// A time series on a grid, optionally with per-point standard errors when it
/// is an ensemble estimate.
struct MeanTrace {
  TimeGrid grid;
  std::string label;
  std::vector<Complex> values;
  std::vector<double> standard_error;

  std::vector<double> real() const;
  std::vector<double> magnitude() const;
};

struct RecordDiagnostics {
  double max_norm_drift = 0.0;  // max |‖ψ̃‖ − 1| before renormalization
  double max_top_level_population = 0.0;
  bool flagged = false;
  std::string flag_reason;
};

/// One stochastic run: per-channel current increments dQ_k(t_i) = I_k dt.
struct TrajectoryRecord {
  TimeGrid grid;
  std::vector<std::string> labels;
  std::vector<std::vector<double>> increments;
  std::vector<double> jump_times;
  std::uint64_t seed = 0;
  RecordDiagnostics diagnostics;

  // In-memory extras, never persisted: noise-free current parts and requested
  // observable expectations, per step.
  std::vector<std::vector<double>> mean_currents;
  std::vector<std::vector<Complex>> expectations;

  int channel_index(const std::string& label) const;
};

/// A model restricted to the subspace reachable from a set of initial states.
///
/// The retained basis is further split into sectors, the connected components
/// of the drift and diffusive channels; only the jump operator moves amplitude
/// between sectors. Sectors are contiguous blocks of the reduced basis, so a
/// pure state living in one sector is propagated on that block alone.
class Propagator {
 public:
  using SparseMatrix = Operator::SparseMatrix;
  using Vector = Eigen::VectorXcd;
  using Matrix = Eigen::MatrixXcd;

  Propagator(const CascadeModel& model, std::span<const QuantumState> seeds);
  Propagator(const CascadeModel& model, const QuantumState& seed);

  const CascadeModel& model() const { return *model_; }
  int dim() const { return static_cast<int>(basis_.size()); }
  /// Full-space indices of the retained basis states, grouped by sector and
  /// ascending within a sector.
  const std::vector<int>& basis() const { return basis_; }

  struct Sector {
    int offset = 0;
    int size = 0;
    SparseMatrix drift;
    std::vector<SparseMatrix> channels;
  };
  const std::vector<Sector>& sectors() const { return sectors_; }
  /// Sectors holding nonzero amplitude of `psi`.
  std::vector<int> occupied_sectors(const Vector& psi) const;

  Vector restrict(const QuantumState::Vector& full) const;
  Matrix restrict(const QuantumState::Matrix& full) const;
  SparseMatrix restrict(const Operator& op) const;
  QuantumState lift(const Vector& v) const;
  QuantumState lift(const Matrix& rho) const;

  /// -iH - ½ Σ_k L_k†L_k - ½ J†J.
  const SparseMatrix& drift() const { return drift_; }
  const SparseMatrix& hamiltonian() const { return H_; }
  const SparseMatrix& jump() const { return J_; }
  const SparseMatrix& channel(int k) const { return L_[static_cast<std::size_t>(k)]; }
  Complex channel_phase_factor(int k) const { return phase_[static_cast<std::size_t>(k)]; }
  int channel_count() const { return static_cast<int>(L_.size()); }
  /// Reduced indices where some probe cavity sits in its top Fock level.
  const std::vector<int>& top_level_indices() const { return top_level_; }

  /// Lρ for Hermitian ρ.
  Matrix lindblad(const Matrix& rho) const;
  /// One classical RK4 step of dρ/dt = Lρ.
  Matrix rk4_master_step(const Matrix& rho, double h) const;
  /// exp(drift · h) ψ to fourth order.
  Vector drift_propagate(const Vector& psi, double h) const;
  /// Same, touching only the listed sectors; other entries of `out` are left alone.
  void drift_propagate(const Vector& psi, double h, std::span<const int> sectors, Vector& out) const;
  /// out = L_k ψ on the listed sectors only.
  void apply_channel(int k, const Vector& psi, std::span<const int> sectors, Vector& out) const;

 private:
  const CascadeModel* model_;
  std::vector<int> basis_;
  std::vector<int> full_to_reduced_;
  SparseMatrix H_, drift_, J_;
  std::vector<SparseMatrix> L_;
  std::vector<Complex> phase_;
  std::vector<int> top_level_;
  std::vector<Sector> sectors_;
};

Complex trace_product(const Propagator::SparseMatrix& op, const Propagator::Matrix& rho);

struct MasterOptions {
  /// Largest internal RK4 step; observables between nodes use cubic Hermite
  /// interpolation with exact node derivatives.
  double max_step = 5e-3;
  /// Eigenvalue checks spread over the run (0 disables).
  int positivity_checks = 8;
};

struct MasterResult {
  std::vector<MeanTrace> traces;
  QuantumState final_state;
  double max_trace_drift = 0.0;
};

/// Integrates dρ/dt = Lρ and samples ⟨O⟩ at every grid point.
MasterResult evolve_master(const CascadeModel& model, const QuantumState& rho0, const TimeGrid& grid,
                           std::span<const Operator> observables, const MasterOptions& options = {});

/// e^{-iφ_k} L_k + h.c. for diffusive channel k.
Operator quadrature(const CascadeModel& model, int channel);

/// Relaxes the probe cavities from vacuum with an empty transmon and source
/// and returns ⟨a_j⟩ at `duration`. Validation route for the analytic 2E/kappa.
std::vector<Complex> relax_probe_amplitudes(const CascadeModel& model, double duration, double dt = 0.05);

/// One step of the diffusive SME with the probe cavities monitored: the
/// deterministic part by RK4, the measurement back-action
/// Σ_k dW_k H[e^{-iφ_k} L_k]ρ by Euler–Maruyama, then trace renormalization.
/// Returns the current samples I_k dt.
std::vector<double> step_sme(const Propagator& prop, Propagator::Matrix& rho, double dt, std::span<const double> dW);

/// H[r]ρ = rρ + ρr† − Tr(rρ + ρr†)ρ.
Propagator::Matrix measurement_superoperator(const Propagator::SparseMatrix& r, const Propagator::Matrix& rho);

struct TrajectoryOptions {
  std::vector<Operator> observables;  // expectations stored per step when non-empty
  bool keep_mean_currents = false;
  bool keep_increments = true;
  /// Disables jumps and all noise; expectations follow the zero-noise limit.
  bool deterministic = false;
};

/// Hybrid jump/diffusion unravelling. Per step: a jump draw u against
/// p = ⟨J†J⟩dt; on a jump ψ ← Jψ/‖Jψ‖, otherwise the diffusive update
/// ψ ← e^{drift dt}ψ + Σ_k e^{-iφ_k} L_k ψ dQ_k, renormalized. Random numbers are
/// drawn in a fixed order: the jump uniform, then one normal per diffusive
/// channel in channel order.
TrajectoryRecord run_trajectory(const Propagator& prop, const QuantumState& psi0, const TimeGrid& grid,
                                std::uint64_t seed, const TrajectoryOptions& options = {});

/// Diffusive SME trajectory with the probe cavities monitored. Records the
/// probe currents and, when requested, per-step observable expectations.
TrajectoryRecord run_sme_trajectory(const Propagator& prop, const QuantumState& rho0, const TimeGrid& grid,
                                    std::uint64_t seed, std::span<const Operator> observables = {});

struct EnsembleEstimate {
  int trajectories = 1000;
  std::uint64_t seed = 0x5eed;
  int workers = 1;
  int smoothing_width = 0;  // centred moving average, 0 or 1 disables
  /// Reachable dimensions up to this use the exact master equation even for
  /// two units.
  int exact_dim_limit = 400;
};

/// Mean current Ī_n(t) per probe channel: exact for one unit or a small
/// reachable space, otherwise an SSE ensemble mean of the noise-free current
/// parts.
std::vector<MeanTrace> expected_current(const CascadeModel& model, SourceInitial n, const TimeGrid& grid,
                                        const EnsembleEstimate& estimate = {});

struct FluxResult {
  MeanTrace flux;       // ⟨J†J⟩
  MeanTrace j2_flux;    // ⟨J2†J2⟩
  MeanTrace reference;  // γc n e^{-γc t}
  double total = 0.0;   // ∫ (⟨J†J⟩ + ⟨J2†J2⟩) dt
  double input_total = 0.0;
};

FluxResult output_flux(const CascadeModel& model, SourceInitial n, const TimeGrid& grid,
                       const EnsembleEstimate& estimate = {});

struct CoherenceResult {
  MeanTrace output;     // |⟨J⟩|
  MeanTrace source;     // |⟨c⟩|
  MeanTrace reference;  // √γc · ½ · e^{-γc t / 2}
  double retained_fraction = 0.0;
  double retained_fraction_se = 0.0;  // ensemble estimates only
};

/// Needs model.source.initial == superposition.
CoherenceResult coherence_trace(const CascadeModel& model, const TimeGrid& grid,
                                const EnsembleEstimate& estimate = {});

/// Centred moving average with shrinking windows at the ends.
std::vector<double> moving_average(std::span<const double> x, int width);

}  // namespace qtraj
