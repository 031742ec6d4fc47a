#pragma once

// Source - transmon - cavity models: one unit, or two units cascaded through a
// unidirectional waveguide. Rates are in units of gamma01 and times in 1/gamma01.

#include <numbers>
#include <string>
#include <vector>

#include "qtraj/tensor.hpp"

namespace qtraj {

struct UnitParams {
  double gamma01 = 1.0;
  double gamma12 = 0.1;
  double g = 2.45;
  double delta1 = -0.8;
  double delta2 = -18.0;
  double E = 0.032;
  double kappa = 0.037;
  double phi = std::numbers::pi / 2;

  void validate() const;
  friend bool operator==(const UnitParams&, const UnitParams&) = default;
};

enum class SourceInitial { fock0, fock1, superposition };

std::string to_string(SourceInitial s);
SourceInitial source_initial_from_string(const std::string& s);

struct SourceParams {
  double gamma_c = 0.1;
  SourceInitial initial = SourceInitial::fock1;

  void validate() const;
  friend bool operator==(const SourceParams&, const SourceParams&) = default;
};

struct Truncation {
  int d_source = 2;
  int d_transmon = 3;
  int d_cavity = 16;
  double top_level_tolerance = 1e-5;

  void validate() const;
  friend bool operator==(const Truncation&, const Truncation&) = default;
};

/// A homodyne-monitored channel: current increments dQ = <e^{-i phase} L + h.c.> dt + dW.
struct DiffusiveChannel {
  Operator op;
  double phase = 0.0;
  std::string label;
};

/// Fully assembled model. Slot order is [source, transmonA, cavityA, (transmonB, cavityB)].
struct CascadeModel {
  Dims dims;
  Operator H;      // unit Hamiltonians plus H_cas
  Operator H_cas;  // direction-asymmetric waveguide part, kept for inspection
  std::vector<DiffusiveChannel> diffusive;  // probe cavities first, then J2
  Operator jump;                            // collective waveguide lowering operator J
  int n_units = 1;
  std::vector<UnitParams> units;
  SourceParams source;
  Truncation truncation;

  static constexpr int source_slot = 0;
  static int transmon_slot(int unit) { return 1 + 2 * unit; }
  static int cavity_slot(int unit) { return 2 + 2 * unit; }

  /// Index into `diffusive` of the probe channel of `unit`.
  int cavity_channel(int unit) const { return unit; }
  int j2_channel() const { return n_units; }

  /// Cavity lowering operator of `unit`, embedded on the full space.
  Operator cavity_annihilation(int unit) const;
  Operator source_annihilation() const;
  /// Transmon |i><j| of `unit`, embedded on the full space.
  Operator transmon_transition(int unit, int i, int j) const;
};

/// Unit Hamiltonian (no waveguide terms) placed on the given slots of `dims`.
Operator unit_hamiltonian(const UnitParams& p, const Dims& dims, int transmon_slot, int cavity_slot);

/// Single-unit Hamiltonian on [source, transmon, cavity], identity on the source.
Operator build_hamiltonian_single(const UnitParams& p, const Dims& dims);

CascadeModel build_single_unit(const UnitParams& p, const SourceParams& s, const Truncation& t = {});
CascadeModel build_two_unit(const UnitParams& pA, const UnitParams& pB, const SourceParams& s,
                            const Truncation& t = {});
/// Dispatches on units.size() (1 or 2).
CascadeModel build_model(const std::vector<UnitParams>& units, const SourceParams& s, const Truncation& t = {});

/// Empty-transmon steady probe amplitude 2E/kappa (0 when E = 0).
double steady_amplitude(const UnitParams& p);

QuantumState source_state(SourceInitial initial, int d_source);

/// source ⊗ (transmon ground ⊗ coherent(2E/kappa)) per unit; source taken from model.source.
QuantumState initial_state(const CascadeModel& model);
QuantumState initial_state(const CascadeModel& model, SourceInitial initial);

/// Excitation number c†c + Σ_j (σ11 + 2σ22 + a†a) of the whole model.
Operator excitation_number(const CascadeModel& model);

}  // namespace qtraj
