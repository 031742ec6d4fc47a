#pragma once

#include <random>
#include <string>
#include <vector>

#include "qtraj/dynamics.hpp"
#include "qtraj/model.hpp"
#include "qtraj/log.hpp"

namespace test {

using namespace qtraj;

inline Operator::DenseMatrix random_matrix(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Operator::DenseMatrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = Complex(g(rng), g(rng));
  return m;
}

/// Random full-rank density matrix.
inline Operator::DenseMatrix random_density(int n, std::uint64_t seed) {
  const auto a = random_matrix(n, seed);
  Operator::DenseMatrix rho = a * a.adjoint();
  return rho / rho.trace();
}

inline double max_abs(const Operator::DenseMatrix& m) { return m.cwiseAbs().maxCoeff(); }

/// Collects warnings for the lifetime of the object.
struct WarningCapture {
  std::vector<std::string> messages;
  WarningCapture() {
    set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { set_warning_sink({}); }
};

inline UnitParams decoupled_unit() {
  UnitParams p;
  p.gamma01 = p.gamma12 = p.g = p.E = p.kappa = 0.0;
  return p;
}

/// Single unit at the default operating point, built once.
inline const CascadeModel& fig2_model() {
  static const CascadeModel m = build_single_unit(UnitParams{}, SourceParams{});
  return m;
}

/// Exact mean probe currents on the default grid, computed once per hypothesis.
inline const std::vector<MeanTrace>& fig2_currents(SourceInitial n) {
  static const std::vector<MeanTrace> c0 = expected_current(fig2_model(), SourceInitial::fock0, TimeGrid{});
  static const std::vector<MeanTrace> c1 = expected_current(fig2_model(), SourceInitial::fock1, TimeGrid{});
  return n == SourceInitial::fock0 ? c0 : c1;
}

}  // namespace test
