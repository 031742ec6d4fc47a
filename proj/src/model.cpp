#include "qtraj/model.hpp"

#include <cmath>

namespace qtraj {
namespace {

constexpr Complex I{0.0, 1.0};

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::configuration, what);
}

bool finite(double x) { return std::isfinite(x); }

}  // namespace

void UnitParams::validate() const {
  require(finite(gamma01) && finite(gamma12) && finite(g) && finite(delta1) && finite(delta2) && finite(E) &&
              finite(kappa) && finite(phi),
          "unit parameters must be finite");
  require(gamma01 >= 0, "gamma01 must be >= 0");
  require(gamma12 >= 0, "gamma12 must be >= 0");
  require(kappa >= 0, "kappa must be >= 0");
  require(!(kappa == 0 && E != 0), "a driven probe cavity needs kappa > 0 for a steady state");
}

void SourceParams::validate() const {
  require(std::isfinite(gamma_c) && gamma_c > 0, "gamma_c must be > 0");
}

void Truncation::validate() const {
  require(d_source >= 2, "d_source must be >= 2");
  require(d_transmon == 3, "the transmon model needs exactly 3 levels");
  require(d_cavity >= 2, "d_cavity must be >= 2");
  require(top_level_tolerance > 0, "top_level_tolerance must be > 0");
}

std::string to_string(SourceInitial s) {
  switch (s) {
    case SourceInitial::fock0: return "fock0";
    case SourceInitial::fock1: return "fock1";
    case SourceInitial::superposition: return "superposition";
  }
  return "?";
}

SourceInitial source_initial_from_string(const std::string& s) {
  if (s == "fock0") return SourceInitial::fock0;
  if (s == "fock1") return SourceInitial::fock1;
  if (s == "superposition") return SourceInitial::superposition;
  fail(ErrorKind::configuration, "source.initial must be fock0, fock1 or superposition, got '" + s + "'");
}

Operator CascadeModel::cavity_annihilation(int unit) const {
  return embed(annihilation(truncation.d_cavity), cavity_slot(unit), dims);
}

Operator CascadeModel::source_annihilation() const {
  return embed(annihilation(truncation.d_source), source_slot, dims);
}

Operator CascadeModel::transmon_transition(int unit, int i, int j) const {
  return embed(transition(i, j, truncation.d_transmon), transmon_slot(unit), dims);
}

Operator unit_hamiltonian(const UnitParams& p, const Dims& dims, int transmon_slot, int cavity_slot) {
  if (transmon_slot >= dims.count() || cavity_slot >= dims.count() || dims[transmon_slot] != 3)
    fail(ErrorKind::signature, "unit Hamiltonian needs a 3-level transmon slot and a cavity slot");
  const Operator a = embed(annihilation(dims[cavity_slot]), cavity_slot, dims);
  const Operator ad = a.adjoint();
  auto sigma = [&](int i, int j) { return embed(transition(i, j, 3), transmon_slot, dims); };

  Operator H = p.delta1 * sigma(1, 1) + (p.delta1 + p.delta2) * sigma(2, 2);
  H += (-I * p.g) * (a * sigma(2, 1) - ad * sigma(1, 2));
  H += (-I * p.E) * (a - ad);
  return H.pruned();
}

Operator build_hamiltonian_single(const UnitParams& p, const Dims& dims) {
  Operator H = unit_hamiltonian(p, dims, CascadeModel::transmon_slot(0), CascadeModel::cavity_slot(0));
  if (!is_hermitian(H)) fail(ErrorKind::internal, "unit Hamiltonian is not Hermitian");
  return H;
}

namespace {

// Cascade coupling of an upstream lowering operator into a downstream one:
// -(i/2) sqrt(g_up g_down) (L_up L_down† - h.c.).
Operator cascade_term(double rate_up, double rate_down, const Operator& up, const Operator& down) {
  const Operator forward = up * down.adjoint();
  return (-0.5 * I * std::sqrt(rate_up * rate_down)) * (forward - forward.adjoint());
}

CascadeModel assemble(const std::vector<UnitParams>& units, const SourceParams& s, const Truncation& t) {
  s.validate();
  t.validate();
  for (const auto& p : units) p.validate();

  CascadeModel m;
  m.n_units = static_cast<int>(units.size());
  m.units = units;
  m.source = s;
  m.truncation = t;
  std::vector<int> sizes{t.d_source};
  for (int j = 0; j < m.n_units; ++j) {
    sizes.push_back(t.d_transmon);
    sizes.push_back(t.d_cavity);
  }
  m.dims = Dims(sizes);

  const Operator c = m.source_annihilation();
  Operator H = Operator::zero(m.dims);
  Operator H_cas = Operator::zero(m.dims);
  Operator J = std::sqrt(s.gamma_c) * c;
  Operator J2 = Operator::zero(m.dims);

  for (int j = 0; j < m.n_units; ++j) {
    const UnitParams& p = units[static_cast<std::size_t>(j)];
    H += unit_hamiltonian(p, m.dims, CascadeModel::transmon_slot(j), CascadeModel::cavity_slot(j));
    const Operator s01 = m.transmon_transition(j, 0, 1);
    const Operator s12 = m.transmon_transition(j, 1, 2);
    H_cas += cascade_term(s.gamma_c, p.gamma01, c, s01);
    // Upstream units drive this one through both transmon transitions.
    for (int up = 0; up < j; ++up) {
      const UnitParams& q = units[static_cast<std::size_t>(up)];
      H_cas += cascade_term(q.gamma01, p.gamma01, m.transmon_transition(up, 0, 1), s01);
      H_cas += cascade_term(q.gamma12, p.gamma12, m.transmon_transition(up, 1, 2), s12);
    }
    J += std::sqrt(p.gamma01) * s01;
    J2 += std::sqrt(p.gamma12) * s12;
  }

  m.H_cas = H_cas.pruned();
  m.H = (H + H_cas).pruned();
  if (!is_hermitian(m.H)) fail(ErrorKind::internal, "model Hamiltonian is not Hermitian");
  m.jump = J.pruned();

  for (int j = 0; j < m.n_units; ++j) {
    const UnitParams& p = units[static_cast<std::size_t>(j)];
    m.diffusive.push_back({(std::sqrt(p.kappa) * m.cavity_annihilation(j)).pruned(), p.phi,
                           m.n_units == 1 ? std::string("A") : std::string(1, char('A' + j))});
  }
  m.diffusive.push_back({J2.pruned(), 0.0, "J2"});
  return m;
}

}  // namespace

CascadeModel build_single_unit(const UnitParams& p, const SourceParams& s, const Truncation& t) {
  return assemble({p}, s, t);
}

CascadeModel build_two_unit(const UnitParams& pA, const UnitParams& pB, const SourceParams& s, const Truncation& t) {
  return assemble({pA, pB}, s, t);
}

CascadeModel build_model(const std::vector<UnitParams>& units, const SourceParams& s, const Truncation& t) {
  if (units.size() != 1 && units.size() != 2)
    fail(ErrorKind::configuration, "models have 1 or 2 units, got " + std::to_string(units.size()));
  return assemble(units, s, t);
}

double steady_amplitude(const UnitParams& p) {
  if (p.E == 0) return 0.0;
  return 2.0 * p.E / p.kappa;
}

QuantumState source_state(SourceInitial initial, int d_source) {
  QuantumState::Vector v = QuantumState::Vector::Zero(d_source);
  switch (initial) {
    case SourceInitial::fock0: v(0) = 1; break;
    case SourceInitial::fock1: v(1) = 1; break;
    case SourceInitial::superposition: v(0) = v(1) = 1.0 / std::sqrt(2.0); break;
  }
  return QuantumState::pure(Dims{d_source}, std::move(v));
}

QuantumState initial_state(const CascadeModel& model, SourceInitial initial) {
  QuantumState psi = source_state(initial, model.truncation.d_source);
  for (const UnitParams& p : model.units) {
    psi = tensor(psi, basis_state(0, model.truncation.d_transmon));
    psi = tensor(psi, coherent_state(steady_amplitude(p), model.truncation.d_cavity));
  }
  return psi;
}

QuantumState initial_state(const CascadeModel& model) { return initial_state(model, model.source.initial); }

Operator excitation_number(const CascadeModel& model) {
  const Operator c = model.source_annihilation();
  Operator N = c.adjoint() * c;
  for (int j = 0; j < model.n_units; ++j) {
    const Operator a = model.cavity_annihilation(j);
    N += model.transmon_transition(j, 1, 1) + 2.0 * model.transmon_transition(j, 2, 2) + a.adjoint() * a;
  }
  return N;
}

}  // namespace qtraj
