// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
//
//   acceptance            run every criterion
//   acceptance 1 2 8      run a subset
//
// QTRAJ_ACCEPTANCE_FULL=1 runs the two-unit criterion at full size
// (n_traj = 2000, dt = 1e-3) in place of the n_traj = 800 smoke version.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>

#include "qtraj/dynamics.hpp"
#include "qtraj/ensemble.hpp"
#include "qtraj/io.hpp"
#include "qtraj/log.hpp"
#include "qtraj/seed.hpp"

using namespace qtraj;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int workers() { return std::max(1u, std::thread::hardware_concurrency()); }

bool within(double x, double target, double tol) { return std::abs(x - target) <= tol; }

// Shared between criteria: the default single-unit ensemble.
std::optional<EnsembleReport> g_fig2;

// ---------------------------------------------------------------------------

Outcome steady_state() {
  SourceParams s;
  s.initial = SourceInitial::fock0;
  const CascadeModel m = build_single_unit(UnitParams{}, s);
  const TimeGrid grid{};
  const Operator obs[] = {m.cavity_annihilation(0)};
  const MasterResult r = evolve_master(m, initial_state(m), grid, obs);
  const double target = 2 * UnitParams{}.E / UnitParams{}.kappa;
  double worst_a = 0;
  for (const Complex& v : r.traces[0].values) worst_a = std::max(worst_a, std::abs(v - target));
  const auto I0 = expected_current(m, SourceInitial::fock0, grid);
  double worst_I = 0;
  for (const Complex& v : I0[0].values) worst_I = std::max(worst_I, std::abs(v.real()));
  return {worst_a < 1e-4 && worst_I < 1e-4,
          fmt("max|<a> - 2E/kappa| = %.3g (tol 1e-4), max|I0| = %.3g (tol 1e-4)", worst_a, worst_I)};
}

// ---------------------------------------------------------------------------

using Dense = Eigen::MatrixXcd;

Dense kron3(const Dense& a, const Dense& b, const Dense& c) {
  auto k = [](const Dense& x, const Dense& y) {
    Dense out(x.rows() * y.rows(), x.cols() * y.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) out.block(i * y.rows(), j * y.cols(), y.rows(), y.cols()) = x(i, j) * y;
    return out;
  };
  return k(k(a, b), c);
}

Dense dissipator(const Dense& r, const Dense& rho) {
  const Dense rd = r.adjoint();
  return r * rho * rd - 0.5 * (rho * rd * r + rd * r * rho);
}

// The single-unit generator written out term by term from hand-built
// Kronecker products, compared with the collective form the library uses.
Outcome generator_equivalence() {
  const UnitParams p;
  const SourceParams s;
  Truncation t;
  t.d_cavity = 2;
  const CascadeModel m = build_single_unit(p, s, t);

  const Complex I(0, 1);
  const Dense I2 = Dense::Identity(2, 2), I3 = Dense::Identity(3, 3);
  Dense a2 = Dense::Zero(2, 2);
  a2(0, 1) = 1;
  auto sig = [](int i, int j) {
    Dense x = Dense::Zero(3, 3);
    x(i, j) = 1;
    return x;
  };
  const Dense c = kron3(a2, I3, I2), a = kron3(I2, I3, a2);
  const Dense s01 = kron3(I2, sig(0, 1), I2), s10 = kron3(I2, sig(1, 0), I2);
  const Dense s12 = kron3(I2, sig(1, 2), I2), s21 = kron3(I2, sig(2, 1), I2);
  const Dense s11 = kron3(I2, sig(1, 1), I2), s22 = kron3(I2, sig(2, 2), I2);
  const Dense H = p.delta1 * s11 + (p.delta1 + p.delta2) * s22 - I * p.g * (a * s21 - a.adjoint() * s12) -
                  I * p.E * (a - a.adjoint());

  auto reference = [&](const Dense& rho) -> Dense {
    Dense out = -I * (H * rho - rho * H);
    out += dissipator(std::sqrt(s.gamma_c) * c, rho) + dissipator(std::sqrt(p.gamma01) * s01, rho) +
           dissipator(std::sqrt(p.gamma12) * s12, rho) + dissipator(std::sqrt(p.kappa) * a, rho);
    const Dense cr = c * rho, rc = rho * c.adjoint();
    out += std::sqrt(s.gamma_c * p.gamma01) * ((cr * s10 - s10 * cr) + (s01 * rc - rc * s01));
    return out;
  };

  // Seeding with every basis state keeps the whole space.
  const int n = static_cast<int>(m.dims.total());
  std::vector<QuantumState> seeds;
  for (int k = 0; k < n; ++k) seeds.push_back(QuantumState::pure(m.dims, QuantumState::Vector::Unit(n, k)));
  const Propagator prop(m, seeds);
  if (prop.dim() != n) return {false, fmt("reduced dimension %d, expected %d", prop.dim(), n)};

  double worst = 0;
  int elements = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j)
      for (int part = 0; part < (i == j ? 1 : 2); ++part) {
        Dense rho = Dense::Zero(n, n);
        if (i == j) {
          rho(i, i) = 1;
        } else if (part == 0) {
          rho(i, j) = rho(j, i) = 1;
        } else {
          rho(i, j) = I;
          rho(j, i) = -I;
        }
        const Dense lib = prop.lift(prop.lindblad(prop.restrict(rho))).density();
        worst = std::max(worst, (lib - reference(rho)).cwiseAbs().maxCoeff());
        ++elements;
      }
  return {worst <= 1e-12 && elements == n * n,
          fmt("%d Hermitian basis elements at d_cavity=2, max entrywise deviation %.3g (tol 1e-12)", elements, worst)};
}

// ---------------------------------------------------------------------------

struct Accumulator {
  std::vector<Complex> sum;
  std::vector<double> sq_re, sq_im;
  int n = 0;
  explicit Accumulator(std::size_t len) : sum(len), sq_re(len), sq_im(len) {}
  void add(const std::vector<Complex>& x) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      sum[i] += x[i];
      sq_re[i] += x[i].real() * x[i].real();
      sq_im[i] += x[i].imag() * x[i].imag();
    }
    ++n;
  }
  Complex mean(std::size_t i) const { return sum[i] / double(n); }
  double se(double sq, double m) const { return std::sqrt(std::max(0.0, sq / n - m * m) / (n - 1)); }
  double se_re(std::size_t i) const { return se(sq_re[i], mean(i).real()); }
  double se_im(std::size_t i) const { return se(sq_im[i], mean(i).imag()); }
};

// Worst |deviation| / SE over both quadratures; deviations below the absolute
// floor count as agreement regardless of SE.
double worst_z(const Accumulator& acc, const std::vector<Complex>& exact, double floor, double& worst_dev) {
  double z = 0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    const Complex m = acc.mean(i);
    const double dr = std::abs(m.real() - exact[i].real()), di = std::abs(m.imag() - exact[i].imag());
    worst_dev = std::max({worst_dev, dr, di});
    if (dr > floor) z = std::max(z, dr / acc.se_re(i));
    if (di > floor) z = std::max(z, di / acc.se_im(i));
  }
  return z;
}

Outcome unraveling_consistency() {
  constexpr int kTraj = 2000;
  Truncation t;
  t.d_cavity = 10;
  const CascadeModel m = build_single_unit(UnitParams{}, SourceParams{}, t);
  const TimeGrid grid{0, 4, 1e-3};
  const QuantumState psi0 = initial_state(m);
  const std::vector<Operator> obs{m.cavity_annihilation(0)};
  const MasterResult exact = evolve_master(m, psi0, grid, obs);
  const auto& ref = exact.traces[0].values;
  const Propagator prop(m, psi0);
  const QuantumState rho0 = QuantumState::mixed(m.dims, psi0.to_density());

  Accumulator sme(ref.size()), sse(ref.size());
  TrajectoryOptions opts;
  opts.observables = obs;
  opts.keep_increments = false;
  for (int k = 0; k < kTraj; ++k) {
    sme.add(run_sme_trajectory(prop, rho0, grid, derive_seed(31, 0, k), obs).expectations[0]);
    sse.add(run_trajectory(prop, psi0, grid, derive_seed(31, 1, k), opts).expectations[0]);
  }
  constexpr double kFloor = 1e-10;
  double dev_sme = 0, dev_sse = 0;
  const double z_sme = worst_z(sme, ref, kFloor, dev_sme), z_sse = worst_z(sse, ref, kFloor, dev_sse);
  return {z_sme <= 5 && z_sse <= 5,
          fmt("d_cavity=10, T=4, %d trajectories each, %zu grid points: SME max z %.2f (max dev %.3g), "
              "SSE max z %.2f (max dev %.3g); tol 5 SE",
              kTraj, ref.size(), z_sme, dev_sme, z_sse, dev_sse)};
}

// ---------------------------------------------------------------------------

EnsembleConfig base_config(int n_traj, std::uint64_t seed) {
  EnsembleConfig c;
  c.n_traj = n_traj;
  c.master_seed = seed;
  c.workers = workers();
  c.retention = Retention::statistics;
  return c;
}

Outcome fig2_reproduction() {
  EnsembleConfig c = base_config(2000, 2024);
  c.hypothesis_test = true;  // shared records for the hypothesis-filter criterion
  g_fig2 = run_ensemble(c);
  const auto& st = g_fig2->stats;
  return {within(st.snr, 1.2, 0.15) && within(st.F, 0.84, 0.03),
          fmt("n_traj=2000: SNR %.4f (1.2 +- 0.15), F %.4f (0.84 +- 0.03), flagged %d", st.snr, st.F, g_fig2->flagged)};
}

Outcome dos_variant() {
  EnsembleConfig c = base_config(2000, 2025);
  c.units[0].gamma12 = 2.0;
  const EnsembleReport r = run_ensemble(c);
  return {within(r.stats.F, 0.81, 0.03),
          fmt("gamma12=2, n_traj=2000: F %.4f (0.81 +- 0.03), SNR %.4f, flagged %d", r.stats.F, r.stats.snr, r.flagged)};
}

double fig2_snr() {
  if (!g_fig2) g_fig2 = run_ensemble(base_config(2000, 2024));
  return g_fig2->stats.snr;
}

Outcome fig3_reproduction() {
  const char* env = std::getenv("QTRAJ_ACCEPTANCE_FULL");
  const bool full = env && std::string(env) == "1";
  EnsembleConfig c = base_config(full ? 2000 : 800, 2026);
  c.units = {UnitParams{}, UnitParams{}};
  if (!full) c.grid.dt = 5e-3;
  c.kernel_estimator_M = full ? 1000 : 400;
  c.kernel_smoothing = full ? 0 : 201;
  const EnsembleReport r = run_ensemble(c);
  const double snr1 = fig2_snr();
  const double ratio = r.stats.snr / snr1;
  const double F_tol = full ? 0.03 : 0.05;
  return {within(r.stats.snr, 1.7, 0.2) && within(r.stats.F, 0.90, F_tol) && within(ratio, std::sqrt(2.0), 0.15 * std::sqrt(2.0)),
          fmt("%s n_traj=%d dt=%g: SNR_AB %.4f (1.7 +- 0.2), F %.4f (0.90 +- %.2f), SNR2/SNR1 %.4f (sqrt2 +- 15%%), "
              "flagged %d",
              full ? "full" : "smoke", c.n_traj, c.grid.dt, r.stats.snr, r.stats.F, F_tol, ratio, r.flagged)};
}

Outcome hypothesis_filter_accuracy() {
  if (!g_fig2 || std::isnan(g_fig2->hypothesis_accuracy)) fig2_reproduction();
  const EnsembleReport& r = *g_fig2;
  // Paired difference on the shared records: HT correct minus matched-filter correct.
  double sum[2] = {0, 0}, sq[2] = {0, 0};
  int n[2] = {0, 0};
  for (const auto& row : r.rows) {
    if (row.flagged) continue;
    const bool one = row.hypothesis == 1;
    const double d = double((row.posterior > 0.5) == one) - double((row.S_AB > r.stats.S_th) == one);
    sum[row.hypothesis] += d;
    sq[row.hypothesis] += d * d;
    ++n[row.hypothesis];
  }
  double diff = 0, var = 0;
  for (int h = 0; h < 2; ++h) {
    const double mean = sum[h] / n[h];
    diff += 0.5 * mean;
    var += 0.25 * (sq[h] / n[h] - mean * mean) / (n[h] - 1);
  }
  const double se = std::sqrt(var);
  return {within(r.hypothesis_accuracy, 0.846, 0.03) && diff >= -se,
          fmt("accuracy %.4f (0.846 +- 0.03), matched-filter F %.4f, paired difference %.4f (>= -1 SE = %.4f)",
              r.hypothesis_accuracy, r.stats.F, diff, -se)};
}

// ---------------------------------------------------------------------------

Outcome photon_conservation() {
  const CascadeModel m = build_single_unit(UnitParams{}, SourceParams{});
  const FluxResult f = output_flux(m, SourceInitial::fock1, TimeGrid{0, 200, 1e-3});
  return {within(f.total, 1.0, 0.02), fmt("T=200: integrated output flux %.5f (1 +- 0.02)", f.total)};
}

Outcome decoherence_ordering() {
  SourceParams s;
  s.initial = SourceInitial::superposition;
  UnitParams near;
  near.delta2 = -6;
  const double f6 = coherence_trace(build_single_unit(near, s), TimeGrid{}).retained_fraction;
  const double f18 = coherence_trace(build_single_unit(UnitParams{}, s), TimeGrid{}).retained_fraction;
  EnsembleEstimate e;
  e.trajectories = 100;
  e.seed = 17;
  e.workers = workers();
  const CoherenceResult two = coherence_trace(build_two_unit(UnitParams{}, UnitParams{}, s), TimeGrid{0, 80, 5e-3}, e);
  // The one-unit fractions are exact; only the two-unit one carries error.
  const double gap_sigma = (f18 - two.retained_fraction) / two.retained_fraction_se;
  return {f6 > f18 && gap_sigma > 3,
          fmt("delta2=-6: %.4f > delta2=-18: %.4f > two units: %.4f +- %.4f (gap %.1f SE, need > 3)", f6, f18,
              two.retained_fraction, two.retained_fraction_se, gap_sigma)};
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome reproducibility() {
  const fs::path dir = fs::temp_directory_path() / ("qtraj_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  EnsembleConfig c = base_config(50, 99);
  const FilterKernel kernel = matched_kernel(c.model(), c.grid, c.kernel, c.kernel_estimate());
  std::vector<std::string> files;
  for (int w : {1, 1, 4}) {
    c.workers = w;
    const fs::path p = dir / ("report_" + std::to_string(files.size()) + ".json");
    write_report_json(run_ensemble(c, kernel), p);
    files.push_back(slurp(p));
  }
  fs::remove_all(dir);
  const bool same = files[0] == files[1] && files[0] == files[2];
  return {same && !files[0].empty(),
          fmt("n_traj=50: report.json (%zu bytes) identical across two runs and workers {1, 4}: %s", files[0].size(),
              same ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"steady-state oracle", steady_state},
      {"generator equivalence", generator_equivalence},
      {"unraveling consistency", unraveling_consistency},
      {"single-unit histogram statistics", fig2_reproduction},
      {"gamma12 = 2 variant", dos_variant},
      {"two-unit statistics", fig3_reproduction},
      {"hypothesis-testing filter", hypothesis_filter_accuracy},
      {"photon conservation", photon_conservation},
      {"decoherence ordering", decoherence_ordering},
      {"reproducibility", reproducibility},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  // ctest hides the output of passing tests, so the lines also go to a file.
  std::ofstream log("acceptance_results.txt", std::ios::trunc);
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    const std::string line = fmt("%s %2d %s: %s [%.0f s]", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(),
                                 o.detail.c_str(), secs);
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    log << line << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
