#include "qtraj/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>

#include "qtraj/parallel.hpp"
#include "qtraj/seed.hpp"

namespace qtraj {
namespace {

using SparseMatrix = Propagator::SparseMatrix;
using Vector = Propagator::Vector;
using Matrix = Propagator::Matrix;

constexpr Complex I{0.0, 1.0};

}  // namespace

void TimeGrid::validate() const {
  if (!(dt > 0) || !std::isfinite(dt)) fail(ErrorKind::configuration, "grid.dt must be > 0");
  if (!std::isfinite(t0) || !std::isfinite(T) || !(T > t0)) fail(ErrorKind::configuration, "grid needs T > t0");
  const double n = (T - t0) / dt;
  if (std::abs(n - std::round(n)) > 1e-6 * std::max(1.0, n))
    fail(ErrorKind::configuration, "(T - t0) / dt must be an integer");
}

int TimeGrid::steps() const { return static_cast<int>(std::lround((T - t0) / dt)); }

std::vector<double> MeanTrace::real() const {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [](Complex z) { return z.real(); });
  return out;
}

std::vector<double> MeanTrace::magnitude() const {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [](Complex z) { return std::abs(z); });
  return out;
}

int TrajectoryRecord::channel_index(const std::string& label) const {
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k] == label) return static_cast<int>(k);
  fail(ErrorKind::signature, "record has no channel '" + label + "'");
}

// ---------------------------------------------------------------------------
// Propagator

Propagator::Propagator(const CascadeModel& model, const QuantumState& seed)
    : Propagator(model, std::span<const QuantumState>(&seed, 1)) {}

Propagator::Propagator(const CascadeModel& model, std::span<const QuantumState> seeds) : model_(&model) {
  const int n = model.dims.total();
  const SparseMatrix& Hf = model.H.matrix();
  SparseMatrix drift_full = (-I) * Hf;
  SparseMatrix Jf = model.jump.matrix();
  drift_full -= 0.5 * SparseMatrix(Jf.adjoint() * Jf);
  for (const auto& ch : model.diffusive) {
    const SparseMatrix& L = ch.op.matrix();
    drift_full -= 0.5 * SparseMatrix(L.adjoint() * L);
  }

  // Connectivity of every operator that acts on the state vector.
  Eigen::SparseMatrix<double, Eigen::ColMajor> pattern = drift_full.cwiseAbs();
  pattern += Eigen::SparseMatrix<double, Eigen::ColMajor>(Jf.cwiseAbs());
  for (const auto& ch : model.diffusive) pattern += Eigen::SparseMatrix<double, Eigen::ColMajor>(ch.op.matrix().cwiseAbs());

  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::deque<int> queue;
  for (const auto& s : seeds) {
    if (s.dims() != model.dims) fail(ErrorKind::signature, "seed state dims do not match the model");
    for (int i = 0; i < n; ++i) {
      const bool occupied = s.is_pure() ? std::abs(s.vector()(i)) > 0 : s.density().row(i).cwiseAbs().maxCoeff() > 0;
      if (occupied && !seen[static_cast<std::size_t>(i)]) {
        seen[static_cast<std::size_t>(i)] = 1;
        queue.push_back(i);
      }
    }
  }
  while (!queue.empty()) {
    const int j = queue.front();
    queue.pop_front();
    for (Eigen::SparseMatrix<double, Eigen::ColMajor>::InnerIterator it(pattern, j); it; ++it) {
      const auto i = static_cast<std::size_t>(it.row());
      if (!seen[i] && it.value() != 0) {
        seen[i] = 1;
        queue.push_back(static_cast<int>(i));
      }
    }
  }

  // Sectors: connected components of the drift and diffusive channels
  // (undirected), ordered by their smallest member.
  Eigen::SparseMatrix<double, Eigen::ColMajor> nojump = drift_full.cwiseAbs();
  for (const auto& ch : model.diffusive) nojump += Eigen::SparseMatrix<double, Eigen::ColMajor>(ch.op.matrix().cwiseAbs());
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
    return x;
  };
  for (int j = 0; j < n; ++j) {
    if (!seen[static_cast<std::size_t>(j)]) continue;
    for (Eigen::SparseMatrix<double, Eigen::ColMajor>::InnerIterator it(nojump, j); it; ++it) {
      if (it.value() == 0 || !seen[static_cast<std::size_t>(it.row())]) continue;
      const int a = find(j), b = find(static_cast<int>(it.row()));
      if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    }
  }
  std::vector<std::vector<int>> groups;
  std::vector<int> group_of_root(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    if (!seen[static_cast<std::size_t>(i)]) continue;
    const int root = find(i);
    int& g = group_of_root[static_cast<std::size_t>(root)];
    if (g < 0) {
      g = static_cast<int>(groups.size());
      groups.emplace_back();
    }
    groups[static_cast<std::size_t>(g)].push_back(i);
  }

  full_to_reduced_.assign(static_cast<std::size_t>(n), -1);
  for (const auto& group : groups) {
    Sector sec;
    sec.offset = static_cast<int>(basis_.size());
    sec.size = static_cast<int>(group.size());
    for (int i : group) {
      full_to_reduced_[static_cast<std::size_t>(i)] = static_cast<int>(basis_.size());
      basis_.push_back(i);
    }
    sectors_.push_back(std::move(sec));
  }

  H_ = restrict(model.H);
  drift_ = restrict(Operator(model.dims, drift_full));
  J_ = restrict(model.jump);
  for (const auto& ch : model.diffusive) {
    L_.push_back(restrict(ch.op));
    phase_.push_back(std::exp(-I * ch.phase));
  }

  for (auto& sec : sectors_) {
    sec.drift = drift_.block(sec.offset, sec.offset, sec.size, sec.size);
    for (const auto& L : L_) sec.channels.push_back(L.block(sec.offset, sec.offset, sec.size, sec.size));
  }

  // Mixed-radix decode of the probe-cavity digits.
  const auto& sizes = model.dims.sizes();
  std::vector<int> stride(sizes.size(), 1);
  for (int s = static_cast<int>(sizes.size()) - 2; s >= 0; --s)
    stride[static_cast<std::size_t>(s)] = stride[static_cast<std::size_t>(s) + 1] * sizes[static_cast<std::size_t>(s) + 1];
  for (int r = 0; r < dim(); ++r) {
    const int full = basis_[static_cast<std::size_t>(r)];
    for (int u = 0; u < model.n_units; ++u) {
      const auto slot = static_cast<std::size_t>(CascadeModel::cavity_slot(u));
      if ((full / stride[slot]) % sizes[slot] == sizes[slot] - 1) {
        top_level_.push_back(r);
        break;
      }
    }
  }
}

Vector Propagator::restrict(const QuantumState::Vector& full) const {
  Vector v(dim());
  for (int r = 0; r < dim(); ++r) v(r) = full(basis_[static_cast<std::size_t>(r)]);
  return v;
}

Matrix Propagator::restrict(const QuantumState::Matrix& full) const {
  Matrix m(dim(), dim());
  for (int c = 0; c < dim(); ++c)
    for (int r = 0; r < dim(); ++r) m(r, c) = full(basis_[static_cast<std::size_t>(r)], basis_[static_cast<std::size_t>(c)]);
  return m;
}

SparseMatrix Propagator::restrict(const Operator& op) const {
  if (op.dims() != model_->dims) fail(ErrorKind::signature, "operator dims do not match the model");
  std::vector<Eigen::Triplet<Complex>> triplets;
  const auto& m = op.matrix();
  for (Eigen::Index k = 0; k < m.outerSize(); ++k) {
    const int r = full_to_reduced_[static_cast<std::size_t>(k)];
    if (r < 0) continue;
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      const int c = full_to_reduced_[static_cast<std::size_t>(it.col())];
      if (c >= 0) triplets.emplace_back(r, c, it.value());
    }
  }
  SparseMatrix out(dim(), dim());
  out.setFromTriplets(triplets.begin(), triplets.end());
  return out;
}

QuantumState Propagator::lift(const Vector& v) const {
  QuantumState::Vector full = QuantumState::Vector::Zero(model_->dims.total());
  for (int r = 0; r < dim(); ++r) full(basis_[static_cast<std::size_t>(r)]) = v(r);
  return QuantumState::pure(model_->dims, std::move(full));
}

QuantumState Propagator::lift(const Matrix& rho) const {
  const int n = model_->dims.total();
  QuantumState::Matrix full = QuantumState::Matrix::Zero(n, n);
  for (int c = 0; c < dim(); ++c)
    for (int r = 0; r < dim(); ++r) full(basis_[static_cast<std::size_t>(r)], basis_[static_cast<std::size_t>(c)]) = rho(r, c);
  return QuantumState::mixed(model_->dims, std::move(full));
}

Matrix Propagator::lindblad(const Matrix& rho) const {
  // Lρ = Kρ + ρK† + Σ LρL† with K the drift; ρK† = (Kρ)† for Hermitian ρ.
  Matrix out = drift_ * rho;
  out += out.adjoint().eval();
  Matrix tmp = J_ * rho;
  out.noalias() += J_ * tmp.adjoint();
  for (const auto& L : L_) {
    tmp.noalias() = L * rho;
    out.noalias() += L * tmp.adjoint();
  }
  return out;
}

namespace {

Matrix rk4_with_k1(const Propagator& p, const Matrix& rho, const Matrix& k1, double h) {
  Matrix k2 = p.lindblad(rho + (0.5 * h) * k1);
  Matrix k3 = p.lindblad(rho + (0.5 * h) * k2);
  Matrix k4 = p.lindblad(rho + h * k3);
  Matrix next = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  return 0.5 * (next + next.adjoint());
}

}  // namespace

Matrix Propagator::rk4_master_step(const Matrix& rho, double h) const { return rk4_with_k1(*this, rho, lindblad(rho), h); }

Vector Propagator::drift_propagate(const Vector& psi, double h) const {
  Vector out = psi;
  Vector term = psi;
  for (int n = 1; n <= 4; ++n) {
    term = (h / n) * (drift_ * term);
    out += term;
  }
  return out;
}

std::vector<int> Propagator::occupied_sectors(const Vector& psi) const {
  std::vector<int> out;
  for (std::size_t s = 0; s < sectors_.size(); ++s)
    if (psi.segment(sectors_[s].offset, sectors_[s].size).squaredNorm() > 0) out.push_back(static_cast<int>(s));
  return out;
}

void Propagator::drift_propagate(const Vector& psi, double h, std::span<const int> sectors, Vector& out) const {
  Vector term, tmp;
  for (int s : sectors) {
    const Sector& sec = sectors_[static_cast<std::size_t>(s)];
    term = psi.segment(sec.offset, sec.size);
    auto dst = out.segment(sec.offset, sec.size);
    dst = term;
    for (int n = 1; n <= 4; ++n) {
      tmp.noalias() = sec.drift * term;
      term = (h / n) * tmp;
      dst += term;
    }
  }
}

void Propagator::apply_channel(int k, const Vector& psi, std::span<const int> sectors, Vector& out) const {
  for (int s : sectors) {
    const Sector& sec = sectors_[static_cast<std::size_t>(s)];
    out.segment(sec.offset, sec.size).noalias() = sec.channels[static_cast<std::size_t>(k)] * psi.segment(sec.offset, sec.size);
  }
}

Complex trace_product(const SparseMatrix& op, const Matrix& rho) {
  Complex s = 0;
  for (Eigen::Index r = 0; r < op.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(op, r); it; ++it) s += it.value() * rho(it.col(), r);
  return s;
}

// ---------------------------------------------------------------------------
// Deterministic evolution

MasterResult evolve_master(const CascadeModel& model, const QuantumState& rho0, const TimeGrid& grid,
                           std::span<const Operator> observables, const MasterOptions& options) {
  grid.validate();
  if (rho0.dims() != model.dims) fail(ErrorKind::signature, "initial state dims do not match the model");
  const QuantumState start = rho0.is_pure() ? QuantumState::mixed(rho0.dims(), rho0.to_density()) : rho0;
  const Propagator prop(model, start);

  std::vector<SparseMatrix> obs;
  for (const auto& o : observables) obs.push_back(prop.restrict(o));

  const int N = grid.steps();
  const int m = std::max(1, static_cast<int>(std::floor(options.max_step / grid.dt + 1e-9)));
  const int check_every = options.positivity_checks > 0 ? std::max(1, N / options.positivity_checks) : 0;

  MasterResult result;
  result.traces.resize(obs.size());
  for (std::size_t o = 0; o < obs.size(); ++o) {
    result.traces[o].grid = grid;
    result.traces[o].values.resize(static_cast<std::size_t>(N));
  }

  Matrix rho = prop.restrict(start.density());
  Matrix k1 = prop.lindblad(rho);
  std::vector<Complex> y0(obs.size()), d0(obs.size()), y1(obs.size()), d1(obs.size());
  for (std::size_t o = 0; o < obs.size(); ++o) {
    y0[o] = trace_product(obs[o], rho);
    d0[o] = trace_product(obs[o], k1);
  }

  auto check_positive = [&](const Matrix& r) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(r, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-6)
      fail(ErrorKind::numerical, "density matrix lost positivity (truncation or step size too coarse)");
  };

  int next_check = check_every;
  for (int i = 0; i < N;) {
    const int chunk = std::min(m, N - i);
    const double h = chunk * grid.dt;
    Matrix next = rk4_with_k1(prop, rho, k1, h);
    Matrix k1n = prop.lindblad(next);
    for (std::size_t o = 0; o < obs.size(); ++o) {
      y1[o] = trace_product(obs[o], next);
      d1[o] = trace_product(obs[o], k1n);
      auto& v = result.traces[o].values;
      v[static_cast<std::size_t>(i)] = y0[o];
      for (int s = 1; s < chunk; ++s) {
        const double th = double(s) / chunk;
        const double th2 = th * th, th3 = th2 * th;
        v[static_cast<std::size_t>(i + s)] = (2 * th3 - 3 * th2 + 1) * y0[o] + (th3 - 2 * th2 + th) * h * d0[o] +
                                             (-2 * th3 + 3 * th2) * y1[o] + (th3 - th2) * h * d1[o];
      }
    }
    i += chunk;
    rho = std::move(next);
    k1 = std::move(k1n);
    std::swap(y0, y1);
    std::swap(d0, d1);

    const double drift = std::abs(std::real(rho.trace()) - 1.0);
    result.max_trace_drift = std::max(result.max_trace_drift, drift);
    if (!std::isfinite(drift) || drift > 1e-6) fail(ErrorKind::numerical, "trace drift exceeds 1e-6; reduce the step");
    if (check_every && i >= next_check) {
      check_positive(rho);
      next_check += check_every;
    }
  }
  if (check_every) check_positive(rho);
  result.final_state = prop.lift(rho);
  return result;
}

Operator quadrature(const CascadeModel& model, int channel) {
  const auto& ch = model.diffusive.at(static_cast<std::size_t>(channel));
  const Operator m = std::exp(-I * ch.phase) * ch.op;
  return m + m.adjoint();
}

std::vector<Complex> relax_probe_amplitudes(const CascadeModel& model, double duration, double dt) {
  QuantumState psi = source_state(SourceInitial::fock0, model.truncation.d_source);
  for (int j = 0; j < model.n_units; ++j) {
    psi = tensor(psi, basis_state(0, model.truncation.d_transmon));
    psi = tensor(psi, basis_state(0, model.truncation.d_cavity));
  }
  std::vector<Operator> a;
  for (int j = 0; j < model.n_units; ++j) a.push_back(model.cavity_annihilation(j));
  MasterOptions opts;
  opts.max_step = dt;
  const TimeGrid grid{0.0, duration, dt};
  const MasterResult r = evolve_master(model, psi, grid, {}, opts);
  std::vector<Complex> out;
  for (const auto& op : a) out.push_back(expectation(op, r.final_state));
  return out;
}

// ---------------------------------------------------------------------------
// Stochastic master equation

Matrix measurement_superoperator(const SparseMatrix& r, const Matrix& rho) {
  Matrix out = r * rho;
  out += out.adjoint().eval();
  const Complex tr = out.trace();
  out -= tr * rho;
  return out;
}

std::vector<double> step_sme(const Propagator& prop, Matrix& rho, double dt, std::span<const double> dW) {
  const int monitored = prop.model().n_units;
  if (static_cast<int>(dW.size()) != monitored)
    fail(ErrorKind::signature, "step_sme needs one Wiener increment per probe cavity");
  Matrix next = prop.rk4_master_step(rho, dt);
  std::vector<double> currents(static_cast<std::size_t>(monitored));
  for (int k = 0; k < monitored; ++k) {
    Matrix mr = prop.channel_phase_factor(k) * (prop.channel(k) * rho);
    mr += mr.adjoint().eval();
    const double x = std::real(mr.trace());
    currents[static_cast<std::size_t>(k)] = x * dt + dW[static_cast<std::size_t>(k)];
    next += dW[static_cast<std::size_t>(k)] * (mr - x * rho);
  }
  next = 0.5 * (next + next.adjoint());
  const double tr = std::real(next.trace());
  if (!std::isfinite(tr) || !next.allFinite() || tr <= 0)
    fail(ErrorKind::numerical, "SME step produced a non-finite state; reduce dt");
  rho = next / tr;
  return currents;
}

TrajectoryRecord run_sme_trajectory(const Propagator& prop, const QuantumState& rho0, const TimeGrid& grid,
                                    std::uint64_t seed, std::span<const Operator> observables) {
  grid.validate();
  const CascadeModel& model = prop.model();
  const int N = grid.steps();
  const int monitored = model.n_units;

  TrajectoryRecord rec;
  rec.grid = grid;
  rec.seed = seed;
  for (int k = 0; k < monitored; ++k) {
    rec.labels.push_back(model.diffusive[static_cast<std::size_t>(k)].label);
    rec.increments.emplace_back(static_cast<std::size_t>(N));
  }
  std::vector<SparseMatrix> obs;
  for (const auto& o : observables) {
    obs.push_back(prop.restrict(o));
    rec.expectations.emplace_back(static_cast<std::size_t>(N));
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(grid.dt));
  Matrix rho = prop.restrict(rho0.to_density());
  std::vector<double> dW(static_cast<std::size_t>(monitored));
  for (int i = 0; i < N; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    for (std::size_t o = 0; o < obs.size(); ++o) rec.expectations[o][ui] = trace_product(obs[o], rho);
    for (auto& w : dW) w = normal(rng);
    const auto I = step_sme(prop, rho, grid.dt, dW);
    for (int k = 0; k < monitored; ++k) rec.increments[static_cast<std::size_t>(k)][ui] = I[static_cast<std::size_t>(k)];
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Hybrid stochastic Schrödinger equation

TrajectoryRecord run_trajectory(const Propagator& prop, const QuantumState& psi0, const TimeGrid& grid,
                                std::uint64_t seed, const TrajectoryOptions& options) {
  grid.validate();
  if (!psi0.is_pure()) fail(ErrorKind::configuration, "run_trajectory needs a pure initial state");
  const CascadeModel& model = prop.model();
  const int N = grid.steps();
  const int K = prop.channel_count();
  const double dt = grid.dt;

  TrajectoryRecord rec;
  rec.grid = grid;
  rec.seed = seed;
  for (const auto& ch : model.diffusive) rec.labels.push_back(ch.label);
  if (options.keep_increments) rec.increments.assign(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(N)));
  if (options.keep_mean_currents)
    rec.mean_currents.assign(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(N)));
  std::vector<SparseMatrix> obs;
  for (const auto& o : options.observables) {
    obs.push_back(prop.restrict(o));
    rec.expectations.emplace_back(static_cast<std::size_t>(N));
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(dt));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  Vector psi = prop.restrict(psi0.vector());
  psi /= psi.norm();
  const int D = prop.dim();
  std::vector<Vector> Lpsi(static_cast<std::size_t>(K), Vector::Zero(D));
  std::vector<double> dQ(static_cast<std::size_t>(K));
  Vector Jpsi(D), next = Vector::Zero(D);
  std::vector<int> active = prop.occupied_sectors(psi);
  const auto& top = prop.top_level_indices();

  auto top_population = [&] {
    double p = 0;
    for (int r : top) p += std::norm(psi(r));
    return p;
  };
  rec.diagnostics.max_top_level_population = top_population();

  for (int i = 0; i < N; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    for (std::size_t o = 0; o < obs.size(); ++o) rec.expectations[o][ui] = psi.dot(obs[o] * psi);

    Jpsi.noalias() = prop.jump() * psi;
    const double p = Jpsi.squaredNorm() * dt;
    if (p > 0.1) fail(ErrorKind::numerical, "jump probability per step exceeds 0.1; reduce dt");
    const double u = options.deterministic ? 1.0 : uniform(rng);

    for (int k = 0; k < K; ++k) {
      const auto uk = static_cast<std::size_t>(k);
      prop.apply_channel(k, psi, active, Lpsi[uk]);
      const double mean = 2.0 * std::real(prop.channel_phase_factor(k) * psi.dot(Lpsi[uk]));
      const double w = options.deterministic ? 0.0 : normal(rng);
      dQ[uk] = mean * dt + w;
      if (options.keep_increments) rec.increments[uk][ui] = dQ[uk];
      if (options.keep_mean_currents) rec.mean_currents[uk][ui] = mean;
    }

    if (u < p) {
      psi = Jpsi / Jpsi.norm();
      rec.jump_times.push_back(grid.time(i));
      active = prop.occupied_sectors(psi);
      for (auto& v : Lpsi) v.setZero();
      next.setZero();
    } else {
      prop.drift_propagate(psi, dt, active, next);
      for (int k = 0; k < K; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        next += (prop.channel_phase_factor(k) * dQ[uk]) * Lpsi[uk];
      }
      const double norm = next.norm();
      if (!std::isfinite(norm) || norm < 1e-6 || norm > 1e6)
        fail(ErrorKind::numerical, "state norm left [1e-6, 1e6] before renormalization; reduce dt");
      rec.diagnostics.max_norm_drift = std::max(rec.diagnostics.max_norm_drift, std::abs(norm - 1.0));
      psi = next / norm;
    }
    if (!top.empty()) rec.diagnostics.max_top_level_population = std::max(rec.diagnostics.max_top_level_population, top_population());
  }

  if (rec.diagnostics.max_top_level_population > model.truncation.top_level_tolerance) {
    rec.diagnostics.flagged = true;
    rec.diagnostics.flag_reason = "top Fock level population exceeds tolerance";
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Ensemble means over SSE trajectories

namespace {

struct SeriesStats {
  std::vector<std::vector<Complex>> sum;
  std::vector<std::vector<double>> sumsq;  // |z|² summed
};

// Runs `count` trajectories, extracts per-trajectory series and reduces them
// in index order, so the result does not depend on the worker count.
template <typename Extract, typename Visit>
SeriesStats ensemble_series(const Propagator& prop, const QuantumState& psi0, const TimeGrid& grid,
                            const EnsembleEstimate& est, const TrajectoryOptions& opts, std::size_t n_series,
                            Extract extract, Visit visit) {
  const auto N = static_cast<std::size_t>(grid.steps());
  SeriesStats st;
  st.sum.assign(n_series, std::vector<Complex>(N));
  st.sumsq.assign(n_series, std::vector<double>(N));
  const int batch = std::max(8, 2 * est.workers);
  for (int start = 0; start < est.trajectories; start += batch) {
    const int count = std::min(batch, est.trajectories - start);
    std::vector<std::vector<std::vector<Complex>>> series(static_cast<std::size_t>(count));
    parallel_for(count, est.workers, [&](int b) {
      const auto idx = static_cast<std::uint64_t>(start + b);
      TrajectoryRecord rec = run_trajectory(prop, psi0, grid, derive_seed(est.seed, seed_stream::analysis, idx), opts);
      series[static_cast<std::size_t>(b)] = extract(rec);
    });
    for (int b = 0; b < count; ++b) {
      const auto& s = series[static_cast<std::size_t>(b)];
      for (std::size_t q = 0; q < n_series; ++q)
        for (std::size_t i = 0; i < N; ++i) {
          st.sum[q][i] += s[q][i];
          st.sumsq[q][i] += std::norm(s[q][i]);
        }
      visit(start + b, s);
    }
  }
  return st;
}

MeanTrace finish_trace(const SeriesStats& st, std::size_t q, int M, const TimeGrid& grid, std::string label) {
  MeanTrace t;
  t.grid = grid;
  t.label = std::move(label);
  const std::size_t N = st.sum[q].size();
  t.values.resize(N);
  t.standard_error.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    const Complex mean = st.sum[q][i] / double(M);
    t.values[i] = mean;
    const double var = M > 1 ? std::max(0.0, (st.sumsq[q][i] - M * std::norm(mean)) / (M - 1)) : 0.0;
    t.standard_error[i] = std::sqrt(var / M);
  }
  return t;
}

void require_hypothesis(SourceInitial n) {
  if (n == SourceInitial::superposition) fail(ErrorKind::configuration, "photon-number hypothesis must be fock0 or fock1");
}

}  // namespace

std::vector<double> moving_average(std::span<const double> x, int width) {
  std::vector<double> out(x.begin(), x.end());
  if (width <= 1 || x.empty()) return out;
  const int n = static_cast<int>(x.size());
  const int half = width / 2;
  std::vector<double> prefix(x.size() + 1, 0.0);
  for (int i = 0; i < n; ++i) prefix[static_cast<std::size_t>(i) + 1] = prefix[static_cast<std::size_t>(i)] + x[static_cast<std::size_t>(i)];
  for (int i = 0; i < n; ++i) {
    const int h = std::min({half, i, n - 1 - i});
    out[static_cast<std::size_t>(i)] = (prefix[static_cast<std::size_t>(i + h + 1)] - prefix[static_cast<std::size_t>(i - h)]) / (2 * h + 1);
  }
  return out;
}

std::vector<MeanTrace> expected_current(const CascadeModel& model, SourceInitial n, const TimeGrid& grid,
                                        const EnsembleEstimate& estimate) {
  require_hypothesis(n);
  grid.validate();
  const QuantumState psi0 = initial_state(model, n);
  std::vector<MeanTrace> out;

  const Propagator prop(model, psi0);
  if (model.n_units == 1 || prop.dim() <= estimate.exact_dim_limit) {
    std::vector<Operator> X;
    for (int u = 0; u < model.n_units; ++u) X.push_back(quadrature(model, model.cavity_channel(u)));
    MasterResult r = evolve_master(model, psi0, grid, X);
    for (int u = 0; u < model.n_units; ++u) {
      r.traces[static_cast<std::size_t>(u)].label = model.diffusive[static_cast<std::size_t>(u)].label;
      out.push_back(std::move(r.traces[static_cast<std::size_t>(u)]));
    }
    return out;
  }

  if (estimate.trajectories < 100) warn("kernel estimated from fewer than 100 trajectories is noisy");
  if (estimate.trajectories < 1) fail(ErrorKind::configuration, "kernel estimation needs at least one trajectory");
  TrajectoryOptions opts;
  opts.keep_increments = false;
  opts.keep_mean_currents = true;
  const auto units = static_cast<std::size_t>(model.n_units);
  auto extract = [units](const TrajectoryRecord& rec) {
    std::vector<std::vector<Complex>> s(units);
    for (std::size_t u = 0; u < units; ++u) s[u].assign(rec.mean_currents[u].begin(), rec.mean_currents[u].end());
    return s;
  };
  const SeriesStats st = ensemble_series(prop, psi0, grid, estimate, opts, units, extract, [](int, const auto&) {});
  for (std::size_t u = 0; u < units; ++u) {
    MeanTrace t = finish_trace(st, u, estimate.trajectories, grid, model.diffusive[u].label);
    if (estimate.smoothing_width > 1) {
      const auto smooth = moving_average(t.real(), estimate.smoothing_width);
      for (std::size_t i = 0; i < smooth.size(); ++i) t.values[i] = smooth[i];
    }
    out.push_back(std::move(t));
  }
  return out;
}

FluxResult output_flux(const CascadeModel& model, SourceInitial n, const TimeGrid& grid, const EnsembleEstimate& estimate) {
  require_hypothesis(n);
  grid.validate();
  const QuantumState psi0 = initial_state(model, n);
  const Operator& J = model.jump;
  const Operator& J2 = model.diffusive[static_cast<std::size_t>(model.j2_channel())].op;
  std::vector<Operator> obs{J.adjoint() * J, J2.adjoint() * J2};

  FluxResult res;
  if (model.n_units == 1) {
    MasterResult r = evolve_master(model, psi0, grid, obs);
    res.flux = std::move(r.traces[0]);
    res.j2_flux = std::move(r.traces[1]);
  } else {
    const Propagator prop(model, psi0);
    TrajectoryOptions opts;
    opts.keep_increments = false;
    opts.observables = obs;
    auto extract = [](const TrajectoryRecord& rec) { return rec.expectations; };
    const SeriesStats st = ensemble_series(prop, psi0, grid, estimate, opts, 2, extract, [](int, const auto&) {});
    res.flux = finish_trace(st, 0, estimate.trajectories, grid, "");
    res.j2_flux = finish_trace(st, 1, estimate.trajectories, grid, "");
  }
  res.flux.label = "flux_J";
  res.j2_flux.label = "flux_J2";

  const double n_photons = n == SourceInitial::fock1 ? 1.0 : 0.0;
  const double gc = model.source.gamma_c;
  res.reference.grid = grid;
  res.reference.label = "input_flux";
  const int N = grid.steps();
  res.reference.values.resize(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    res.reference.values[ui] = gc * n_photons * std::exp(-gc * (grid.time(i) - grid.t0));
    res.total += (res.flux.values[ui].real() + res.j2_flux.values[ui].real()) * grid.dt;
    res.input_total += res.reference.values[ui].real() * grid.dt;
  }
  return res;
}

CoherenceResult coherence_trace(const CascadeModel& model, const TimeGrid& grid, const EnsembleEstimate& estimate) {
  if (model.source.initial != SourceInitial::superposition)
    fail(ErrorKind::configuration, "coherence analysis needs the superposition source state");
  grid.validate();
  const QuantumState psi0 = initial_state(model);
  std::vector<Operator> obs{model.jump, model.source_annihilation()};

  CoherenceResult res;
  if (model.n_units == 1) {
    MasterResult r = evolve_master(model, psi0, grid, obs);
    res.output = std::move(r.traces[0]);
    res.source = std::move(r.traces[1]);
  } else {
    const Propagator prop(model, psi0);
    TrajectoryOptions opts;
    opts.keep_increments = false;
    opts.observables = obs;
    auto extract = [](const TrajectoryRecord& rec) { return rec.expectations; };
    // Coarse per-trajectory copies of <J> for the error of the retained fraction.
    const int N = grid.steps();
    const int stride = std::max(1, N / 800);
    std::vector<std::vector<Complex>> coarse(static_cast<std::size_t>(estimate.trajectories));
    auto visit = [&](int idx, const std::vector<std::vector<Complex>>& s) {
      auto& c = coarse[static_cast<std::size_t>(idx)];
      for (int i = 0; i < N; i += stride) c.push_back(s[0][static_cast<std::size_t>(i)]);
    };
    const SeriesStats st = ensemble_series(prop, psi0, grid, estimate, opts, 2, extract, visit);
    res.output = finish_trace(st, 0, estimate.trajectories, grid, "");
    res.source = finish_trace(st, 1, estimate.trajectories, grid, "");

    // Linearize |mean| around the phase of the ensemble mean: each trajectory
    // contributes Re(conj(u) <J>_i) with u the unit phase of the mean.
    double den = 0;
    for (int i = 0; i < N; i += stride) den += std::sqrt(model.source.gamma_c) * 0.5 * std::exp(-0.5 * model.source.gamma_c * (grid.time(i) - grid.t0));
    std::vector<double> f;
    for (const auto& c : coarse) {
      double acc = 0;
      for (std::size_t q = 0; q < c.size(); ++q) {
        const Complex m = res.output.values[q * static_cast<std::size_t>(stride)];
        const Complex u = std::abs(m) > 0 ? m / std::abs(m) : Complex(1.0);
        acc += std::real(std::conj(u) * c[q]);
      }
      f.push_back(acc / den);
    }
    double mean = 0, var = 0;
    for (double x : f) mean += x;
    mean /= double(f.size());
    for (double x : f) var += (x - mean) * (x - mean);
    if (f.size() > 1) res.retained_fraction_se = std::sqrt(var / double(f.size() - 1) / double(f.size()));
  }
  // Report magnitudes; the complex means are no longer needed.
  for (MeanTrace* t : {&res.output, &res.source})
    for (auto& v : t->values) v = std::abs(v);
  res.output.label = "abs_J";
  res.source.label = "abs_c";

  const double gc = model.source.gamma_c;
  res.reference.grid = grid;
  res.reference.label = "free_decay";
  const int N = grid.steps();
  res.reference.values.resize(static_cast<std::size_t>(N));
  double num = 0, den = 0;
  for (int i = 0; i < N; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    res.reference.values[ui] = std::sqrt(gc) * 0.5 * std::exp(-0.5 * gc * (grid.time(i) - grid.t0));
    num += res.output.values[ui].real();
    den += res.reference.values[ui].real();
  }
  res.retained_fraction = num / den;
  return res;
}

}  // namespace qtraj
