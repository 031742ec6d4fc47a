#include "qtraj/detection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "qtraj/log.hpp"

namespace qtraj {
namespace {

using Matrix = Propagator::Matrix;

double mean_of(std::span<const double> x) { return std::accumulate(x.begin(), x.end(), 0.0) / double(x.size()); }

double unbiased_variance(std::span<const double> x, double mean) {
  double s = 0;
  for (double v : x) s += (v - mean) * (v - mean);
  return s / double(x.size() - 1);
}

// Quantile with linear interpolation between order statistics.
double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * double(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::string to_string(KernelVariant v) { return v == KernelVariant::paper ? "paper" : "baseline_subtracted"; }

KernelVariant kernel_variant_from_string(const std::string& s) {
  if (s == "paper") return KernelVariant::paper;
  if (s == "baseline_subtracted") return KernelVariant::baseline_subtracted;
  fail(ErrorKind::configuration, "filter.kernel must be paper or baseline_subtracted, got '" + s + "'");
}

int FilterKernel::channel_index(const std::string& label) const {
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k] == label) return static_cast<int>(k);
  return -1;
}

std::vector<double> FilterKernel::energy() const {
  std::vector<double> out;
  for (const auto& v : h) {
    double s = 0;
    for (double x : v) s += x * x;
    out.push_back(s * grid.dt);
  }
  return out;
}

double filter_statistic(std::span<const double> h, std::span<const double> increments) {
  if (h.size() != increments.size())
    fail(ErrorKind::signature, "kernel has " + std::to_string(h.size()) + " samples but the record has " +
                                   std::to_string(increments.size()));
  double s = 0;
  for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * increments[i];
  return s;
}

double apply_filter(const TrajectoryRecord& record, const FilterKernel& kernel, const std::string& channel) {
  if (!(record.grid == kernel.grid)) fail(ErrorKind::signature, "record and kernel grids differ");
  const int kr = record.channel_index(channel);
  const int kk = kernel.channel_index(channel);
  if (kr < 0 || kk < 0) fail(ErrorKind::signature, "channel '" + channel + "' missing from record or kernel");
  if (record.increments.empty()) fail(ErrorKind::signature, "record carries no increments");
  return filter_statistic(kernel.h[static_cast<std::size_t>(kk)], record.increments[static_cast<std::size_t>(kr)]);
}

FilterKernel kernel_from_currents(const std::vector<MeanTrace>& I1, const std::vector<MeanTrace>& I0, KernelVariant variant) {
  if (I1.empty() || I1.size() != I0.size()) fail(ErrorKind::signature, "kernel needs matching n=1 and n=0 currents");
  FilterKernel k;
  k.grid = I1.front().grid;
  for (std::size_t c = 0; c < I1.size(); ++c) {
    if (!(I1[c].grid == k.grid) || !(I0[c].grid == k.grid)) fail(ErrorKind::signature, "current traces on different grids");
    const std::vector<double> a = I1[c].real();
    const std::vector<double> b = I0[c].real();
    std::vector<double> h(a.size());
    double gap = 0, peak = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      h[i] = variant == KernelVariant::paper ? a[i] : a[i] - b[i];
      gap += h[i] * (a[i] - b[i]);
      peak = std::max(peak, std::abs(h[i]));
    }
    if (peak < 1e-6)
      fail(ErrorKind::degenerate, "matched kernel for channel " + I1[c].label + " vanishes (max |h| < 1e-6)");
    const int sign = gap < 0 ? -1 : 1;
    if (sign < 0)
      for (double& x : h) x = -x;
    k.labels.push_back(I1[c].label);
    k.h.push_back(std::move(h));
    k.orientation.push_back(sign);
  }
  return k;
}

FilterKernel matched_kernel(const CascadeModel& model, const TimeGrid& grid, KernelVariant variant,
                            const EnsembleEstimate& estimate) {
  const auto I1 = expected_current(model, SourceInitial::fock1, grid, estimate);
  const auto I0 = expected_current(model, SourceInitial::fock0, grid, estimate);
  return kernel_from_currents(I1, I0, variant);
}

double snr(std::span<const double> S0, std::span<const double> S1) {
  if (S0.size() < 2 || S1.size() < 2) fail(ErrorKind::degenerate, "SNR needs at least two samples per hypothesis");
  const double m0 = mean_of(S0), m1 = mean_of(S1);
  const double var = unbiased_variance(S0, m0) + unbiased_variance(S1, m1);
  if (!(var > 0)) fail(ErrorKind::degenerate, "SNR undefined: both statistic variances vanish");
  return (m1 - m0) / std::sqrt(var);
}

double distinguishability(std::span<const double> S0, std::span<const double> S1, double S_th) {
  if (S0.empty() || S1.empty()) fail(ErrorKind::configuration, "distinguishability needs samples of both hypotheses");
  const auto below = std::count_if(S0.begin(), S0.end(), [&](double s) { return s < S_th; });
  const auto above = std::count_if(S1.begin(), S1.end(), [&](double s) { return s > S_th; });
  return 0.5 * (double(below) / double(S0.size()) + double(above) / double(S1.size()));
}

std::pair<double, double> optimize_threshold(std::span<const double> S0, std::span<const double> S1) {
  if (S0.empty() || S1.empty()) fail(ErrorKind::configuration, "threshold search needs samples of both hypotheses");
  std::vector<std::pair<double, int>> pooled;
  pooled.reserve(S0.size() + S1.size());
  for (double s : S0) pooled.emplace_back(s, 0);
  for (double s : S1) pooled.emplace_back(s, 1);
  std::sort(pooled.begin(), pooled.end());

  const double n0 = double(S0.size()), n1 = double(S1.size());
  double best_th = pooled.front().first, best_F = 0.5;
  bool found = false;
  std::size_t below0 = 0, below1 = 0;
  for (std::size_t i = 0; i < pooled.size();) {
    const double v = pooled[i].first;
    while (i < pooled.size() && pooled[i].first == v) {
      (pooled[i].second == 0 ? below0 : below1)++;
      ++i;
    }
    if (i == pooled.size()) break;
    const double th = 0.5 * (v + pooled[i].first);
    const double F = 0.5 * (double(below0) / n0 + (n1 - double(below1)) / n1);
    if (!found || F > best_F) {
      best_F = F;
      best_th = th;
      found = true;
    }
  }
  return {best_th, best_F};
}

Histogram histogram(std::span<const double> S0, std::span<const double> S1) {
  std::vector<double> all(S0.begin(), S0.end());
  all.insert(all.end(), S1.begin(), S1.end());
  Histogram hist;
  if (all.empty()) return hist;
  std::sort(all.begin(), all.end());
  double lo = all.front(), hi = all.back();
  const double iqr = quantile(all, 0.75) - quantile(all, 0.25);
  double width = 2.0 * iqr / std::cbrt(double(all.size()));
  int bins = 1;
  if (hi > lo && width > 0 && std::isfinite(width)) {
    bins = static_cast<int>(std::min(10000.0, std::ceil((hi - lo) / width)));
    bins = std::max(bins, 1);
  } else if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  width = (hi - lo) / bins;
  for (int b = 0; b <= bins; ++b) hist.edges.push_back(b == bins ? hi : lo + b * width);
  hist.count0.assign(static_cast<std::size_t>(bins), 0);
  hist.count1.assign(static_cast<std::size_t>(bins), 0);
  auto bin_of = [&](double s) {
    const int b = static_cast<int>(std::floor((s - lo) / width));
    return static_cast<std::size_t>(std::clamp(b, 0, bins - 1));
  };
  for (double s : S0) ++hist.count0[bin_of(s)];
  for (double s : S1) ++hist.count1[bin_of(s)];
  return hist;
}

DecisionStats decision_stats(std::vector<double> S0, std::vector<double> S1) {
  DecisionStats st;
  st.S0_samples = std::move(S0);
  st.S1_samples = std::move(S1);
  try {
    st.snr_signed = snr(st.S0_samples, st.S1_samples);
    st.snr = std::abs(st.snr_signed);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::degenerate) throw;
    warn(std::string("degenerate statistics: ") + e.what());
    st.snr = st.snr_signed = std::numeric_limits<double>::quiet_NaN();
  }
  std::tie(st.S_th, st.F) = optimize_threshold(st.S0_samples, st.S1_samples);
  st.histogram = histogram(st.S0_samples, st.S1_samples);
  return st;
}

// ---------------------------------------------------------------------------
// Likelihood-ratio filter

namespace {

// Unnormalized conditional state of one hypothesis. A Fock-state source puts
// the initial state in a single sector; only the jump operator moves weight
// between sectors and it acts on both sides, so the density matrix stays block
// diagonal over sectors. Blocks are propagated independently.
class BlockFilterState {
 public:
  BlockFilterState(const Propagator& prop, const QuantumState& psi, int channel) : prop_(&prop), channel_(channel) {
    const auto& sectors = prop.sectors();
    const std::size_t S = sectors.size();
    jump_.assign(S, std::vector<Propagator::SparseMatrix>(S));
    std::vector<int> sector_of(static_cast<std::size_t>(prop.dim()));
    for (std::size_t s = 0; s < S; ++s)
      for (int r = 0; r < sectors[s].size; ++r) sector_of[static_cast<std::size_t>(sectors[s].offset + r)] = static_cast<int>(s);
    std::vector<std::vector<std::vector<Eigen::Triplet<Complex>>>> trip(S, std::vector<std::vector<Eigen::Triplet<Complex>>>(S));
    const auto& J = prop.jump();
    for (Eigen::Index r = 0; r < J.outerSize(); ++r)
      for (Propagator::SparseMatrix::InnerIterator it(J, r); it; ++it) {
        const auto sr = static_cast<std::size_t>(sector_of[static_cast<std::size_t>(r)]);
        const auto sc = static_cast<std::size_t>(sector_of[static_cast<std::size_t>(it.col())]);
        trip[sr][sc].emplace_back(static_cast<int>(r) - sectors[sr].offset, static_cast<int>(it.col()) - sectors[sc].offset,
                                  it.value());
      }
    for (std::size_t a = 0; a < S; ++a)
      for (std::size_t b = 0; b < S; ++b)
        if (!trip[a][b].empty()) {
          jump_[a][b].resize(sectors[a].size, sectors[b].size);
          jump_[a][b].setFromTriplets(trip[a][b].begin(), trip[a][b].end());
        }
    for (const auto& sec : sectors) {
      monitored_.push_back((prop.channel_phase_factor(channel) * sec.channels[static_cast<std::size_t>(channel)]).eval());
    }

    const Propagator::Vector v = prop.restrict(psi.vector());
    const auto occupied = prop.occupied_sectors(v);
    if (occupied.size() != 1) fail(ErrorKind::internal, "hypothesis state must occupy a single sector");
    rho_.resize(S);
    for (std::size_t s = 0; s < S; ++s) rho_[s] = Matrix::Zero(sectors[s].size, sectors[s].size);
    const auto& sec = sectors[static_cast<std::size_t>(occupied[0])];
    const auto block = v.segment(sec.offset, sec.size);
    rho_[static_cast<std::size_t>(occupied[0])] = block * block.adjoint();
  }

  // One RK4 step of the Lindblad flow plus the record kick; returns the trace.
  double step(double h, double delta) {
    const std::size_t S = rho_.size();
    std::vector<Matrix> kick(S);
    for (std::size_t s = 0; s < S; ++s) {
      if (rho_[s].size() == 0) continue;
      kick[s] = monitored_[s] * rho_[s];
      kick[s] += kick[s].adjoint().eval();
    }
    auto k1 = lindblad(rho_);
    auto k2 = lindblad(axpy(rho_, 0.5 * h, k1));
    auto k3 = lindblad(axpy(rho_, 0.5 * h, k2));
    auto k4 = lindblad(axpy(rho_, h, k3));
    double tr = 0;
    for (std::size_t s = 0; s < S; ++s) {
      if (rho_[s].size() == 0) continue;
      rho_[s] += (h / 6.0) * (k1[s] + 2.0 * k2[s] + 2.0 * k3[s] + k4[s]) + delta * kick[s];
      rho_[s] = 0.5 * (rho_[s] + rho_[s].adjoint()).eval();
      tr += std::real(rho_[s].trace());
    }
    if (!(tr > 0) || !std::isfinite(tr)) fail(ErrorKind::numerical, "hypothesis filter lost its normalization");
    for (auto& r : rho_) r /= tr;
    return tr;
  }

 private:
  std::vector<Matrix> axpy(const std::vector<Matrix>& x, double a, const std::vector<Matrix>& y) const {
    std::vector<Matrix> out(x.size());
    for (std::size_t s = 0; s < x.size(); ++s) out[s] = x[s] + a * y[s];
    return out;
  }

  std::vector<Matrix> lindblad(const std::vector<Matrix>& rho) const {
    const auto& sectors = prop_->sectors();
    const std::size_t S = rho.size();
    std::vector<Matrix> out(S);
    for (std::size_t s = 0; s < S; ++s) out[s] = Matrix::Zero(rho[s].rows(), rho[s].cols());
    for (std::size_t s = 0; s < S; ++s) {
      if (rho[s].size() == 0 || rho[s].isZero(0.0)) continue;
      Matrix kr = sectors[s].drift * rho[s];
      out[s] += kr + kr.adjoint();
      for (const auto& L : sectors[s].channels) {
        const Matrix lr = L * rho[s];
        out[s] += L * lr.adjoint();
      }
      for (std::size_t t = 0; t < S; ++t) {
        const auto& J = jump_[t][s];
        if (J.nonZeros() == 0) continue;
        const Matrix jr = J * rho[s];
        out[t] += J * jr.adjoint();
      }
    }
    return out;
  }

  const Propagator* prop_;
  int channel_;
  std::vector<std::vector<Propagator::SparseMatrix>> jump_;  // [to][from]
  std::vector<Propagator::SparseMatrix> monitored_;
  std::vector<Matrix> rho_;
};

}  // namespace

HypothesisFilter::HypothesisFilter(const CascadeModel& model, HypothesisFilterOptions options)
    : model_(&model),
      options_(std::move(options)),
      psi0_(initial_state(model, SourceInitial::fock0)),
      psi1_(initial_state(model, SourceInitial::fock1)),
      prop0_(model, psi0_),
      prop1_(model, psi1_) {
  if (model.n_units != 1) fail(ErrorKind::configuration, "the hypothesis filter supports single-unit models");
  if (options_.stride < 1) fail(ErrorKind::configuration, "hypothesis filter stride must be >= 1");
}

double HypothesisFilter::log_likelihood_ratio(const TrajectoryRecord& record) const {
  int k = -1;
  for (std::size_t c = 0; c < model_->diffusive.size(); ++c)
    if (model_->diffusive[c].label == options_.channel) k = static_cast<int>(c);
  const int kr = record.channel_index(options_.channel);
  if (k < 0 || kr < 0) fail(ErrorKind::signature, "channel '" + options_.channel + "' missing from model or record");
  if (record.increments.empty()) fail(ErrorKind::signature, "record carries no increments");
  const auto& dQ = record.increments[static_cast<std::size_t>(kr)];
  const double dt = record.grid.dt;

  auto log_likelihood = [&](const Propagator& prop, const QuantumState& psi) {
    BlockFilterState state(prop, psi, k);
    double logL = 0;
    for (std::size_t i = 0; i < dQ.size();) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(options_.stride), dQ.size() - i);
      double delta = 0;
      for (std::size_t s = 0; s < n; ++s) delta += dQ[i + s];
      logL += std::log(state.step(double(n) * dt, delta));
      i += n;
    }
    return logL;
  };
  return log_likelihood(prop1_, psi1_) - log_likelihood(prop0_, psi0_);
}

double HypothesisFilter::posterior(const TrajectoryRecord& record) const {
  return 1.0 / (1.0 + std::exp(-log_likelihood_ratio(record)));
}

double hypothesis_filter(const TrajectoryRecord& record, const CascadeModel& model, const HypothesisFilterOptions& options) {
  return HypothesisFilter(model, options).posterior(record);
}

}  // namespace qtraj
