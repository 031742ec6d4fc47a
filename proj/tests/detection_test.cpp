#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "qtraj/detection.hpp"
#include "support.hpp"

using namespace qtraj;

namespace {

TrajectoryRecord make_record(const TimeGrid& grid, std::vector<double> dQ) {
  TrajectoryRecord r;
  r.grid = grid;
  r.labels = {"A", "J2"};
  r.increments = {std::move(dQ), std::vector<double>(static_cast<std::size_t>(grid.steps()), 0.0)};
  return r;
}

FilterKernel make_kernel(const TimeGrid& grid, std::vector<double> h) {
  FilterKernel k;
  k.grid = grid;
  k.labels = {"A"};
  k.h = {std::move(h)};
  k.orientation = {1};
  return k;
}

std::vector<double> normals(int n, double mean, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(mean, 1.0);
  std::vector<double> x(static_cast<std::size_t>(n));
  for (auto& v : x) v = g(rng);
  return x;
}

// Exhaustive oracle: F at every midpoint between adjacent distinct pooled values.
double brute_force_F(const std::vector<double>& S0, const std::vector<double>& S1) {
  std::vector<double> all(S0);
  all.insert(all.end(), S1.begin(), S1.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  double best = 0.5;
  for (std::size_t i = 0; i + 1 < all.size(); ++i) {
    const double th = 0.5 * (all[i] + all[i + 1]);
    double below = 0, above = 0;
    for (double s : S0) below += s < th;
    for (double s : S1) above += s > th;
    best = std::max(best, 0.5 * (below / double(S0.size()) + above / double(S1.size())));
  }
  return best;
}

}  // namespace

TEST_CASE("linear filter") {
  const TimeGrid grid{0, 0.01, 1e-3};
  const std::vector<double> dQ{0.1, -0.2, 0.05, 0.3, 0.0, -0.1, 0.2, 0.4, -0.3, 0.15};
  const auto rec = make_record(grid, dQ);

  CHECK(apply_filter(rec, make_kernel(grid, std::vector<double>(10, 0.0)), "A") == 0.0);
  double total = 0;
  for (double x : dQ) total += x;
  CHECK(apply_filter(rec, make_kernel(grid, std::vector<double>(10, 1.0)), "A") == doctest::Approx(total).epsilon(1e-15));

  std::vector<double> h(10), h2(10);
  for (int i = 0; i < 10; ++i) {
    h[static_cast<std::size_t>(i)] = std::sin(0.3 * i);
    h2[static_cast<std::size_t>(i)] = std::cos(1.1 * i);
  }
  const double S = apply_filter(rec, make_kernel(grid, h), "A");
  std::vector<double> scaled(h);
  for (auto& x : scaled) x *= 2.5;
  CHECK(apply_filter(rec, make_kernel(grid, scaled), "A") == doctest::Approx(2.5 * S).epsilon(1e-15));

  SUBCASE("linear in the kernel and in the record") {
    std::vector<double> sum(10), dQ2(10), dsum(10);
    for (std::size_t i = 0; i < 10; ++i) {
      sum[i] = h[i] + h2[i];
      dQ2[i] = 0.01 * double(i) - 0.02;
      dsum[i] = dQ[i] + dQ2[i];
    }
    const double S2 = apply_filter(rec, make_kernel(grid, h2), "A");
    CHECK(apply_filter(rec, make_kernel(grid, sum), "A") == doctest::Approx(S + S2).epsilon(1e-14));
    const auto rec2 = make_record(grid, dQ2), recsum = make_record(grid, dsum);
    const auto k = make_kernel(grid, h);
    CHECK(apply_filter(recsum, k, "A") == doctest::Approx(S + apply_filter(rec2, k, "A")).epsilon(1e-14));
  }
  SUBCASE("left-endpoint sum") {
    double expected = 0;
    for (std::size_t i = 0; i < 10; ++i) expected += h[i] * dQ[i];
    CHECK(S == expected);
  }
  SUBCASE("grid and channel mismatches") {
    try {
      apply_filter(rec, make_kernel(TimeGrid{0, 0.02, 2e-3}, h), "A");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::signature);
    }
    CHECK_THROWS_AS(apply_filter(rec, make_kernel(grid, h), "B"), Error);
  }
}

TEST_CASE("matched kernel") {
  const auto& I1 = test::fig2_currents(SourceInitial::fock1);
  const auto& I0 = test::fig2_currents(SourceInitial::fock0);
  const FilterKernel paper = kernel_from_currents(I1, I0, KernelVariant::paper);
  const FilterKernel base = kernel_from_currents(I1, I0, KernelVariant::baseline_subtracted);

  REQUIRE(paper.h.size() == 1);
  CHECK(paper.h[0].size() == 80000);
  CHECK(paper.labels == std::vector<std::string>{"A"});
  CHECK(paper.energy()[0] > 0);
  CHECK(std::abs(paper.orientation[0]) == 1);

  SUBCASE("oriented so that n = 1 raises the expected statistic") {
    const auto a = I1[0].real(), b = I0[0].real();
    double gap = 0;
    for (std::size_t i = 0; i < a.size(); ++i) gap += paper.h[0][i] * (a[i] - b[i]);
    CHECK(gap > 0);
  }
  SUBCASE("the two variants agree because the empty-source current vanishes") {
    double sup = 0;
    for (std::size_t i = 0; i < paper.h[0].size(); ++i) sup = std::max(sup, std::abs(paper.h[0][i] - base.h[0][i]));
    CHECK(sup < 1e-3);
  }
  SUBCASE("a decoupled waveguide gives a degenerate kernel") {
    UnitParams p;
    p.gamma01 = 0;
    const CascadeModel m = build_single_unit(p, SourceParams{});
    try {
      matched_kernel(m, TimeGrid{0, 10, 1e-3});
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::degenerate);
    }
  }
  CHECK(kernel_variant_from_string("baseline_subtracted") == KernelVariant::baseline_subtracted);
  CHECK(to_string(KernelVariant::paper) == "paper");
  CHECK_THROWS_AS(kernel_variant_from_string("optimal"), Error);
}

TEST_CASE("SNR") {
  const std::vector<double> a{1.0, 2.0, 4.0, 7.0};
  CHECK(snr(a, a) == 0.0);

  SUBCASE("Gaussian samples approach 2/sqrt(2)") {
    const auto S0 = normals(10000, 0.0, 1), S1 = normals(10000, 2.0, 2);
    CHECK(std::abs(snr(S0, S1) - 1.4142) < 0.1);
  }
  SUBCASE("sample means and unbiased variances") {
    const std::vector<double> S0{0.0, 1.0, 2.0}, S1{3.0, 5.0};
    // means 1 and 4, variances 1 and 2.
    CHECK(snr(S0, S1) == doctest::Approx(3.0 / std::sqrt(3.0)));
  }
  SUBCASE("affine maps leave SNR and F unchanged") {
    const auto S0 = normals(500, 0.0, 3), S1 = normals(500, 1.0, 4);
    std::vector<double> T0(S0), T1(S1);
    for (auto& x : T0) x = 3.0 * x - 7.0;
    for (auto& x : T1) x = 3.0 * x - 7.0;
    CHECK(snr(T0, T1) == doctest::Approx(snr(S0, S1)).epsilon(1e-12));
    const auto [th, F] = optimize_threshold(S0, S1);
    const auto [th2, F2] = optimize_threshold(T0, T1);
    CHECK(F2 == F);
    CHECK(th2 == doctest::Approx(3.0 * th - 7.0).epsilon(1e-12));
  }
  SUBCASE("degenerate inputs") {
    const std::vector<double> one{1.0}, flat{2.0, 2.0};
    for (auto [x, y] : {std::pair{one, a}, std::pair{flat, flat}}) {
      try {
        snr(x, y);
        FAIL("expected an error");
      } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::degenerate);
      }
    }
  }
}

TEST_CASE("distinguishability and threshold search") {
  SUBCASE("identical sample sets give F = 0.5") {
    const auto S = normals(300, 0.0, 5);
    const auto [th, F] = optimize_threshold(S, S);
    CHECK(F <= 0.5 + 1.0 / 300);
    (void)th;
  }
  SUBCASE("disjoint supports give F = 1") {
    const std::vector<double> S0{-3, -2, -1}, S1{1, 2, 5};
    const auto [th, F] = optimize_threshold(S0, S1);
    CHECK(F == 1.0);
    CHECK(th == 0.0);
    CHECK(distinguishability(S0, S1, th) == 1.0);
  }
  SUBCASE("counting at a fixed threshold") {
    const std::vector<double> S0{0, 1, 2, 3}, S1{1, 2, 3, 4};
    CHECK(distinguishability(S0, S1, 1.5) == doctest::Approx(0.5 * (0.5 + 0.75)));
  }
  SUBCASE("ties go to the smaller threshold") {
    const std::vector<double> S0{0, 2}, S1{1, 3};
    // Midpoints 0.5 and 2.5 both give F = 0.75; 1.5 gives 0.5.
    const auto [th, F] = optimize_threshold(S0, S1);
    CHECK(F == 0.75);
    CHECK(th == 0.5);
  }
  SUBCASE("matches an exhaustive midpoint scan") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      auto S0 = normals(400, 0.0, seed), S1 = normals(600, 1.2, seed + 50);
      for (auto& x : S0) x = std::round(x * 20) / 20;  // force ties
      const auto [th, F] = optimize_threshold(S0, S1);
      CHECK(F == brute_force_F(S0, S1));
      CHECK(distinguishability(S0, S1, th) == F);
    }
  }
  SUBCASE("F is a rank statistic") {
    const auto S0 = normals(400, 0.0, 8), S1 = normals(400, 0.7, 9);
    std::vector<double> T0(S0), T1(S1);
    for (auto& x : T0) x = std::exp(x) + x * x * x;
    for (auto& x : T1) x = std::exp(x) + x * x * x;
    CHECK(optimize_threshold(T0, T1).second == optimize_threshold(S0, S1).second);
  }
}

TEST_CASE("two-channel combination") {
  CHECK(combine_two_channel(0, 0) == 0.0);
  CHECK(combine_two_channel(1.25, 1.25) == 1.25);
  CHECK(combine_two_channel(1, 2) == 1.5);
}

TEST_CASE("histogram and decision statistics") {
  const auto S0 = normals(1000, 0.0, 11), S1 = normals(1000, 1.5, 12);
  const auto st = decision_stats(S0, S1);
  CHECK(st.snr >= 0);
  CHECK(st.snr == std::abs(st.snr_signed));
  CHECK(st.F >= 0.5);
  CHECK(st.F <= 1.0);
  CHECK(st.snr == doctest::Approx(snr(S0, S1)));

  const Histogram& h = st.histogram;
  REQUIRE(h.edges.size() == h.count0.size() + 1);
  CHECK(std::is_sorted(h.edges.begin(), h.edges.end()));
  int n0 = 0, n1 = 0;
  for (int c : h.count0) n0 += c;
  for (int c : h.count1) n1 += c;
  CHECK(n0 == 1000);
  CHECK(n1 == 1000);
  CHECK(h.edges.front() == *std::min_element(S0.begin(), S0.end()));

  SUBCASE("negative orientation still reports SNR >= 0 and F >= 0.5") {
    const auto flipped = decision_stats(S1, S0);
    CHECK(flipped.snr_signed < 0);
    CHECK(flipped.snr == doctest::Approx(st.snr));
  }
  SUBCASE("a single sample per hypothesis warns and reports NaN") {
    test::WarningCapture w;
    const auto d = decision_stats({0.0}, {1.0});
    CHECK(std::isnan(d.snr));
    CHECK(w.messages.size() == 1);
    CHECK(d.F == 1.0);
    CHECK(d.histogram.count0.size() >= 1);
  }
}

TEST_CASE("hypothesis filter") {
  const CascadeModel& m = test::fig2_model();
  const HypothesisFilter filter(m);

  SUBCASE("an empty record leaves the flat prior") {
    TrajectoryRecord r;
    r.grid = TimeGrid{0, 1, 1e-3};
    r.labels = {"A", "J2"};
    r.increments = {{}, {}};
    CHECK(filter.posterior(r) == 0.5);
    CHECK(hypothesis_filter(r, m) == 0.5);
  }
  SUBCASE("two-unit models are rejected") {
    Truncation t;
    t.d_cavity = 4;
    const CascadeModel two = build_two_unit(UnitParams{}, UnitParams{}, SourceParams{}, t);
    try {
      HypothesisFilter f(two);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::configuration);
    }
  }
  SUBCASE("posterior is a probability and responds to the record") {
    const auto psi1 = initial_state(m, SourceInitial::fock1);
    const Propagator p1(m, psi1);
    const auto rec = run_trajectory(p1, psi1, TimeGrid{0, 10, 1e-3}, 5);
    const double post = filter.posterior(rec);
    CHECK(post > 0.0);
    CHECK(post < 1.0);
    CHECK(filter.log_likelihood_ratio(rec) == doctest::Approx(std::log(post / (1 - post))).epsilon(1e-9));
    // A strong signal-shaped offset added to the record favours n = 1.
    auto boosted = rec;
    const auto& I1 = test::fig2_currents(SourceInitial::fock1)[0].values;
    const auto& I0 = test::fig2_currents(SourceInitial::fock0)[0].values;
    for (std::size_t i = 0; i < boosted.increments[0].size(); ++i)
      boosted.increments[0][i] += 20.0 * (I1[i].real() - I0[i].real()) * 1e-3;
    CHECK(filter.log_likelihood_ratio(boosted) > filter.log_likelihood_ratio(rec));
  }
}
