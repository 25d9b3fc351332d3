#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "qa/equilibrium.hpp"
#include "qa/ising.hpp"
#include "qa/rng.hpp"
#include "qa/schedule.hpp"
#include "qa/spectrum.hpp"

using namespace qa;

TEST_CASE("thermal frequency constant") {
  const auto t = TempParams::from_mK(40.0);
  CHECK(t.f_T_GHz == Catch::Approx(0.833465).epsilon(1e-6));
  CHECK_THROWS_AS(TempParams::from_mK(0.0), validation_error);
  CHECK_THROWS_AS(TempParams::from_mK(-1.0), validation_error);
}

TEST_CASE("boltzmann closed forms") {
  const auto t = TempParams::from_mK(40.0);

  SECTION("two degenerate levels split evenly") {
    const auto d = boltzmann({1.5, 1.5}, t);
    CHECK(d.probs[0] == Catch::Approx(0.5));
    CHECK(d.probs[1] == Catch::Approx(0.5));
  }

  SECTION("two levels split by exactly f_T") {
    const auto d = boltzmann({0.0, t.f_T_GHz}, t);
    const double expected0 = 1.0 / (1.0 + std::exp(-1.0));
    CHECK(d.probs[0] == Catch::Approx(expected0).epsilon(1e-12));
    CHECK(d.probs[1] == Catch::Approx(1.0 - expected0).epsilon(1e-12));
    CHECK(d.probs[0] == Catch::Approx(0.73106).margin(1e-5));
    CHECK(d.probs[1] == Catch::Approx(0.26894).margin(1e-5));
  }

  SECTION("shift invariance") {
    const std::vector<double> e{0.3, 0.9, 2.2, 2.2, 3.7};
    std::vector<double> shifted = e;
    for (double& v : shifted) v += 123.456;
    const auto a = boltzmann(e, t);
    const auto b = boltzmann(shifted, t);
    for (std::size_t i = 0; i < e.size(); ++i)
      CHECK(a.probs[i] == Catch::Approx(b.probs[i]).margin(1e-12));
  }

  SECTION("strictly increasing energies give strictly decreasing probs") {
    const auto d = boltzmann({0.0, 0.1, 0.5, 1.1, 2.0}, t);
    for (std::size_t i = 1; i < d.probs.size(); ++i) CHECK(d.probs[i] < d.probs[i - 1]);
  }

  SECTION("T -> 0 limit concentrates on a unique ground level") {
    const auto cold = TempParams::from_mK(1e-3);
    const auto d = boltzmann({0.0, 0.5, 1.0}, cold);
    CHECK(d.probs[0] == Catch::Approx(1.0).margin(1e-12));
    CHECK(d.probs[1] + d.probs[2] < 1e-12);
  }
}

TEST_CASE("truncated boltzmann matches the exhaustive partition function") {
  // 16-qubit instance at s = 1: quantum levels are B(1) * classical energies,
  // so the K-level distribution must equal the full 2^16 Boltzmann sum
  // restricted to the K lowest states and renormalized.
  const auto inst = generate_instance(16, chimera_edges(2, 1), 321);
  const auto sched = default_schedule();
  const auto temp = TempParams::from_mK(40.0);
  const int kLevels = 12;
  const double b1 = sched.evaluate(1.0).B;

  const auto op = build_hamiltonian(inst, sched, 1.0);
  const auto slice = lowest_k_eigen(op, kLevels);
  const auto dist = boltzmann(slice.energies, temp);

  // Oracle: direct sum over all classical states.
  std::vector<double> all(1u << inst.n);
  double emin = std::numeric_limits<double>::infinity();
  for (std::uint64_t x = 0; x < all.size(); ++x) {
    all[x] = b1 * classical_energy(inst, config_from_index(x, inst.n));
    emin = std::min(emin, all[x]);
  }
  std::sort(all.begin(), all.end());
  double z_restricted = 0.0;
  std::vector<double> expected(kLevels);
  for (int i = 0; i < kLevels; ++i) {
    expected[i] = std::exp(-(all[i] - emin) / temp.f_T_GHz);
    z_restricted += expected[i];
  }
  for (int i = 0; i < kLevels; ++i) {
    expected[i] /= z_restricted;
    CHECK(dist.probs[i] == Catch::Approx(expected[i]).margin(1e-8));
  }
}

TEST_CASE("distance metrics") {
  LevelDistribution p, q;
  p.probs = {1.0, 0.0};
  q.probs = {0.0, 1.0};
  CHECK(distance(p, p, DistanceMetric::TVD) == 0.0);
  CHECK(distance(p, p, DistanceMetric::KL) == 0.0);
  CHECK(distance(p, q, DistanceMetric::TVD) == 1.0);
  CHECK_THROWS_AS(distance(p, q, DistanceMetric::KL), validation_error);

  LevelDistribution r;
  r.probs = {0.5};
  CHECK_THROWS_AS(distance(p, r, DistanceMetric::TVD), validation_error);
}

TEST_CASE("TVD is a metric on random triples") {
  Xoshiro256ss rng(555);
  auto random_dist = [&](int k) {
    LevelDistribution d;
    d.probs.resize(k);
    double z = 0.0;
    for (double& v : d.probs) z += (v = rng.uniform() + 1e-6);
    for (double& v : d.probs) v /= z;
    return d;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_dist(6), b = random_dist(6), c = random_dist(6);
    const double ab = distance(a, b, DistanceMetric::TVD);
    const double ba = distance(b, a, DistanceMetric::TVD);
    const double ac = distance(a, c, DistanceMetric::TVD);
    const double cb = distance(c, b, DistanceMetric::TVD);
    CHECK(ab == Catch::Approx(ba).margin(1e-15));
    CHECK(ab <= ac + cb + 1e-15);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0 + 1e-15);
    const double kl = distance(a, b, DistanceMetric::KL);
    CHECK(kl >= -1e-15);
  }
}

TEST_CASE("truncation bound is reported") {
  const auto t = TempParams::from_mK(40.0);
  const auto d = boltzmann({0.0, 10.0, 20.0}, t);
  CHECK(d.truncation_bound == Catch::Approx(3.0 * std::exp(-20.0 / t.f_T_GHz)));
}
