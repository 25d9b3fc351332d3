#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "qa/ising.hpp"

using namespace qa;

namespace {

// Independent oracle: plain loop over every configuration, no Gray-code
// shortcuts, used to cross-check the incremental enumeration paths.
std::pair<double, std::vector<std::uint64_t>> enumerate_minimum(
    const ProblemInstance& inst) {
  const std::uint64_t total = std::uint64_t{1} << inst.n;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::uint64_t> argmins;
  for (std::uint64_t x = 0; x < total; ++x) {
    const double e = classical_energy(inst, config_from_index(x, inst.n));
    if (e < best - 1e-9) {
      best = e;
      argmins = {x};
    } else if (e <= best + 1e-9) {
      argmins.push_back(x);
    }
  }
  return {best, argmins};
}

ProblemInstance random_instance(int n, int cells_rows, int cells_cols,
                                std::uint64_t seed) {
  return generate_instance(n, chimera_edges(cells_rows, cells_cols), seed);
}

}  // namespace

TEST_CASE("classical energy on tiny hand-checked instances") {
  ProblemInstance one{1, {1.0 / 3.0}, {}, "", {}};
  CHECK(classical_energy(one, {{-1}}) == Catch::Approx(-1.0 / 3.0));

  ProblemInstance two{2, {1.0 / 3.0, -1.0 / 3.0}, {{0, 1, -1.0}}, "", {}};
  CHECK(classical_energy(two, {{1, 1}}) == Catch::Approx(-1.0));

  CHECK_THROWS_AS(classical_energy(two, {{1}}), validation_error);
}

TEST_CASE("spin/bit convention is a bijection") {
  const int n = 5;
  std::set<std::uint64_t> seen;
  for (std::uint64_t x = 0; x < (1u << n); ++x) {
    const auto cfg = config_from_index(x, n);
    REQUIRE(cfg.spins.size() == n);
    for (int v : cfg.spins) REQUIRE((v == 1 || v == -1));
    seen.insert(index_from_config(cfg));
  }
  CHECK(seen.size() == (1u << n));
  // sigma = +1 corresponds to bit 0
  CHECK(config_from_index(0, 3).spins == std::vector<int>{1, 1, 1});
  CHECK(config_from_index(5, 3).spins == std::vector<int>{-1, 1, -1});
}

TEST_CASE("chimera graph sizes") {
  CHECK(chimera_edges(1, 1).size() == 16);
  CHECK(chimera_edges(2, 1).size() == 36);
  CHECK(chimera_edges(2, 2).size() == 80);
  const auto edges = chimera_edges(2, 1);
  std::set<int> touched;
  for (auto [i, j] : edges) {
    touched.insert(i);
    touched.insert(j);
    CHECK(i < j);
  }
  CHECK(touched.size() == 16);  // 8 qubits per cell, 2 cells
  CHECK_THROWS_AS(chimera_edges(0, 1), validation_error);
}

TEST_CASE("generate_instance is deterministic and draws the right values") {
  const auto edges = chimera_edges(1, 1);
  const auto a = generate_instance(8, edges, 42);
  const auto b = generate_instance(8, edges, 42);
  CHECK(a.h == b.h);
  REQUIRE(a.couplings.size() == b.couplings.size());
  for (std::size_t i = 0; i < a.couplings.size(); ++i)
    CHECK(a.couplings[i].value == b.couplings[i].value);
  const auto c = generate_instance(8, edges, 43);
  CHECK(a.h != c.h);

  for (double v : a.h) CHECK(std::abs(v) == Catch::Approx(1.0 / 3.0));
  for (const auto& cp : a.couplings) {
    const bool ok = cp.value == 1.0 / 3.0 || cp.value == -1.0 / 3.0 || cp.value == -1.0;
    CHECK(ok);
  }

  CHECK_THROWS_AS(generate_instance(4, {{0, 4}}, 1), validation_error);
}

TEST_CASE("coupler values are uniform over the three choices") {
  // 10^5 draws; each category is Binomial(L, 1/3).
  const int kDraws = 100000;
  std::vector<std::pair<int, int>> edges;
  const int n = 450;
  for (int i = 0; i < n - 1 && static_cast<int>(edges.size()) < kDraws; ++i)
    for (int j = i + 1; j < n && static_cast<int>(edges.size()) < kDraws; ++j)
      edges.emplace_back(i, j);
  REQUIRE(static_cast<int>(edges.size()) == kDraws);
  const auto inst = generate_instance(n, edges, 2024);
  int counts[3] = {0, 0, 0};
  for (const auto& c : inst.couplings) {
    if (c.value == 1.0 / 3.0) ++counts[0];
    if (c.value == -1.0 / 3.0) ++counts[1];
    if (c.value == -1.0) ++counts[2];
  }
  const double mean = kDraws / 3.0;
  const double sigma = std::sqrt(kDraws * (1.0 / 3.0) * (2.0 / 3.0));
  for (int k = 0; k < 3; ++k) {
    CAPTURE(k, counts[k]);
    CHECK(std::abs(counts[k] - mean) < 3.0 * sigma);
  }
  CHECK(counts[0] + counts[1] + counts[2] == kDraws);
}

TEST_CASE("16-qubit chimera instance carries one coupler per edge") {
  const auto inst = random_instance(16, 2, 1, 7);
  CHECK(inst.n == 16);
  CHECK(inst.h.size() == 16);
  CHECK(inst.couplings.size() == 36);  // 32 intra-cell + 4 inter-cell
}

TEST_CASE("brute force ground state on hand-checked cases") {
  ProblemInstance one{1, {1.0 / 3.0}, {}, "", {}};
  auto g1 = brute_force_ground(one);
  CHECK(g1.energy == Catch::Approx(-1.0 / 3.0));
  REQUIRE(g1.configs.size() == 1);
  CHECK(g1.configs[0] == 1);  // sigma = -1 is bit 1

  ProblemInstance ferro{2, {0.0, 0.0}, {{0, 1, -1.0}}, "", {}};
  auto g2 = brute_force_ground(ferro);
  CHECK(g2.energy == Catch::Approx(-1.0));
  CHECK(g2.configs == std::vector<std::uint64_t>{0, 3});

  ProblemInstance big{25, std::vector<double>(25, 0.1), {}, "", {}};
  CHECK_THROWS_AS(brute_force_ground(big), unsupported_size_error);
}

TEST_CASE("brute force matches the independent enumeration on 16 qubits") {
  const auto inst = random_instance(16, 2, 1, 0xfeed);
  const auto ground = brute_force_ground(inst);
  const auto [best, argmins] = enumerate_minimum(inst);
  CHECK(ground.energy == Catch::Approx(best).margin(1e-12));
  CHECK(ground.configs == argmins);
}

TEST_CASE("classical energy invariances") {
  const auto inst = random_instance(8, 1, 1, 11);
  Xoshiro256ss rng(99);

  SECTION("relabeling qubits together with fields and couplers") {
    std::vector<int> perm(inst.n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = inst.n - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.below(i + 1)]);
    ProblemInstance relabeled;
    relabeled.n = inst.n;
    relabeled.h.resize(inst.n);
    for (int i = 0; i < inst.n; ++i) relabeled.h[perm[i]] = inst.h[i];
    for (const auto& c : inst.couplings) {
      int i = perm[c.i], j = perm[c.j];
      if (i > j) std::swap(i, j);
      relabeled.couplings.push_back({i, j, c.value});
    }
    for (int trial = 0; trial < 50; ++trial) {
      const auto x = rng.below(1u << inst.n);
      const auto cfg = config_from_index(x, inst.n);
      SpinConfig mapped;
      mapped.spins.resize(inst.n);
      for (int i = 0; i < inst.n; ++i) mapped.spins[perm[i]] = cfg.spins[i];
      CHECK(classical_energy(inst, cfg) ==
            Catch::Approx(classical_energy(relabeled, mapped)).margin(1e-12));
    }
  }

  SECTION("Z2 symmetry at h = 0") {
    ProblemInstance sym = inst;
    std::fill(sym.h.begin(), sym.h.end(), 0.0);
    for (int trial = 0; trial < 100; ++trial) {
      const auto x = rng.below(1u << sym.n);
      auto cfg = config_from_index(x, sym.n);
      auto flipped = cfg;
      for (int& v : flipped.spins) v = -v;
      CHECK(classical_energy(sym, cfg) ==
            Catch::Approx(classical_energy(sym, flipped)).margin(1e-12));
    }
  }

  SECTION("ground energy is a lower bound over random configs") {
    const auto ground = brute_force_ground(inst);
    for (int trial = 0; trial < 200; ++trial) {
      const auto x = rng.below(1u << inst.n);
      CHECK(ground.energy <=
            classical_energy(inst, config_from_index(x, inst.n)) + 1e-12);
    }
  }
}

TEST_CASE("instance JSON round-trips bit-exactly") {
  const auto inst = random_instance(16, 2, 1, 123);
  const auto path = std::filesystem::temp_directory_path() / "qa_inst_rt.json";
  save_instance(inst, path.string());
  const auto back = load_instance(path.string());
  CHECK(back.n == inst.n);
  CHECK(back.h == inst.h);
  REQUIRE(back.couplings.size() == inst.couplings.size());
  for (std::size_t i = 0; i < back.couplings.size(); ++i) {
    CHECK(back.couplings[i].i == inst.couplings[i].i);
    CHECK(back.couplings[i].j == inst.couplings[i].j);
    CHECK(back.couplings[i].value == inst.couplings[i].value);  // bit-exact
  }
  CHECK(back.graph_label == inst.graph_label);
  CHECK(back.seed == inst.seed);
  CHECK(instance_hash(back) == instance_hash(inst));
  std::filesystem::remove(path);

  const auto other = random_instance(16, 2, 1, 124);
  CHECK(instance_hash(other) != instance_hash(inst));
}

TEST_CASE("instance JSON field names are pinned") {
  const auto inst = random_instance(8, 1, 1, 5);
  const auto j = instance_to_json(inst);
  CHECK(j.contains("n"));
  CHECK(j.contains("h"));
  CHECK(j.contains("couplings"));
  CHECK(j.contains("graph_label"));
  CHECK(j.contains("seed"));
  CHECK(j["couplings"][0].size() == 3);
}

TEST_CASE("instance validation rejects malformed inputs") {
  ProblemInstance bad{2, {0.0, 0.0}, {{1, 0, 1.0}}, "", {}};
  CHECK_THROWS_AS(bad.validate(), validation_error);  // i >= j
  ProblemInstance dup{2, {0.0, 0.0}, {{0, 1, 1.0}, {0, 1, 0.5}}, "", {}};
  CHECK_THROWS_AS(dup.validate(), validation_error);
  ProblemInstance oob{2, {0.0, 0.0}, {{0, 2, 1.0}}, "", {}};
  CHECK_THROWS_AS(oob.validate(), validation_error);
  ProblemInstance nan_h{1, {std::nan("")}, {}, "", {}};
  CHECK_THROWS_AS(nan_h.validate(), validation_error);
}

TEST_CASE("edge list files parse") {
  const auto path = std::filesystem::temp_directory_path() / "qa_edges.txt";
  {
    std::ofstream out(path);
    out << "# ring of 4\n0 1\n1 2\n2 3\n0 3  # wrap\n\n";
  }
  const auto edges = load_edge_list(path.string());
  REQUIRE(edges.size() == 4);
  CHECK(edges[3] == std::pair<int, int>(0, 3));
  std::filesystem::remove(path);
}
