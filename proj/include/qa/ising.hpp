#pragma once

// Ising problem instances on arbitrary graphs: generation, classical energy,
// exhaustive ground-state search, JSON persistence.
//
// Spin/bit convention, used by every module: spin sigma_i = +1 corresponds to
// bit 0 of the computational-basis index at position i, so basis index
// x = 0 is the all-up configuration and sigma_i(x) = 1 - 2*((x >> i) & 1).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qa/errors.hpp"
#include "qa/rng.hpp"

namespace qa {

struct Coupling {
  int i = 0;
  int j = 0;
  double value = 0.0;
};

struct ProblemInstance {
  int n = 0;
  std::vector<double> h;
  std::vector<Coupling> couplings;
  std::string graph_label;
  std::optional<std::uint64_t> seed;

  void validate() const {
    if (n <= 0) throw validation_error("instance: n must be positive");
    if (static_cast<int>(h.size()) != n)
      throw validation_error("instance: h length does not match n");
    for (double v : h)
      if (!std::isfinite(v)) throw validation_error("instance: non-finite field");
    std::map<std::pair<int, int>, int> seen;
    for (const auto& c : couplings) {
      if (c.i < 0 || c.j < 0 || c.i >= n || c.j >= n)
        throw validation_error("instance: coupler index out of range");
      if (c.i >= c.j)
        throw validation_error("instance: couplers must have i < j");
      if (!std::isfinite(c.value))
        throw validation_error("instance: non-finite coupler");
      if (++seen[{c.i, c.j}] > 1)
        throw validation_error("instance: duplicate coupler (" +
                               std::to_string(c.i) + "," + std::to_string(c.j) + ")");
    }
  }
};

struct SpinConfig {
  std::vector<int> spins;  // each +1 or -1
};

inline SpinConfig config_from_index(std::uint64_t index, int n) {
  SpinConfig c;
  c.spins.resize(n);
  for (int i = 0; i < n; ++i) c.spins[i] = ((index >> i) & 1u) ? -1 : 1;
  return c;
}

inline std::uint64_t index_from_config(const SpinConfig& c) {
  std::uint64_t x = 0;
  for (std::size_t i = 0; i < c.spins.size(); ++i)
    if (c.spins[i] < 0) x |= (std::uint64_t{1} << i);
  return x;
}

// E(sigma) = sum_i h_i sigma_i + sum_{i<j} J_ij sigma_i sigma_j, dimensionless.
inline double classical_energy(const ProblemInstance& inst, const SpinConfig& config) {
  if (static_cast<int>(config.spins.size()) != inst.n)
    throw validation_error("classical_energy: config length does not match instance");
  double e = 0.0;
  for (int i = 0; i < inst.n; ++i) e += inst.h[i] * config.spins[i];
  for (const auto& c : inst.couplings)
    e += c.value * config.spins[c.i] * config.spins[c.j];
  return e;
}

struct Neighbor {
  int j = 0;
  double value = 0.0;
};

inline std::vector<std::vector<Neighbor>> adjacency(const ProblemInstance& inst) {
  std::vector<std::vector<Neighbor>> adj(inst.n);
  for (const auto& c : inst.couplings) {
    adj[c.i].push_back({c.j, c.value});
    adj[c.j].push_back({c.i, c.value});
  }
  return adj;
}

// Chimera lattice of rows x cols unit cells. Each cell is a complete
// bipartite K_{t,t} (t = cell_size) on qubits [base, base + 2t); the first
// shore couples to the vertically adjacent cell, the second shore
// horizontally. Qubit count is 2t * rows * cols.
inline std::vector<std::pair<int, int>> chimera_edges(int rows, int cols,
                                                      int cell_size = 4) {
  if (rows < 1 || cols < 1 || cell_size < 1)
    throw validation_error("chimera_edges: rows, cols, cell_size must be >= 1");
  const int t = cell_size;
  auto base = [&](int r, int c) { return 2 * t * (r * cols + c); };
  std::vector<std::pair<int, int>> edges;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const int b = base(r, c);
      for (int a = 0; a < t; ++a)
        for (int d = 0; d < t; ++d) edges.emplace_back(b + a, b + t + d);
      if (r + 1 < rows)
        for (int a = 0; a < t; ++a) edges.emplace_back(b + a, base(r + 1, c) + a);
      if (c + 1 < cols)
        for (int a = 0; a < t; ++a)
          edges.emplace_back(b + t + a, base(r, c + 1) + t + a);
    }
  return edges;
}

// Random instance with h_i uniform on {+1/3, -1/3} and J_ij uniform on
// {+1/3, -1/3, -1}. Draw order (all fields, then edges in the given order)
// and the generator algorithm are fixed, so (n, edges, seed) reproduces the
// instance everywhere.
inline ProblemInstance generate_instance(int n,
                                         const std::vector<std::pair<int, int>>& edges,
                                         std::uint64_t seed,
                                         std::string graph_label = "") {
  if (n <= 0) throw validation_error("generate_instance: n must be positive");
  ProblemInstance inst;
  inst.n = n;
  inst.graph_label = std::move(graph_label);
  inst.seed = seed;
  Xoshiro256ss rng(derive_seed(seed, {0x1511}));
  inst.h.resize(n);
  for (int i = 0; i < n; ++i) inst.h[i] = rng.sign() / 3.0;
  static constexpr double kCouplerValues[3] = {1.0 / 3.0, -1.0 / 3.0, -1.0};
  inst.couplings.reserve(edges.size());
  for (auto [i, j] : edges) {
    if (i == j || i < 0 || j < 0 || i >= n || j >= n)
      throw validation_error("generate_instance: invalid edge (" +
                             std::to_string(i) + "," + std::to_string(j) + ")");
    if (i > j) std::swap(i, j);
    inst.couplings.push_back({i, j, kCouplerValues[rng.below(3)]});
  }
  inst.validate();
  return inst;
}

struct GroundSolution {
  double energy = 0.0;
  std::vector<std::uint64_t> configs;  // basis indices of all minimizers
};

inline constexpr int kBruteForceMaxQubits = 24;
inline constexpr double kDegeneracyTol = 1e-9;

// Exact global minimum and all minimizers, by a Gray-code sweep over all 2^n
// configurations with incremental energy updates. Candidate energies are
// re-evaluated directly before the final degeneracy cut so accumulated
// round-off cannot move states across the kDegeneracyTol boundary.
inline GroundSolution brute_force_ground(const ProblemInstance& inst) {
  inst.validate();
  if (inst.n > kBruteForceMaxQubits)
    throw unsupported_size_error("brute_force_ground: n > " +
                                 std::to_string(kBruteForceMaxQubits));
  const auto adj = adjacency(inst);
  std::vector<int> spins(inst.n, 1);
  double energy = 0.0;
  for (int i = 0; i < inst.n; ++i) energy += inst.h[i];
  for (const auto& c : inst.couplings) energy += c.value;

  double best = energy;
  std::vector<std::uint64_t> candidates{0};
  const std::uint64_t total = std::uint64_t{1} << inst.n;
  for (std::uint64_t k = 1; k < total; ++k) {
    const int b = std::countr_zero(k);  // bit flipped between gray(k-1), gray(k)
    double local = inst.h[b];
    for (const auto& nb : adj[b]) local += nb.value * spins[nb.j];
    energy -= 2.0 * spins[b] * local;
    spins[b] = -spins[b];
    if (energy < best - kDegeneracyTol) {
      best = energy;
      candidates.clear();
      candidates.push_back(k ^ (k >> 1));
    } else if (energy <= best + kDegeneracyTol) {
      candidates.push_back(k ^ (k >> 1));
    }
  }

  GroundSolution out;
  out.energy = best;
  std::vector<double> exact(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    exact[i] = classical_energy(inst, config_from_index(candidates[i], inst.n));
    out.energy = std::min(out.energy, exact[i]);
  }
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (exact[i] <= out.energy + kDegeneracyTol) out.configs.push_back(candidates[i]);
  std::sort(out.configs.begin(), out.configs.end());
  return out;
}

// --- persistence ------------------------------------------------------------

inline nlohmann::ordered_json instance_to_json(const ProblemInstance& inst) {
  nlohmann::ordered_json j;
  j["n"] = inst.n;
  j["h"] = inst.h;
  auto couplings = nlohmann::ordered_json::array();
  for (const auto& c : inst.couplings)
    couplings.push_back({c.i, c.j, c.value});
  j["couplings"] = std::move(couplings);
  j["graph_label"] = inst.graph_label;
  if (inst.seed)
    j["seed"] = *inst.seed;
  else
    j["seed"] = nullptr;
  return j;
}

inline ProblemInstance instance_from_json(const nlohmann::json& j) {
  ProblemInstance inst;
  try {
    inst.n = j.at("n").get<int>();
    inst.h = j.at("h").get<std::vector<double>>();
    for (const auto& row : j.at("couplings")) {
      if (!row.is_array() || row.size() != 3)
        throw validation_error("instance JSON: each coupling must be [i, j, J]");
      inst.couplings.push_back(
          {row[0].get<int>(), row[1].get<int>(), row[2].get<double>()});
    }
    inst.graph_label = j.at("graph_label").get<std::string>();
    if (!j.at("seed").is_null()) inst.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("instance JSON: ") + e.what());
  }
  inst.validate();
  return inst;
}

inline void save_instance(const ProblemInstance& inst, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot open for writing: " + path);
  out << instance_to_json(inst).dump(2) << '\n';
}

inline ProblemInstance load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open instance file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("instance JSON parse: ") + e.what());
  }
  return instance_from_json(j);
}

// FNV-1a over the canonical JSON dump; stable content id for result records.
inline std::string instance_hash(const ProblemInstance& inst) {
  const std::string dump = instance_to_json(inst).dump();
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char ch : dump) {
    hash ^= ch;
    hash *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

// Plain-text edge list, one "i j" pair per line; '#' starts a comment.
inline std::vector<std::pair<int, int>> load_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open edge list: " + path);
  std::vector<std::pair<int, int>> edges;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    int i, j;
    if (row >> i) {
      if (!(row >> j))
        throw validation_error("edge list line " + std::to_string(lineno) +
                               ": expected two indices");
      edges.emplace_back(i, j);
    }
  }
  return edges;
}

}  // namespace qa
