#pragma once

// Classical baselines: simulated annealing with single-spin Metropolis
// updates in fixed scan order, and simulated quantum annealing as
// path-integral Monte Carlo over P Trotter slices with the standard
// inter-slice coupling J_perp = -(1/2) ln tanh(Gamma / (P T_eff)).
//
// All randomness is counter-split from the master seed per repetition, so
// sample sets are identical for a given seed regardless of thread layout.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "qa/errors.hpp"
#include "qa/ising.hpp"
#include "qa/rng.hpp"
#include "qa/schedule.hpp"

namespace qa {

struct SuccessEstimate {
  double p0 = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  int successes = 0;
  int trials = 0;
};

// Binomial point estimate with the Wilson 95% score interval.
inline SuccessEstimate estimate_success(int successes, int trials) {
  if (trials < 1) throw validation_error("estimate_success: no samples");
  if (successes < 0 || successes > trials)
    throw validation_error("estimate_success: successes out of range");
  constexpr double z = 1.959963984540054;
  const double n = trials;
  const double p_hat = successes / n;
  const double z2n = z * z / n;
  const double denom = 1.0 + z2n;
  const double center = (p_hat + 0.5 * z2n) / denom;
  const double half =
      z * std::sqrt(p_hat * (1.0 - p_hat) / n + z2n / (4.0 * n)) / denom;
  SuccessEstimate est;
  est.p0 = p_hat;
  est.lower = std::max(0.0, center - half);
  est.upper = std::min(1.0, center + half);
  est.successes = successes;
  est.trials = trials;
  return est;
}

enum class BetaShape { Linear, Geometric };

struct SAParams {
  int sweeps = 1000;
  double beta_initial = 0.2;  // inverse dimensionless energy
  double beta_final = 5.0;
  BetaShape shape = BetaShape::Geometric;
  int repetitions = 100;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    if (sweeps < 1) throw validation_error("sa: sweeps must be >= 1");
    if (!(beta_initial > 0.0) || beta_final < beta_initial)
      throw validation_error("sa: need beta_final >= beta_initial > 0");
    if (repetitions < 1) throw validation_error("sa: repetitions must be >= 1");
    if (threads < 1) throw validation_error("sa: threads must be >= 1");
  }
};

struct SampleRecord {
  double energy = 0.0;
  std::uint64_t config = 0;
  bool success = false;
};

struct SampleSet {
  std::vector<SampleRecord> records;  // one per repetition, in repetition order
  double reference_energy = 0.0;      // energy defining success
  bool reference_exact = false;       // true when brute-force verified
  std::string readout = "final";      // sqa: "fixed-slice" or "best-slice"
  SuccessEstimate p0;
};

namespace detail {

inline double beta_at(const SAParams& p, int sweep) {
  if (p.sweeps == 1) return p.beta_initial;
  const double t = static_cast<double>(sweep) / (p.sweeps - 1);
  if (p.shape == BetaShape::Linear)
    return p.beta_initial + (p.beta_final - p.beta_initial) * t;
  return p.beta_initial * std::pow(p.beta_final / p.beta_initial, t);
}

// One full-lattice Metropolis pass in fixed site order 0..n-1.
inline void metropolis_sweep(const std::vector<double>& h,
                             const std::vector<std::vector<Neighbor>>& adj,
                             double beta, std::vector<int>& spins,
                             Xoshiro256ss& rng) {
  const int n = static_cast<int>(spins.size());
  for (int i = 0; i < n; ++i) {
    double local = h[i];
    for (const auto& nb : adj[i]) local += nb.value * spins[nb.j];
    const double delta = -2.0 * spins[i] * local;
    if (delta <= 0.0 || rng.uniform() < std::exp(-beta * delta))
      spins[i] = -spins[i];
  }
}

inline std::uint64_t spins_to_index(const std::vector<int>& spins) {
  std::uint64_t x = 0;
  for (std::size_t i = 0; i < spins.size(); ++i)
    if (spins[i] < 0) x |= std::uint64_t{1} << i;
  return x;
}

template <class Task>
void run_parallel(int threads, int jobs, Task&& task) {
  if (threads <= 1) {
    for (int j = 0; j < jobs; ++j) task(j);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int j = next.fetch_add(1); j < jobs; j = next.fetch_add(1)) task(j);
    });
  for (auto& th : pool) th.join();
}

inline void finish_sample_set(SampleSet& set,
                              const std::optional<GroundSolution>& ground) {
  if (ground) {
    set.reference_energy = ground->energy;
    set.reference_exact = true;
  } else {
    set.reference_energy = std::numeric_limits<double>::infinity();
    for (const auto& r : set.records)
      set.reference_energy = std::min(set.reference_energy, r.energy);
    set.reference_exact = false;
  }
  int successes = 0;
  for (auto& r : set.records) {
    r.success = r.energy <= set.reference_energy + kDegeneracyTol;
    successes += r.success;
  }
  set.p0 = estimate_success(successes, static_cast<int>(set.records.size()));
}

}  // namespace detail

// Independent anneals; each runs `sweeps` full-lattice passes with beta
// interpolated per sweep. Success means reaching the brute-force ground
// energy when `ground` is given (exact for n <= 24), otherwise the best
// energy seen across this sample set.
inline SampleSet run_sa(const ProblemInstance& inst, const SAParams& params,
                        std::optional<GroundSolution> ground = {}) {
  inst.validate();
  params.validate();
  const auto adj = adjacency(inst);
  SampleSet set;
  set.records.resize(params.repetitions);
  detail::run_parallel(params.threads, params.repetitions, [&](int rep) {
    Xoshiro256ss rng(derive_seed(params.seed, {0x5a, static_cast<std::uint64_t>(rep)}));
    std::vector<int> spins(inst.n);
    for (int i = 0; i < inst.n; ++i) spins[i] = rng.sign();
    for (int sweep = 0; sweep < params.sweeps; ++sweep)
      detail::metropolis_sweep(inst.h, adj, detail::beta_at(params, sweep), spins,
                               rng);
    SampleRecord rec;
    rec.config = detail::spins_to_index(spins);
    rec.energy = classical_energy(inst, config_from_index(rec.config, inst.n));
    set.records[rep] = rec;
  });
  detail::finish_sample_set(set, ground);
  return set;
}

// Fixed-temperature Metropolis chain that records the visited configuration
// every `stride` sweeps after `burn_in`; equilibrium-statistics helper.
inline std::vector<std::uint64_t> metropolis_chain(const ProblemInstance& inst,
                                                   double beta, int burn_in,
                                                   int samples, int stride,
                                                   std::uint64_t seed) {
  inst.validate();
  if (samples < 1 || stride < 1 || burn_in < 0)
    throw validation_error("metropolis_chain: bad sampling plan");
  const auto adj = adjacency(inst);
  Xoshiro256ss rng(derive_seed(seed, {0xc4a1}));
  std::vector<int> spins(inst.n);
  for (int i = 0; i < inst.n; ++i) spins[i] = rng.sign();
  for (int sweep = 0; sweep < burn_in; ++sweep)
    detail::metropolis_sweep(inst.h, adj, beta, spins, rng);
  std::vector<std::uint64_t> out;
  out.reserve(samples);
  for (int rec = 0; rec < samples; ++rec) {
    for (int sweep = 0; sweep < stride; ++sweep)
      detail::metropolis_sweep(inst.h, adj, beta, spins, rng);
    out.push_back(detail::spins_to_index(spins));
  }
  return out;
}

enum class GammaShape { Linear, FromSchedule };

struct SQAParams {
  int sweeps = 1000;
  int trotter_slices = 32;  // P
  double gamma_initial = 3.0;
  double gamma_final = 1e-3;
  GammaShape shape = GammaShape::Linear;
  double effective_temperature = 0.25;  // dimensionless T_eff
  int repetitions = 100;
  std::uint64_t seed = 0;
  int threads = 1;
  bool readout_best_slice = false;
  bool worldline_moves = true;
  std::optional<double> fixed_gamma;  // equilibrium studies: constant field

  void validate() const {
    if (sweeps < 1) throw validation_error("sqa: sweeps must be >= 1");
    if (trotter_slices < 2) throw validation_error("sqa: need P >= 2 slices");
    if (!(effective_temperature > 0.0))
      throw validation_error("sqa: T_eff must be > 0");
    if (gamma_initial < 0.0 || gamma_final < 0.0)
      throw validation_error("sqa: Gamma must be >= 0");
    if (repetitions < 1) throw validation_error("sqa: repetitions must be >= 1");
    if (threads < 1) throw validation_error("sqa: threads must be >= 1");
  }
};

namespace detail {

// Inter-slice ferromagnetic coupling; Gamma = 0 decouples the slices into
// independent replicas (the zero-transverse-field limit).
inline double j_perp(double gamma, int slices, double t_eff) {
  if (gamma == 0.0) return 0.0;
  const double x = gamma / (slices * t_eff);
  const double t = std::tanh(x);
  if (t >= 1.0)
    throw validation_error(
        "sqa: Gamma/(P T_eff) saturates tanh in floating point; increase P or "
        "T_eff, or lower Gamma");
  return -0.5 * std::log(t);
}

inline double sqa_gamma_at(const SQAParams& p, int sweep, const Schedule* sched) {
  if (p.fixed_gamma) return *p.fixed_gamma;
  if (p.sweeps == 1) return p.gamma_initial;
  const double t = static_cast<double>(sweep) / (p.sweeps - 1);
  if (p.shape == GammaShape::FromSchedule && sched != nullptr) {
    const double a0 = sched->evaluate(0.0).A;
    return p.gamma_initial * sched->evaluate(t).A / a0;
  }
  return p.gamma_initial + (p.gamma_final - p.gamma_initial) * t;
}

}  // namespace detail

// Path-integral Monte Carlo with P Trotter slices: per sweep one Metropolis
// pass over all n*P sites in fixed (slice, site) order plus optional
// whole-worldline flips. Readout is slice 0 unless best-slice is requested;
// the choice is recorded in the sample set.
inline SampleSet run_sqa(const ProblemInstance& inst, const SQAParams& params,
                         std::optional<GroundSolution> ground = {},
                         const Schedule* gamma_schedule = nullptr) {
  inst.validate();
  params.validate();
  const auto adj = adjacency(inst);
  const int n = inst.n;
  const int slices = params.trotter_slices;
  const double beta = 1.0 / params.effective_temperature;
  const double beta_slice = beta / slices;

  SampleSet set;
  set.records.resize(params.repetitions);
  set.readout = params.readout_best_slice ? "best-slice" : "fixed-slice";

  detail::run_parallel(params.threads, params.repetitions, [&](int rep) {
    Xoshiro256ss rng(derive_seed(params.seed, {0x50a, static_cast<std::uint64_t>(rep)}));
    std::vector<std::vector<int>> spins(slices, std::vector<int>(n));
    for (auto& slice : spins)
      for (int i = 0; i < n; ++i) slice[i] = rng.sign();

    for (int sweep = 0; sweep < params.sweeps; ++sweep) {
      const double gamma = detail::sqa_gamma_at(params, sweep, gamma_schedule);
      const double jp = detail::j_perp(gamma, slices, params.effective_temperature);
      for (int k = 0; k < slices; ++k) {
        auto& cur = spins[k];
        const auto& up = spins[(k + 1) % slices];
        const auto& down = spins[(k + slices - 1) % slices];
        for (int i = 0; i < n; ++i) {
          double local = inst.h[i];
          for (const auto& nb : adj[i]) local += nb.value * cur[nb.j];
          double delta = -2.0 * beta_slice * cur[i] * local;
          if (jp != 0.0) delta += 2.0 * jp * cur[i] * (up[i] + down[i]);
          if (delta <= 0.0 || rng.uniform() < std::exp(-delta)) cur[i] = -cur[i];
        }
      }
      if (params.worldline_moves) {
        // flipping a full worldline leaves the inter-slice action unchanged
        for (int i = 0; i < n; ++i) {
          double delta = 0.0;
          for (int k = 0; k < slices; ++k) {
            double local = inst.h[i];
            for (const auto& nb : adj[i]) local += nb.value * spins[k][nb.j];
            delta += -2.0 * beta_slice * spins[k][i] * local;
          }
          if (delta <= 0.0 || rng.uniform() < std::exp(-delta))
            for (int k = 0; k < slices; ++k) spins[k][i] = -spins[k][i];
        }
      }
    }

    int readout_slice = 0;
    if (params.readout_best_slice) {
      double best = std::numeric_limits<double>::infinity();
      for (int k = 0; k < slices; ++k) {
        const double e = classical_energy(
            inst, config_from_index(detail::spins_to_index(spins[k]), n));
        if (e < best) {
          best = e;
          readout_slice = k;
        }
      }
    }
    SampleRecord rec;
    rec.config = detail::spins_to_index(spins[readout_slice]);
    rec.energy = classical_energy(inst, config_from_index(rec.config, n));
    set.records[rep] = rec;
  });
  detail::finish_sample_set(set, ground);
  return set;
}

// Sample CSV: one row per repetition. The bitstring has character i equal to
// the basis bit of qubit i ('0' for spin +1).
inline void save_samples_csv(const SampleSet& set, int n, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot open for writing: " + path);
  out << "repetition,energy,config,success\n";
  char buf[96];
  for (std::size_t r = 0; r < set.records.size(); ++r) {
    const auto& rec = set.records[r];
    std::string bits(n, '0');
    for (int i = 0; i < n; ++i)
      if ((rec.config >> i) & 1u) bits[i] = '1';
    std::snprintf(buf, sizeof buf, "%zu,%.12g,", r, rec.energy);
    out << buf << bits << ',' << (rec.success ? 1 : 0) << '\n';
  }
}

}  // namespace qa
