#pragma once

// Boltzmann distributions over a truncated level set and distances between
// level distributions. Energies are frequencies in GHz (h = 1 convention);
// temperature enters only through the thermal frequency f_T = k_B T / h.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "qa/errors.hpp"

namespace qa {

// k_B / h in GHz per kelvin (CODATA 2018 exact constants).
inline constexpr double kBoltzmannGHzPerKelvin = 20.836619123254297;

struct TempParams {
  double T_mK = 0.0;
  double f_T_GHz = 0.0;  // k_B T / h

  static TempParams from_mK(double t_mk) {
    if (!(t_mk > 0.0))
      throw validation_error("temperature must be positive (mK); T -> 0 has no "
                             "finite Boltzmann factor");
    return {t_mk, t_mk * 1e-3 * kBoltzmannGHzPerKelvin};
  }
};

struct LevelDistribution {
  std::vector<double> probs;      // renormalized over the retained K levels
  double truncation_bound = 0.0;  // bound on the omitted tail mass
  double s = -1.0;                // optional context: schedule position
  double T_mK = 0.0;              // optional context
};

// probs_n proportional to exp(-(E_n - E_0)/f_T), normalized over the K given
// levels. The shift by E_0 makes the exponentials safe for any energy scale;
// the result is invariant under adding a constant to all energies.
inline LevelDistribution boltzmann(const std::vector<double>& energies_ghz,
                                   const TempParams& temp) {
  if (energies_ghz.empty()) throw validation_error("boltzmann: no energy levels");
  if (!(temp.f_T_GHz > 0.0)) throw validation_error("boltzmann: T must be > 0");
  for (double e : energies_ghz)
    if (!std::isfinite(e)) throw validation_error("boltzmann: non-finite energy");
  const double e0 = *std::min_element(energies_ghz.begin(), energies_ghz.end());
  const double emax = *std::max_element(energies_ghz.begin(), energies_ghz.end());
  LevelDistribution dist;
  dist.T_mK = temp.T_mK;
  dist.probs.resize(energies_ghz.size());
  double z = 0.0;
  for (std::size_t i = 0; i < energies_ghz.size(); ++i) {
    dist.probs[i] = std::exp(-(energies_ghz[i] - e0) / temp.f_T_GHz);
    z += dist.probs[i];
  }
  for (double& p : dist.probs) p /= z;
  dist.truncation_bound = static_cast<double>(energies_ghz.size()) *
                          std::exp(-(emax - e0) / temp.f_T_GHz);
  return dist;
}

enum class DistanceMetric { TVD, KL };

inline double distance(const LevelDistribution& p, const LevelDistribution& q,
                       DistanceMetric metric) {
  if (p.probs.size() != q.probs.size())
    throw validation_error("distance: distributions have different K");
  if (metric == DistanceMetric::TVD) {
    double sum = 0.0;
    for (std::size_t i = 0; i < p.probs.size(); ++i)
      sum += std::abs(p.probs[i] - q.probs[i]);
    return 0.5 * sum;
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    if (p.probs[i] == 0.0) continue;  // 0 ln 0 = 0
    if (q.probs[i] <= 0.0)
      throw validation_error("distance: KL undefined, q = 0 where p > 0");
    kl += p.probs[i] * std::log(p.probs[i] / q.probs[i]);
  }
  return kl;
}

inline double tvd(const std::vector<double>& p, const std::vector<double>& q) {
  LevelDistribution a, b;
  a.probs = p;
  b.probs = q;
  return distance(a, b, DistanceMetric::TVD);
}

// CSV: metadata header rows, then one "level_index,prob" row per level.
inline void save_distribution_csv(const LevelDistribution& dist,
                                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot open for writing: " + path);
  char buf[160];
  std::snprintf(buf, sizeof buf, "# s,%.17g\n# T_mK,%.17g\n# truncation_bound,%.17g\n",
                dist.s, dist.T_mK, dist.truncation_bound);
  out << buf << "level_index,prob\n";
  for (std::size_t i = 0; i < dist.probs.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, dist.probs[i]);
    out << buf;
  }
}

}  // namespace qa
