#pragma once

// Freeze-out analysis: where a trajectory stops tracking equilibrium, where
// it stops changing at all, the single point s* whose equilibrium best
// explains the final distribution, and the gamma_0 e^(-alpha s) relaxation
// fit behind the s* and dP0/dln(ta) predictions.

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qa/dynamics.hpp"
#include "qa/equilibrium.hpp"
#include "qa/errors.hpp"
#include "qa/spectrum.hpp"

namespace qa {

struct FreezeoutReport {
  double s_eq_end = 0.0;        // end of the quasistatic region
  double s_frozen_start = 1.0;  // start of the frozen region
  double s_star = 0.0;          // argmin_s TVD(final, equilibrium(s))
  double tvd_at_star = 0.0;
  bool distributed_freezeout = false;  // no quasistatic prefix detected
  double gamma0_ns = 0.0;              // fitted relaxation prefactor (1/ns)
  double alpha = 0.0;                  // fitted decay exponent
  double fit_r2 = 0.0;
  double fit_window_lo = 0.0;
  double fit_window_hi = 0.0;
  double kappa = 0.0;           // d P0^B / ds at s_star
  double predicted_s_star = 0.0;
  bool no_freezeout_predicted = false;
};

// Quasistatic region: maximal prefix with TVD(P(s), P_eq(s)) < tol_eq.
// Frozen region: maximal suffix with TVD(P(s), P(1)) < tol_frozen.
// s*: the grid point whose equilibrium distribution is closest to the final
// one. When the trajectory never equilibrates the report carries the
// distributed-freezeout flag instead of failing.
inline FreezeoutReport detect_regions(const Trajectory& traj,
                                      const std::vector<LevelDistribution>& eq_track,
                                      double tol_eq = 0.02,
                                      double tol_frozen = 0.01) {
  if (traj.s_grid.size() != eq_track.size())
    throw validation_error("detect_regions: trajectory and equilibrium track "
                           "must share the s grid");
  if (traj.s_grid.size() < 3)
    throw validation_error("detect_regions: grid too small");
  const std::size_t m = traj.s_grid.size();
  const int k = static_cast<int>(traj.populations.front().size());
  auto tvd_at = [&](std::size_t g, const std::vector<double>& ref) {
    double acc = 0.0;
    for (int i = 0; i < k; ++i) acc += std::abs(traj.populations[g][i] - ref[i]);
    return 0.5 * acc;
  };

  FreezeoutReport rep;

  std::size_t eq_end = 0;
  while (eq_end < m && tvd_at(eq_end, eq_track[eq_end].probs) < tol_eq) ++eq_end;
  if (eq_end == 0) {
    rep.distributed_freezeout = true;
    rep.s_eq_end = traj.s_grid.front();
  } else {
    rep.s_eq_end = traj.s_grid[eq_end - 1];
  }

  const std::vector<double> final_probs(traj.populations.back().data(),
                                        traj.populations.back().data() + k);
  std::size_t frozen_start = m - 1;
  while (frozen_start > 0 && tvd_at(frozen_start - 1, final_probs) < tol_frozen)
    --frozen_start;
  rep.s_frozen_start = traj.s_grid[frozen_start];

  double best = std::numeric_limits<double>::infinity();
  std::size_t best_g = m - 1;
  for (std::size_t g = 0; g < m; ++g) {
    const double d = tvd_at(m - 1, eq_track[g].probs);
    if (d < best) {
      best = d;
      best_g = g;
    }
  }
  rep.s_star = traj.s_grid[best_g];
  rep.tvd_at_star = best;
  return rep;
}

// Relaxation rate gamma(s): the spectral gap of the Pauli generator W(s),
// i.e. the smallest nonzero decay rate. Detailed balance makes W similar to
// a symmetric matrix through the stationary distribution, so the spectrum is
// real and the similarity transform keeps the eigensolve well conditioned.
inline double relaxation_gap(const Eigen::MatrixXd& w,
                             const std::vector<double>& energies_ghz,
                             const TempParams& temp) {
  const int k = static_cast<int>(w.rows());
  const auto eq = boltzmann(energies_ghz, temp);
  Eigen::VectorXd sqrt_pi(k);
  for (int i = 0; i < k; ++i) sqrt_pi[i] = std::sqrt(std::max(eq.probs[i], 1e-300));
  Eigen::MatrixXd sym(k, k);
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < k; ++c) sym(r, c) = w(r, c) * sqrt_pi[c] / sqrt_pi[r];
  sym = 0.5 * (sym + sym.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  // eigenvalues ascending, all <= 0 with one ~0 (stationary); the gap is the
  // largest strictly negative one
  const double scale = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  for (int i = k - 1; i >= 0; --i) {
    const double lam = es.eigenvalues()[i];
    if (lam < -1e-12 * scale) return -lam;
  }
  return 0.0;
}

struct RelaxationFit {
  double gamma0_ns = 0.0;
  double alpha = 0.0;
  double r2 = 0.0;
};

// Least-squares fit of ln gamma(s) = ln gamma0 - alpha s over the window.
inline RelaxationFit fit_relaxation(const SpectrumTrack& track,
                                    const BathParams& bath, double window_lo,
                                    double window_hi) {
  if (!(window_lo >= 0.0 && window_hi <= 1.0 && window_lo < window_hi))
    throw validation_error("fit_relaxation: bad window");
  std::vector<double> xs, ys;
  for (std::size_t g = 0; g < track.grid.size(); ++g) {
    const double s = track.grid[g];
    if (s < window_lo || s > window_hi) continue;
    const auto w = transition_rates(track.slices[g], bath);
    const double gap = relaxation_gap(w, track.slices[g].energies, bath.temp);
    if (!(gap > 0.0))
      throw validation_error("fit_relaxation: non-positive relaxation rate at s = " +
                             std::to_string(s));
    xs.push_back(s);
    ys.push_back(std::log(gap));
  }
  if (xs.size() < 8)
    throw validation_error("fit_relaxation: window holds fewer than 8 grid points");
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
    syy += ys[i] * ys[i];
  }
  const double denom = n * sxx - sx * sx;
  const double slope = (n * sxy - sx * sy) / denom;
  const double intercept = (sy - slope * sx) / n;
  RelaxationFit fit;
  fit.alpha = -slope;
  fit.gamma0_ns = std::exp(intercept);
  double ss_res = 0.0, ss_tot = 0.0;
  const double ymean = sy / n;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double pred = intercept + slope * xs[i];
    ss_res += (ys[i] - pred) * (ys[i] - pred);
    ss_tot += (ys[i] - ymean) * (ys[i] - ymean);
  }
  fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

enum class FreezeoutMarker { InRange, BeforeStart, NoFreezeout };

struct SStarPrediction {
  double s_star = 0.0;
  FreezeoutMarker marker = FreezeoutMarker::InRange;
};

// s* such that gamma(s*) ~ 1/ta: ln(gamma0 ta) / alpha, clamped with markers
// when the prediction falls outside the anneal.
inline SStarPrediction predict_s_star(double gamma0_ns, double alpha, double ta_ns) {
  if (!(ta_ns > 0.0)) throw validation_error("predict_s_star: ta must be > 0");
  SStarPrediction out;
  if (alpha == 0.0) {
    out.marker = FreezeoutMarker::NoFreezeout;
    out.s_star = 1.0;
    return out;
  }
  const double raw = std::log(gamma0_ns * ta_ns) / alpha;
  out.s_star = std::clamp(raw, 0.0, 1.0);
  if (raw < 0.0)
    out.marker = FreezeoutMarker::BeforeStart;
  else if (raw > 1.0)
    out.marker = FreezeoutMarker::NoFreezeout;
  return out;
}

// Slope of P0 against ln(ta) in the quasistatic regime: kappa / alpha, with
// kappa the derivative of the equilibrium ground-state probability at s*.
inline double predict_p0_slope(double kappa, double alpha) {
  if (!(alpha > 0.0)) throw validation_error("predict_p0_slope: alpha must be > 0");
  return kappa / alpha;
}

// Centered finite difference of the equilibrium P0 (ground-degenerate mass)
// at s_star, step 1e-3, built from fresh spectrum slices.
inline double boltzmann_p0_slope(const ProblemInstance& inst, const Schedule& sched,
                                 const TempParams& temp, double s_star, int k,
                                 double step = 1e-3,
                                 const EigenOptions& eig = {}) {
  if (s_star - step < 0.0 || s_star + step > 1.0)
    throw validation_error("boltzmann_p0_slope: s* too close to the boundary");
  auto p0_eq = [&](double s) {
    auto op = build_hamiltonian(inst, sched, s);
    const auto slice = lowest_k_eigen(op, k, eig);
    const auto eq = boltzmann(slice.energies, temp);
    double p0 = 0.0;
    for (int i = 0; i < k; ++i)
      if (slice.energies[i] <= slice.energies[0] + 1e-6) p0 += eq.probs[i];
    return p0;
  };
  return (p0_eq(s_star + step) - p0_eq(s_star - step)) / (2.0 * step);
}

// Full report for one open-system run.
inline FreezeoutReport analyze_freezeout(const ProblemInstance& inst,
                                         const Schedule& sched,
                                         const SpectrumTrack& track,
                                         const Trajectory& traj,
                                         const BathParams& bath, double ta_ns,
                                         double tol_eq = 0.02,
                                         double tol_frozen = 0.01,
                                         std::optional<double> window_lo = {}) {
  const auto eq_track = boltzmann_track(track, bath.temp);
  FreezeoutReport rep = detect_regions(traj, eq_track, tol_eq, tol_frozen);
  const double lo = window_lo.value_or(0.4);
  const double hi = std::max(rep.s_frozen_start, lo + 0.1);
  const auto fit = fit_relaxation(track, bath, lo, std::min(hi, 1.0));
  rep.gamma0_ns = fit.gamma0_ns;
  rep.alpha = fit.alpha;
  rep.fit_r2 = fit.r2;
  rep.fit_window_lo = lo;
  rep.fit_window_hi = std::min(hi, 1.0);
  const auto pred = predict_s_star(fit.gamma0_ns, fit.alpha, ta_ns);
  rep.predicted_s_star = pred.s_star;
  rep.no_freezeout_predicted = pred.marker == FreezeoutMarker::NoFreezeout;
  if (rep.s_star - 1e-3 >= 0.0 && rep.s_star + 1e-3 <= 1.0)
    rep.kappa = boltzmann_p0_slope(inst, sched, bath.temp, rep.s_star,
                                   track.levels());
  return rep;
}

inline nlohmann::ordered_json freezeout_to_json(const FreezeoutReport& rep) {
  nlohmann::ordered_json j;
  j["s_eq_end"] = rep.s_eq_end;
  j["s_frozen_start"] = rep.s_frozen_start;
  j["s_star"] = rep.s_star;
  j["tvd_at_star"] = rep.tvd_at_star;
  j["distributed_freezeout"] = rep.distributed_freezeout;
  j["gamma0_ns"] = rep.gamma0_ns;
  j["alpha"] = rep.alpha;
  j["fit_r2"] = rep.fit_r2;
  j["fit_window"] = {rep.fit_window_lo, rep.fit_window_hi};
  j["kappa"] = rep.kappa;
  j["predicted_s_star"] = rep.predicted_s_star;
  j["no_freezeout_predicted"] = rep.no_freezeout_predicted;
  return j;
}

inline void save_freezeout_json(const FreezeoutReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot open for writing: " + path);
  out << freezeout_to_json(rep).dump(2) << '\n';
}

}  // namespace qa
