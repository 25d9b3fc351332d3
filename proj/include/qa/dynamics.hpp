#pragma once

// Closed (Schroedinger) and open (weak-coupling master equation) evolution
// through an annealing schedule, reported as level populations in the tracked
// instantaneous eigenbasis.
//
// Unit convention: energies are frequencies in GHz, time is in ns, and the
// angular factor 2*pi enters only inside the evolution operators, so
// i dpsi/dt = 2*pi H psi. A single qubit with H = -A sigma^x started in a
// basis state therefore completes one population cycle in 1/(2A) ns, which is
// what pins the convention in the tests.
//
// Open-system model: one independent Ohmic bath per qubit, coupled through
// sigma^z_i, all with the same spectrum. The rate function gamma obeys the
// detailed-balance identity gamma(-f) = exp(-f/f_T) gamma(f) exactly, so the
// Boltzmann state is stationary for the resulting generator at fixed s.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qa/equilibrium.hpp"
#include "qa/errors.hpp"
#include "qa/ising.hpp"
#include "qa/schedule.hpp"
#include "qa/spectrum.hpp"

namespace qa {

inline constexpr double kTwoPi = 6.283185307179586476925287;

struct BathParams {
  TempParams temp = TempParams::from_mK(40.0);
  double eta = 0.24;          // dimensionless system-bath coupling
  double cutoff_GHz = 1000.0; // Ohmic high-frequency cutoff

  void validate() const {
    if (eta < 0.0) throw validation_error("bath: eta must be >= 0");
    if (!(cutoff_GHz > 0.0)) throw validation_error("bath: cutoff must be > 0");
    if (!(temp.f_T_GHz > 0.0)) throw validation_error("bath: temperature unset");
  }
};

// Rate (1/ns) for a transition that releases energy f (GHz) into the bath;
// f < 0 is absorption. Continuous at f = 0 with gamma(0) = 2 pi eta f_T.
inline double spectral_rate(double f_ghz, const BathParams& bath) {
  bath.validate();
  const double f_t = bath.temp.f_T_GHz;
  if (f_ghz == 0.0) return kTwoPi * bath.eta * f_t;
  const double occupancy = 1.0 - std::exp(-f_ghz / f_t);
  return kTwoPi * bath.eta * f_ghz * std::exp(-std::abs(f_ghz) / bath.cutoff_GHz) /
         occupancy;
}

// Matrix elements of sigma^z_i in the slice eigenbasis, one K x K matrix per
// qubit: M^i = U^T D_i U with D_i the diagonal of spin signs.
inline std::vector<Eigen::MatrixXd> sigma_z_elements(const SpectrumSlice& slice) {
  if (slice.vectors.size() == 0)
    throw validation_error("sigma_z_elements: slice carries no eigenvectors");
  const auto dim = static_cast<std::uint64_t>(slice.vectors.rows());
  const int n = std::countr_zero(dim);
  const int k = static_cast<int>(slice.vectors.cols());
  std::vector<Eigen::MatrixXd> out(n);
  Eigen::MatrixXd scaled(dim, k);
  for (int i = 0; i < n; ++i) {
    const std::uint64_t bit = std::uint64_t{1} << i;
    for (std::uint64_t x = 0; x < dim; ++x) {
      const double sign = (x & bit) ? -1.0 : 1.0;
      scaled.row(x) = sign * slice.vectors.row(x);
    }
    out[i].noalias() = slice.vectors.transpose() * scaled;
  }
  return out;
}

// Pauli generator on populations: W(m, n) is the rate n -> m for m != n and
// the diagonal makes every column sum to zero. Rates follow the golden rule
// with the per-qubit sigma^z couplings.
inline Eigen::MatrixXd transition_rates(const SpectrumSlice& slice,
                                        const BathParams& bath) {
  const auto elems = sigma_z_elements(slice);
  const int k = static_cast<int>(slice.energies.size());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(k, k);
  for (int n = 0; n < k; ++n)
    for (int m = 0; m < k; ++m) {
      if (m == n) continue;
      double weight = 0.0;
      for (const auto& a : elems) weight += a(m, n) * a(m, n);
      w(m, n) = weight * spectral_rate(slice.energies[n] - slice.energies[m], bath);
    }
  for (int n = 0; n < k; ++n) w(n, n) = -w.col(n).sum();
  return w;
}

enum class EvolveModel { Closed, Secular, Redfield };
enum class ClosedMode { FullState, Truncated };

struct DynamicsConfig {
  double ta_ns = 0.0;
  int levels = 12;
  EvolveModel model = EvolveModel::Secular;
  int grid_points = 257;
  double step_tolerance = 1e-8;
  bool include_nonadiabatic = false;
  ClosedMode closed_mode = ClosedMode::FullState;
  std::optional<double> pin_s;  // freeze H at this s; time still runs over ta
  TrackOptions track;

  void validate() const {
    if (!(ta_ns > 0.0)) throw validation_error("dynamics: ta must be > 0");
    if (levels < 2) throw validation_error("dynamics: need K >= 2 levels");
    if (grid_points < 2) throw validation_error("dynamics: grid too small");
    if (!(step_tolerance > 0.0))
      throw validation_error("dynamics: tolerance must be > 0");
    if (pin_s && (*pin_s < 0.0 || *pin_s > 1.0))
      throw validation_error("dynamics: pin_s outside [0,1]");
  }
};

struct Trajectory {
  std::vector<double> s_grid;
  std::vector<Eigen::VectorXd> populations;  // K per grid node
  std::vector<double> retained_mass;
  std::vector<double> coherence_norm;  // filled by density-matrix models
  LevelDistribution final;             // populations at s = 1
  double P0_final = 0.0;               // summed over degenerate ground levels
  double min_gap_ghz = 0.0;            // smallest adjacent tracked gap anywhere
  double norm_drift = 0.0;             // max | ||psi|| - 1 |, full-state runs
  Eigen::VectorXcd final_state;        // full-state closed runs only
};

namespace detail {

// Per-slice tables on the track grid, linearly interpolated in s by the
// integrators. Which tables are built depends on the evolution model.
struct RateTable {
  std::vector<double> grid;
  std::vector<Eigen::VectorXd> energy;
  std::vector<Eigen::MatrixXd> wmat;     // Pauli generator
  std::vector<Eigen::MatrixXd> dephase;  // secular coherence decay rates
  std::vector<Eigen::MatrixXd> rot;      // <n|d_s m>, antisymmetric
  std::vector<std::vector<Eigen::MatrixXd>> acoup;  // sigma^z elements per qubit
  std::vector<std::vector<Eigen::MatrixXd>> fcoup;  // rate-filtered couplings

  int levels() const { return energy.empty() ? 0 : static_cast<int>(energy[0].size()); }

  int interval(double s) const {
    const auto it = std::upper_bound(grid.begin(), grid.end(), s);
    const int hi = std::clamp<int>(static_cast<int>(it - grid.begin()), 1,
                                   static_cast<int>(grid.size()) - 1);
    return hi - 1;
  }
  double weight(int lo, double s) const {
    return (s - grid[lo]) / (grid[lo + 1] - grid[lo]);
  }

  template <class Seq>
  auto interp(const Seq& tab, double s) const {
    const int lo = interval(s);
    const double t = weight(lo, s);
    return ((1.0 - t) * tab[lo] + t * tab[lo + 1]).eval();
  }
};

struct RateTableParts {
  bool pauli = false;
  bool dephasing = false;
  bool rotation = false;
  bool coupling = false;
};

inline RateTable build_rate_table(const SpectrumTrack& track, const BathParams& bath,
                                  const RateTableParts& parts,
                                  const IsingDiagonal* base = nullptr,
                                  const Schedule* sched = nullptr,
                                  std::optional<double> pin_s = std::nullopt,
                                  double degeneracy_tol = 1e-6) {
  RateTable tab;
  tab.grid = track.grid;
  const int k = track.levels();
  const std::size_t m = track.slices.size();
  tab.energy.resize(m);
  for (std::size_t g = 0; g < m; ++g)
    tab.energy[g] = Eigen::Map<const Eigen::VectorXd>(
        track.slices[g].energies.data(), k);

  if (parts.pauli || parts.dephasing || parts.coupling) {
    if (parts.pauli || parts.dephasing) tab.wmat.resize(m);
    if (parts.dephasing) tab.dephase.resize(m);
    if (parts.coupling) {
      tab.acoup.resize(m);
      tab.fcoup.resize(m);
    }
    for (std::size_t g = 0; g < m; ++g) {
      const auto& slice = track.slices[g];
      const auto elems = sigma_z_elements(slice);
      if (parts.pauli || parts.dephasing) {
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(k, k);
        for (int n = 0; n < k; ++n)
          for (int mm = 0; mm < k; ++mm) {
            if (mm == n) continue;
            double weight = 0.0;
            for (const auto& a : elems) weight += a(mm, n) * a(mm, n);
            w(mm, n) =
                weight * spectral_rate(slice.energies[n] - slice.energies[mm], bath);
          }
        for (int n = 0; n < k; ++n) w(n, n) = -w.col(n).sum();
        tab.wmat[g] = std::move(w);
      }
      if (parts.dephasing) {
        // Gamma_nm = (loss_n + loss_m)/2 + pure dephasing from diagonal
        // coupling differences at zero frequency.
        Eigen::MatrixXd gm = Eigen::MatrixXd::Zero(k, k);
        const double g0 = spectral_rate(0.0, bath);
        for (int n = 0; n < k; ++n)
          for (int mm = 0; mm < k; ++mm) {
            if (mm == n) continue;
            double pure = 0.0;
            for (const auto& a : elems) {
              const double d = a(n, n) - a(mm, mm);
              pure += d * d;
            }
            gm(n, mm) = 0.5 * (-tab.wmat[g](n, n) - tab.wmat[g](mm, mm)) +
                        0.5 * g0 * pure;
          }
        tab.dephase[g] = std::move(gm);
      }
      if (parts.coupling) {
        tab.acoup[g] = elems;
        tab.fcoup[g].resize(elems.size());
        for (std::size_t q = 0; q < elems.size(); ++q) {
          Eigen::MatrixXd f(k, k);
          for (int r = 0; r < k; ++r)
            for (int c = 0; c < k; ++c)
              f(r, c) = elems[q](r, c) *
                        spectral_rate(slice.energies[c] - slice.energies[r], bath);
          tab.fcoup[g][q] = std::move(f);
        }
      }
    }
  }

  if (parts.rotation) {
    // Basis-rotation couplings <n|d_s m> = <n|dH/ds|m> / (E_m - E_n) with
    // dH/ds = -A'(s) sum sigma^x + B'(s) H_P, evaluated exactly per slice.
    // Inside a degenerate cluster the coupling is gauge (parallel transport
    // along the Procrustes-aligned track), so those entries are zero. Pinned
    // runs have a frozen Hamiltonian and no rotation at all.
    if (base == nullptr || sched == nullptr)
      throw validation_error("rate table: rotation couplings need the operator");
    tab.rot.resize(m);
    const auto dim = base->dim();
    for (std::size_t g = 0; g < m; ++g) {
      const auto& slice = track.slices[g];
      if (pin_s) {
        tab.rot[g] = Eigen::MatrixXd::Zero(k, k);
        continue;
      }
      const auto dpt = sched->derivative(slice.s);
      Eigen::MatrixXd dh_u(dim, k);
      Eigen::VectorXd out(dim);
      for (int c = 0; c < k; ++c) {
        base->apply(dpt.A, dpt.B, slice.vectors.col(c).eval().data(), out.data());
        dh_u.col(c) = out;
      }
      const Eigen::MatrixXd melem = slice.vectors.transpose() * dh_u;
      Eigen::MatrixXd gmat = Eigen::MatrixXd::Zero(k, k);
      for (int c = 0; c < k; ++c)
        for (int r = 0; r < k; ++r) {
          const double de = slice.energies[c] - slice.energies[r];
          if (r != c && std::abs(de) > degeneracy_tol) gmat(r, c) = melem(r, c) / de;
        }
      tab.rot[g] = 0.5 * (gmat - gmat.transpose());
    }
  }
  return tab;
}

// --- integrators -------------------------------------------------------------

// Adaptive Dormand-Prince 5(4) on a complex state vector.
template <class Rhs>
void rk45_integrate(const Rhs& rhs, double s0, double s1, Eigen::VectorXcd& y,
                    double tol) {
  static const double kA[7][6] = {
      {},
      {1.0 / 5},
      {3.0 / 40, 9.0 / 40},
      {44.0 / 45, -56.0 / 15, 32.0 / 9},
      {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
      {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
      {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
  static const double kC[7] = {0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
  static const double kB5[7] = {35.0 / 384,     0.0,           500.0 / 1113,
                                125.0 / 192,    -2187.0 / 6784, 11.0 / 84, 0.0};
  static const double kB4[7] = {5179.0 / 57600,  0.0,            7571.0 / 16695,
                                393.0 / 640,     -92097.0 / 339200, 187.0 / 2100,
                                1.0 / 40};
  const std::size_t dim = y.size();
  std::array<Eigen::VectorXcd, 7> k;
  Eigen::VectorXcd ytmp(dim), y5(dim), y4(dim);
  double s = s0;
  double h = (s1 - s0) / 16.0;
  const double hmin = (s1 - s0) * 1e-14;
  rhs(s, y, k[0]);
  while (s < s1) {
    h = std::min(h, s1 - s);
    for (int stage = 1; stage < 7; ++stage) {
      ytmp = y;
      for (int p = 0; p < stage; ++p)
        if (kA[stage][p] != 0.0) ytmp += (h * kA[stage][p]) * k[p];
      if (stage == 6) {
        y5 = ytmp;  // FSAL: stage 7 evaluates at the 5th-order solution
      }
      rhs(s + kC[stage] * h, ytmp, k[stage]);
    }
    y4 = y;
    for (int p = 0; p < 7; ++p)
      if (kB4[p] != 0.0) y4 += (h * kB4[p]) * k[p];
    double err2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double sc = tol + tol * std::abs(y5[i]);
      const double d = std::abs(y5[i] - y4[i]);
      err2 += (d / sc) * (d / sc);
    }
    const double err = std::sqrt(err2 / dim);
    if (err <= 1.0) {
      s += h;
      y.swap(y5);
      k[0] = k[6];  // FSAL; on rejection k[0] still matches (s, y)
    }
    const double fac = std::clamp(0.9 * std::pow(std::max(err, 1e-12), -0.2), 0.2, 5.0);
    h *= fac;
    if (h < hmin)
      throw numerical_error("rk45: step-size underflow at s = " + std::to_string(s));
  }
}

// One TR-BDF2 step for the linear system y' = L(s) y (L real).
inline Eigen::VectorXd trbdf2_step(
    const std::function<Eigen::MatrixXd(double)>& lmat, double s, double h,
    const Eigen::VectorXd& y) {
  const double g = 2.0 - std::sqrt(2.0);
  const Eigen::MatrixXd l0 = lmat(s);
  const Eigen::MatrixXd lg = lmat(s + g * h);
  const Eigen::MatrixXd l1 = lmat(s + h);
  const int k = static_cast<int>(y.size());
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(k, k);
  const Eigen::VectorXd rhs1 = y + (0.5 * g * h) * (l0 * y);
  const Eigen::VectorXd yg =
      (id - (0.5 * g * h) * lg).partialPivLu().solve(rhs1);
  const double c1 = 1.0 / (g * (2.0 - g));
  const double c2 = (1.0 - g) * (1.0 - g) / (g * (2.0 - g));
  const double c3 = (1.0 - g) / (2.0 - g);
  return (id - (c3 * h) * l1).partialPivLu().solve(c1 * yg - c2 * y);
}

// Adaptive TR-BDF2 by step doubling; L-stable, so stiff generators at long
// annealing times do not force explicit-stability step sizes.
inline void trbdf2_integrate(const std::function<Eigen::MatrixXd(double)>& lmat,
                             double s0, double s1, Eigen::VectorXd& y, double tol) {
  double s = s0;
  double h = (s1 - s0) / 8.0;
  const double hmin = (s1 - s0) * 1e-13;
  while (s < s1) {
    h = std::min(h, s1 - s);
    const Eigen::VectorXd big = trbdf2_step(lmat, s, h, y);
    Eigen::VectorXd small = trbdf2_step(lmat, s, 0.5 * h, y);
    small = trbdf2_step(lmat, s + 0.5 * h, 0.5 * h, small);
    double err2 = 0.0;
    for (int i = 0; i < y.size(); ++i) {
      const double sc = tol + tol * std::abs(small[i]);
      const double d = std::abs(big[i] - small[i]) / 3.0;
      err2 += (d / sc) * (d / sc);
    }
    const double err = std::sqrt(err2 / y.size());
    if (err <= 1.0) {
      s += h;
      y = small;
    }
    h *= std::clamp(0.9 * std::pow(std::max(err, 1e-12), -1.0 / 3.0), 0.2, 4.0);
    if (h < hmin)
      throw numerical_error("trbdf2: step-size underflow at s = " + std::to_string(s));
  }
}

// Exponential midpoint (second-order Magnus) propagator for the truncated
// closed amplitudes c' = (-i 2 pi ta E(s) - G(s)) c. Each step is exactly
// unitary: the fast phases are inside the exponential, so the step size is
// set by the s-variation of E and G, not by the phase frequency ta*E.
class MagnusAmplitudePropagator {
 public:
  MagnusAmplitudePropagator(const RateTable& tab, double ta_ns)
      : tab_(tab), ta_(ta_ns) {}

  void step(double s, double h, Eigen::VectorXcd& c) const {
    const double mid = s + 0.5 * h;
    const Eigen::VectorXd e = tab_.interp(tab_.energy, mid);
    const Eigen::MatrixXd g = tab_.interp(tab_.rot, mid);
    const int k = static_cast<int>(e.size());
    Eigen::MatrixXcd heff(k, k);
    heff = (-std::complex<double>(0, 1)) * g.cast<std::complex<double>>();
    heff.diagonal().array() += (kTwoPi * ta_) * e.array();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(heff);
    const Eigen::VectorXcd phases =
        (-std::complex<double>(0, 1) * h * es.eigenvalues().array()).exp();
    c = es.eigenvectors() * (phases.asDiagonal() * (es.eigenvectors().adjoint() * c));
  }

  void integrate(double s0, double s1, Eigen::VectorXcd& c, double tol) const {
    double s = s0;
    double h = (s1 - s0) / 4.0;
    const double hmin = (s1 - s0) * 1e-13;
    Eigen::VectorXcd big, small;
    while (s < s1) {
      h = std::min(h, s1 - s);
      big = c;
      step(s, h, big);
      small = c;
      step(s, 0.5 * h, small);
      step(s + 0.5 * h, 0.5 * h, small);
      const double err =
          (big - small).norm() / (3.0 * tol * (1.0 + small.norm()));
      if (err <= 1.0) {
        s += h;
        c = small;
      }
      h *= std::clamp(0.9 * std::pow(std::max(err, 1e-12), -1.0 / 3.0), 0.2, 4.0);
      if (h < hmin)
        throw numerical_error("magnus: step-size underflow at s = " +
                              std::to_string(s));
    }
  }

 private:
  const RateTable& tab_;
  double ta_;
};

// Same propagator lifted to density matrices (unitary part only); used for
// the zero-coupling master equation where the dissipator vanishes.
class MagnusDensityPropagator {
 public:
  MagnusDensityPropagator(const RateTable& tab, double ta_ns)
      : tab_(tab), ta_(ta_ns) {}

  void step(double s, double h, Eigen::MatrixXcd& rho) const {
    const double mid = s + 0.5 * h;
    const Eigen::VectorXd e = tab_.interp(tab_.energy, mid);
    const Eigen::MatrixXd g = tab_.interp(tab_.rot, mid);
    const int k = static_cast<int>(e.size());
    Eigen::MatrixXcd heff(k, k);
    heff = (-std::complex<double>(0, 1)) * g.cast<std::complex<double>>();
    heff.diagonal().array() += (kTwoPi * ta_) * e.array();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(heff);
    const Eigen::VectorXcd phases =
        (-std::complex<double>(0, 1) * h * es.eigenvalues().array()).exp();
    const Eigen::MatrixXcd u =
        es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
    rho = u * rho * u.adjoint();
  }

  void integrate(double s0, double s1, Eigen::MatrixXcd& rho, double tol) const {
    double s = s0;
    double h = (s1 - s0) / 4.0;
    const double hmin = (s1 - s0) * 1e-13;
    Eigen::MatrixXcd big, small;
    while (s < s1) {
      h = std::min(h, s1 - s);
      big = rho;
      step(s, h, big);
      small = rho;
      step(s, 0.5 * h, small);
      step(s + 0.5 * h, 0.5 * h, small);
      const double err =
          (big - small).norm() / (3.0 * tol * (1.0 + small.norm()));
      if (err <= 1.0) {
        s += h;
        rho = small;
      }
      h *= std::clamp(0.9 * std::pow(std::max(err, 1e-12), -1.0 / 3.0), 0.2, 4.0);
      if (h < hmin)
        throw numerical_error("magnus: step-size underflow at s = " +
                              std::to_string(s));
    }
  }

 private:
  const RateTable& tab_;
  double ta_;
};

inline double min_adjacent_gap(const SpectrumTrack& track) {
  double gap = std::numeric_limits<double>::infinity();
  for (const auto& slice : track.slices)
    for (std::size_t i = 1; i < slice.energies.size(); ++i)
      gap = std::min(gap, slice.energies[i] - slice.energies[i - 1]);
  return gap;
}

inline void finalize_trajectory(Trajectory& traj, const SpectrumTrack& track,
                                double t_mk) {
  traj.final.probs.assign(traj.populations.back().data(),
                          traj.populations.back().data() +
                              traj.populations.back().size());
  traj.final.s = traj.s_grid.back();
  traj.final.T_mK = t_mk;
  const auto& efinal = track.slices.back().energies;
  const double emin = efinal.front();
  traj.P0_final = 0.0;
  for (std::size_t i = 0; i < efinal.size(); ++i)
    if (efinal[i] <= emin + 1e-6) traj.P0_final += traj.populations.back()[i];
  traj.min_gap_ghz = min_adjacent_gap(track);
}

}  // namespace detail

// Builds the spectrum track a dynamics run integrates along. Pinned runs
// replicate one slice over the grid, so H is frozen while time advances.
inline SpectrumTrack dynamics_track(const ProblemInstance& inst,
                                    const Schedule& sched,
                                    const DynamicsConfig& config) {
  config.validate();
  const auto grid = uniform_grid(config.grid_points);
  if (config.pin_s) {
    auto op = build_hamiltonian(inst, sched, *config.pin_s);
    SpectrumSlice slice = lowest_k_eigen(op, config.levels, config.track.eig);
    SpectrumTrack track;
    track.grid = grid;
    for (double s : grid) {
      SpectrumSlice copy = slice;
      copy.s = s;
      track.slices.push_back(std::move(copy));
    }
    return track;
  }
  return track_spectrum(inst, sched, grid, config.levels, config.track);
}

// --- closed evolution --------------------------------------------------------

// Full-state Schroedinger integration of i dpsi/ds = 2 pi ta H(s) psi with a
// caller-supplied initial state, reported as tracked-level populations.
inline Trajectory closed_evolve_state(const ProblemInstance& inst,
                                      const Schedule& sched,
                                      const DynamicsConfig& config,
                                      const SpectrumTrack& track,
                                      Eigen::VectorXcd psi) {
  config.validate();
  if (inst.n > 14)
    throw unsupported_size_error(
        "closed_evolve: full-state mode needs n <= 14; use the truncated mode");
  const auto base = std::make_shared<IsingDiagonal>(inst);
  if (psi.size() != static_cast<Eigen::Index>(base->dim()))
    throw validation_error("closed_evolve_state: initial state has wrong dimension");
  const double ta = config.ta_ns;
  const std::complex<double> minus_i(0.0, -1.0);
  Eigen::VectorXcd scratch(base->dim());
  auto rhs = [&](double s, const Eigen::VectorXcd& y, Eigen::VectorXcd& dy) {
    const double seff = config.pin_s ? *config.pin_s : s;
    const auto pt = sched.evaluate(std::clamp(seff, 0.0, 1.0));
    base->apply(pt.A, pt.B, y.data(), scratch.data());
    dy = (minus_i * kTwoPi * ta) * scratch;
  };

  Trajectory traj;
  traj.s_grid = track.grid;
  const int k = track.levels();
  auto record = [&](std::size_t node) {
    Eigen::VectorXd pop(k);
    for (int i = 0; i < k; ++i) {
      const std::complex<double> amp =
          track.slices[node].vectors.col(i).cast<std::complex<double>>().dot(psi);
      pop[i] = std::norm(amp);
    }
    traj.populations.push_back(pop);
    traj.retained_mass.push_back(pop.sum());
  };
  record(0);
  for (std::size_t g = 1; g < track.grid.size(); ++g) {
    detail::rk45_integrate(rhs, track.grid[g - 1], track.grid[g], psi,
                           config.step_tolerance);
    const double drift = std::abs(psi.norm() - 1.0);
    traj.norm_drift = std::max(traj.norm_drift, drift);
    if (drift > std::max(1e-6, 1e5 * config.step_tolerance))
      throw numerical_error("closed_evolve: norm drift " + std::to_string(drift));
    record(g);
  }
  detail::finalize_trajectory(traj, track, 0.0);
  traj.final_state = psi;
  return traj;
}

inline Trajectory closed_evolve_on_track(const ProblemInstance& inst,
                                         const Schedule& sched,
                                         const DynamicsConfig& config,
                                         const SpectrumTrack& track) {
  config.validate();
  if (config.closed_mode == ClosedMode::FullState) {
    Eigen::VectorXcd psi =
        track.slices.front().vectors.col(0).cast<std::complex<double>>();
    return closed_evolve_state(inst, sched, config, track, std::move(psi));
  }
  // Truncated mode: amplitudes on the K tracked levels in the adiabatic frame.
  detail::RateTableParts parts;
  parts.rotation = true;
  const IsingDiagonal base(inst);
  BathParams unused;  // rotation table needs no bath
  const auto tab =
      detail::build_rate_table(track, unused, parts, &base, &sched, config.pin_s,
                               config.track.degeneracy_tol);
  detail::MagnusAmplitudePropagator prop(tab, config.ta_ns);
  const int k = track.levels();
  Eigen::VectorXcd c = Eigen::VectorXcd::Zero(k);
  c[0] = 1.0;
  Trajectory traj;
  traj.s_grid = track.grid;
  auto record = [&]() {
    Eigen::VectorXd pop = c.cwiseAbs2();
    traj.populations.push_back(pop);
    traj.retained_mass.push_back(pop.sum());
  };
  record();
  for (std::size_t g = 1; g < track.grid.size(); ++g) {
    prop.integrate(track.grid[g - 1], track.grid[g], c, config.step_tolerance);
    record();
  }
  detail::finalize_trajectory(traj, track, 0.0);
  return traj;
}

inline Trajectory closed_evolve(const ProblemInstance& inst, const Schedule& sched,
                                const DynamicsConfig& config) {
  const auto track = dynamics_track(inst, sched, config);
  return closed_evolve_on_track(inst, sched, config, track);
}

// --- open evolution ----------------------------------------------------------

namespace detail {

// Density-matrix right-hand side shared by the secular and Redfield models.
// All of it lives in the tracked instantaneous basis:
//   phases:     -i 2 pi ta (E_n - E_m) rho_nm
//   rotation:   -[G, rho]                        (include_nonadiabatic)
//   dissipator: secular -> Pauli rates on the diagonal, Gamma decay off it
//               redfield -> full weak-coupling tensor from the per-qubit
//               sigma^z couplings and the same rate function
class MasterEquationRhs {
 public:
  MasterEquationRhs(const RateTable& tab, const DynamicsConfig& config,
                    bool full_dissipator, bool with_rotation, double eta)
      : tab_(tab),
        ta_(config.ta_ns),
        k_(tab.levels()),
        full_(full_dissipator),
        rotation_(with_rotation),
        eta_(eta) {}

  void operator()(double s, const Eigen::VectorXcd& y, Eigen::VectorXcd& dy) const {
    const Eigen::Map<const Eigen::MatrixXcd> rho(y.data(), k_, k_);
    dy.resize(k_ * k_);
    Eigen::Map<Eigen::MatrixXcd> out(dy.data(), k_, k_);

    const Eigen::VectorXd e = tab_.interp(tab_.energy, s);
    const std::complex<double> iw(0.0, -kTwoPi * ta_);
    for (int c = 0; c < k_; ++c)
      for (int r = 0; r < k_; ++r)
        out(r, c) = iw * (e[r] - e[c]) * rho(r, c);

    if (rotation_) {
      const Eigen::MatrixXd g = tab_.interp(tab_.rot, s);
      out.noalias() -= g * rho;
      out.noalias() += rho * g;
    }

    if (eta_ == 0.0) return;

    if (!full_) {
      const Eigen::MatrixXd w = tab_.interp(tab_.wmat, s);
      const Eigen::MatrixXd gm = tab_.interp(tab_.dephase, s);
      const Eigen::VectorXcd pops = rho.diagonal();
      const Eigen::VectorXcd dpop = w.cast<std::complex<double>>() * pops;
      for (int c = 0; c < k_; ++c)
        for (int r = 0; r < k_; ++r)
          if (r != c) out(r, c) -= ta_ * gm(r, c) * rho(r, c);
      out.diagonal() += ta_ * dpop;
      return;
    }

    // Redfield dissipator, exploiting hermiticity of rho: for each qubit
    // X = F rho A contributes (X + X^dagger)/2, and the anticommutator part
    // uses P = sum_i A_i F_i / 2 built from the same interpolated tables.
    const int lo = tab_.interval(s);
    const double t = tab_.weight(lo, s);
    const int nq = static_cast<int>(tab_.acoup[lo].size());
    Eigen::MatrixXd a(k_, k_), f(k_, k_);
    Eigen::MatrixXcd x(k_, k_);
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(k_, k_);
    for (int q = 0; q < nq; ++q) {
      a = (1.0 - t) * tab_.acoup[lo][q] + t * tab_.acoup[lo + 1][q];
      f = (1.0 - t) * tab_.fcoup[lo][q] + t * tab_.fcoup[lo + 1][q];
      x.noalias() = f * rho * a;
      out += (0.5 * ta_) * (x + x.adjoint());
      p.noalias() += a * f;
    }
    x.noalias() = p * rho;
    out -= (0.5 * ta_) * (x + x.adjoint());
  }

 private:
  const RateTable& tab_;
  double ta_;
  int k_;
  bool full_;
  bool rotation_;
  double eta_;
};

}  // namespace detail

inline Trajectory open_evolve_on_track(const ProblemInstance& inst,
                                       const Schedule& sched,
                                       const SpectrumTrack& track,
                                       const BathParams& bath,
                                       const DynamicsConfig& config) {
  config.validate();
  bath.validate();
  if (config.model == EvolveModel::Closed)
    throw validation_error("open_evolve: model must be secular or redfield");
  const int k = track.levels();

  Trajectory traj;
  traj.s_grid = track.grid;

  if (config.model == EvolveModel::Secular && !config.include_nonadiabatic) {
    // Pauli master equation on populations only.
    detail::RateTableParts parts;
    parts.pauli = true;
    const auto tab = detail::build_rate_table(track, bath, parts);
    auto lmat = [&](double s) -> Eigen::MatrixXd {
      return config.ta_ns * tab.interp(tab.wmat, s);
    };
    Eigen::VectorXd p = Eigen::VectorXd::Zero(k);
    p[0] = 1.0;
    traj.populations.push_back(p);
    traj.retained_mass.push_back(1.0);
    for (std::size_t g = 1; g < track.grid.size(); ++g) {
      detail::trbdf2_integrate(lmat, track.grid[g - 1], track.grid[g], p,
                               config.step_tolerance);
      traj.populations.push_back(p);
      traj.retained_mass.push_back(p.sum());
    }
  } else {
    // Density-matrix models.
    detail::RateTableParts parts;
    parts.rotation = true;
    if (config.model == EvolveModel::Secular) {
      parts.pauli = true;
      parts.dephasing = true;
    } else {
      parts.coupling = true;
    }
    const IsingDiagonal base(inst);
    const auto tab =
        detail::build_rate_table(track, bath, parts, &base, &sched, config.pin_s,
                                 config.track.degeneracy_tol);
    Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(k, k);
    rho(0, 0) = 1.0;

    auto record = [&](const Eigen::MatrixXcd& r) {
      Eigen::VectorXd pop = r.diagonal().real();
      traj.populations.push_back(pop);
      traj.retained_mass.push_back(pop.sum());
      traj.coherence_norm.push_back(
          std::sqrt(std::max(0.0, r.squaredNorm() - r.diagonal().squaredNorm())));
    };
    record(rho);

    if (bath.eta == 0.0 && config.model == EvolveModel::Redfield) {
      // Dissipator vanishes identically: propagate unitarily, which keeps
      // huge ta affordable (phases live inside the exponential).
      detail::MagnusDensityPropagator prop(tab, config.ta_ns);
      for (std::size_t g = 1; g < track.grid.size(); ++g) {
        prop.integrate(track.grid[g - 1], track.grid[g], rho,
                       config.step_tolerance);
        record(rho);
      }
    } else {
      detail::MasterEquationRhs rhs(tab, config,
                                    config.model == EvolveModel::Redfield,
                                    config.include_nonadiabatic ||
                                        config.model == EvolveModel::Redfield,
                                    bath.eta);
      Eigen::VectorXcd y = Eigen::Map<Eigen::VectorXcd>(rho.data(), k * k);
      for (std::size_t g = 1; g < track.grid.size(); ++g) {
        detail::rk45_integrate(rhs, track.grid[g - 1], track.grid[g], y,
                               config.step_tolerance);
        rho = Eigen::Map<Eigen::MatrixXcd>(y.data(), k, k);
        record(rho);
      }
    }
    const double trace_drift = std::abs(traj.retained_mass.back() - 1.0);
    if (trace_drift > 1000 * config.step_tolerance + 1e-9)
      throw numerical_error("open_evolve: trace leak " +
                            std::to_string(trace_drift));
  }

  detail::finalize_trajectory(traj, track, bath.temp.T_mK);
  return traj;
}

inline Trajectory open_evolve(const ProblemInstance& inst, const Schedule& sched,
                              const BathParams& bath, const DynamicsConfig& config) {
  const auto track = dynamics_track(inst, sched, config);
  return open_evolve_on_track(inst, sched, track, bath, config);
}

// Equilibrium reference along a track: the Boltzmann distribution of each
// slice's energies at the bath temperature.
inline std::vector<LevelDistribution> boltzmann_track(const SpectrumTrack& track,
                                                      const TempParams& temp) {
  std::vector<LevelDistribution> out;
  out.reserve(track.slices.size());
  for (const auto& slice : track.slices) {
    auto d = boltzmann(slice.energies, temp);
    d.s = slice.s;
    out.push_back(std::move(d));
  }
  return out;
}

// Trajectory CSV: s, P_0..P_{K-1}, retained_mass[, coherence_norm].
inline void save_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot open for writing: " + path);
  const int k = traj.populations.empty()
                    ? 0
                    : static_cast<int>(traj.populations.front().size());
  out << "s";
  for (int i = 0; i < k; ++i) out << ",P_" << i;
  out << ",retained_mass";
  const bool with_coherence = !traj.coherence_norm.empty();
  if (with_coherence) out << ",coherence_norm";
  out << '\n';
  char buf[64];
  for (std::size_t g = 0; g < traj.s_grid.size(); ++g) {
    std::snprintf(buf, sizeof buf, "%.10g", traj.s_grid[g]);
    out << buf;
    for (int i = 0; i < k; ++i) {
      std::snprintf(buf, sizeof buf, ",%.12g", traj.populations[g][i]);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.12g", traj.retained_mass[g]);
    out << buf;
    if (with_coherence) {
      std::snprintf(buf, sizeof buf, ",%.12g", traj.coherence_norm[g]);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace qa
