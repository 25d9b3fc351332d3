#pragma once

// Instantaneous spectra of H(s) = -A(s) sum_i sigma^x_i + B(s) H_P.
//
// The operator is applied matrix-free (bit flips for sigma^x, a precomputed
// classical-energy table for the diagonal), so memory scales as 2^n rather
// than 4^n. Small dimensions go through a dense eigensolver; larger ones use
// thick-restart Lanczos with full reorthogonalization and locking. H is real
// symmetric in the computational basis, so all eigenvectors are real.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

#include "qa/equilibrium.hpp"
#include "qa/errors.hpp"
#include "qa/ising.hpp"
#include "qa/rng.hpp"
#include "qa/schedule.hpp"

namespace qa {

inline constexpr int kMaxOperatorQubits = 24;

// Schedule-independent part of H(s): the classical energy of every basis
// state plus the bit-flip structure. Shared between spectrum slices and the
// closed-system integrator so the 2^n table is built once per instance.
class IsingDiagonal {
 public:
  explicit IsingDiagonal(const ProblemInstance& inst) : n_(inst.n) {
    inst.validate();
    if (inst.n > kMaxOperatorQubits)
      throw unsupported_size_error("hamiltonian: n > " +
                                   std::to_string(kMaxOperatorQubits));
    const std::uint64_t dim = std::uint64_t{1} << n_;
    diag_.resize(dim);
    const auto adj = adjacency(inst);
    // Gray-code sweep fills the classical energy of every basis state.
    std::vector<int> spins(n_, 1);
    double e = 0.0;
    for (int i = 0; i < n_; ++i) e += inst.h[i];
    for (const auto& c : inst.couplings) e += c.value;
    diag_[0] = e;
    for (std::uint64_t k = 1; k < dim; ++k) {
      const int b = std::countr_zero(k);
      double local = inst.h[b];
      for (const auto& nb : adj[b]) local += nb.value * spins[nb.j];
      e -= 2.0 * spins[b] * local;
      spins[b] = -spins[b];
      diag_[k ^ (k >> 1)] = e;
    }
  }

  std::uint64_t dim() const { return diag_.size(); }
  int qubits() const { return n_; }
  const std::vector<double>& table() const { return diag_; }

  // H(a, b) = -a sum_i sigma^x_i + b H_P applied to a vector.
  template <class Scalar>
  void apply(double a, double b, const Scalar* in, Scalar* out) const {
    const std::uint64_t dim = diag_.size();
    for (std::uint64_t x = 0; x < dim; ++x) out[x] = (b * diag_[x]) * in[x];
    for (int i = 0; i < n_; ++i) {
      const std::uint64_t bit = std::uint64_t{1} << i;
      for (std::uint64_t base = 0; base < dim; base += 2 * bit)
        for (std::uint64_t x = base; x < base + bit; ++x) {
          out[x] -= a * in[x + bit];
          out[x + bit] -= a * in[x];
        }
    }
  }

 private:
  int n_;
  std::vector<double> diag_;
};

class TransverseIsingOperator {
 public:
  TransverseIsingOperator(const ProblemInstance& inst, double a_ghz, double b_ghz)
      : base_(std::make_shared<IsingDiagonal>(inst)), a_(a_ghz), b_(b_ghz) {}

  TransverseIsingOperator(std::shared_ptr<const IsingDiagonal> base, double a_ghz,
                          double b_ghz)
      : base_(std::move(base)), a_(a_ghz), b_(b_ghz) {}

  std::uint64_t dim() const { return base_->dim(); }
  int qubits() const { return base_->qubits(); }
  double a() const { return a_; }
  double b() const { return b_; }
  bool is_diagonal() const { return a_ == 0.0; }
  const std::vector<double>& classical_diagonal() const { return base_->table(); }

  // Cheap upper bound on the spectral radius, used to scale residual tests.
  double norm_bound() const {
    double dmax = 0.0;
    for (double d : base_->table()) dmax = std::max(dmax, std::abs(d));
    return std::abs(a_) * qubits() + std::abs(b_) * dmax;
  }

  template <class Scalar>
  void apply(const Scalar* in, Scalar* out) const {
    base_->apply(a_, b_, in, out);
  }

  void apply(const Eigen::VectorXd& in, Eigen::VectorXd& out) const {
    out.resize(in.size());
    apply(in.data(), out.data());
  }

  void apply(const Eigen::VectorXcd& in, Eigen::VectorXcd& out) const {
    out.resize(in.size());
    apply(in.data(), out.data());
  }

  Eigen::MatrixXd dense() const {
    const auto d = dim();
    if (qubits() > 14)
      throw unsupported_size_error("dense hamiltonian limited to n <= 14");
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    for (std::uint64_t x = 0; x < d; ++x) {
      m(x, x) = b_ * base_->table()[x];
      for (int i = 0; i < qubits(); ++i) m(x ^ (std::uint64_t{1} << i), x) -= a_;
    }
    return m;
  }

 private:
  std::shared_ptr<const IsingDiagonal> base_;
  double a_, b_;
};

inline TransverseIsingOperator build_hamiltonian(const ProblemInstance& inst,
                                                 const Schedule& sched, double s) {
  const auto pt = sched.evaluate(s);
  return TransverseIsingOperator(inst, pt.A, pt.B);
}

struct SpectrumSlice {
  double s = 0.0;
  std::vector<double> energies;  // K lowest, ascending, GHz
  Eigen::MatrixXd vectors;       // dim x K, unit columns
};

struct EigenOptions {
  double residual_tol = 1e-8;     // relative to the operator norm bound
  std::uint64_t seed = 0x51a9c0;  // start-vector seed, fixed for reproducibility
  int max_cycles = 400;
  int dense_dim_max = 1024;       // at or below this, use the dense solver
};

namespace detail {

inline SpectrumSlice lowest_k_dense(const TransverseIsingOperator& op, int k) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(op.dense());
  SpectrumSlice slice;
  slice.energies.assign(es.eigenvalues().data(), es.eigenvalues().data() + k);
  slice.vectors = es.eigenvectors().leftCols(k);
  return slice;
}

inline SpectrumSlice lowest_k_diagonal(const TransverseIsingOperator& op, int k) {
  const std::uint64_t dim = op.dim();
  const auto& diag = op.classical_diagonal();
  std::vector<std::uint64_t> idx(dim);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](std::uint64_t a, std::uint64_t b) {
                      return diag[a] != diag[b] ? diag[a] < diag[b] : a < b;
                    });
  SpectrumSlice slice;
  slice.energies.resize(k);
  slice.vectors = Eigen::MatrixXd::Zero(dim, k);
  for (int i = 0; i < k; ++i) {
    slice.energies[i] = op.b() * diag[idx[i]];
    slice.vectors(idx[i], i) = 1.0;
  }
  return slice;
}

// Thick-restart Lanczos with full reorthogonalization. Converged Ritz pairs
// are locked and deflated; after any locking event the next cycle starts
// from a fresh seeded random vector so degenerate copies are still found.
inline SpectrumSlice lowest_k_lanczos(const TransverseIsingOperator& op, int k,
                                      const EigenOptions& opts) {
  const std::int64_t dim = static_cast<std::int64_t>(op.dim());
  const double scale = std::max(op.norm_bound(), 1e-12);
  const double tol_abs = opts.residual_tol * scale;
  const int m = std::min<std::int64_t>(dim, std::max(2 * k + 16, 36));

  Eigen::MatrixXd locked(dim, k);
  std::vector<double> locked_vals;
  int nlocked = 0;

  Xoshiro256ss rng(opts.seed);
  auto random_vec = [&]() {
    Eigen::VectorXd v(dim);
    for (std::int64_t i = 0; i < dim; ++i) v[i] = 2.0 * rng.uniform() - 1.0;
    return v;
  };
  auto deflate = [&](Eigen::VectorXd& w) {
    if (nlocked > 0) {
      auto lk = locked.leftCols(nlocked);
      w.noalias() -= lk * (lk.transpose() * w);
    }
  };

  Eigen::MatrixXd basis(dim, m);
  Eigen::MatrixXd tmat = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd resid_vec;

  int ncols = 0;          // current basis columns
  double worst_res = 0.0;  // best achieved residual for error reporting

  // Initial start vector.
  {
    Eigen::VectorXd v = random_vec();
    deflate(v);
    v.normalize();
    basis.col(0) = v;
    ncols = 1;
  }

  for (int cycle = 0; cycle < opts.max_cycles; ++cycle) {
    // Extend the factorization to m columns.
    while (ncols < m) {
      const int j = ncols - 1;
      Eigen::VectorXd w(dim);
      op.apply(basis.col(j).eval().data(), w.data());
      deflate(w);
      auto vj = basis.leftCols(ncols);
      Eigen::VectorXd coef = vj.transpose() * w;
      w.noalias() -= vj * coef;
      Eigen::VectorXd coef2 = vj.transpose() * w;  // second pass
      w.noalias() -= vj * coef2;
      coef += coef2;
      for (int i = 0; i < ncols; ++i) {
        tmat(i, j) = coef[i];
        tmat(j, i) = coef[i];
      }
      const double beta = w.norm();
      if (beta < 1e-13 * scale) {
        // Invariant subspace: inject a fresh direction with a zero border.
        Eigen::VectorXd v = random_vec();
        deflate(v);
        v.noalias() -= vj * (vj.transpose() * v);
        v.noalias() -= vj * (vj.transpose() * v);
        v.normalize();
        basis.col(ncols) = v;
        tmat(j, ncols) = 0.0;
        tmat(ncols, j) = 0.0;
      } else {
        basis.col(ncols) = w / beta;
        tmat(j, ncols) = beta;
        tmat(ncols, j) = beta;
      }
      ++ncols;
    }

    // Rayleigh-Ritz on the projected matrix; the border vector for residuals
    // comes from one more deflated, reorthogonalized operator application.
    {
      const int j = ncols - 1;
      Eigen::VectorXd w(dim);
      op.apply(basis.col(j).eval().data(), w.data());
      deflate(w);
      auto vj = basis.leftCols(ncols);
      Eigen::VectorXd coef = vj.transpose() * w;
      w.noalias() -= vj * coef;
      Eigen::VectorXd coef2 = vj.transpose() * w;
      w.noalias() -= vj * coef2;
      coef += coef2;
      for (int i = 0; i < ncols; ++i) {
        tmat(i, j) = coef[i];
        tmat(j, i) = coef[i];
      }
      double beta = w.norm();
      if (beta < 1e-13 * scale) {
        beta = 0.0;
        resid_vec = random_vec();
        deflate(resid_vec);
        resid_vec.noalias() -= vj * (vj.transpose() * resid_vec);
        resid_vec.normalize();
      } else {
        resid_vec = w / beta;
      }

      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> small(
          tmat.topLeftCorner(ncols, ncols));
      const auto& theta = small.eigenvalues();
      const auto& svec = small.eigenvectors();

      // Lock converged pairs in ascending order.
      const int before = nlocked;
      std::vector<int> keep;
      std::vector<double> border;
      bool blocked = false;
      for (int i = 0; i < ncols && nlocked < k; ++i) {
        const double res = std::abs(beta * svec(ncols - 1, i));
        if (!blocked && res <= tol_abs) {
          locked.col(nlocked) = basis.leftCols(ncols) * svec.col(i);
          locked.col(nlocked).normalize();
          locked_vals.push_back(theta[i]);
          ++nlocked;
        } else {
          blocked = true;  // only a contiguous low block may lock
          worst_res = res;
          if (static_cast<int>(keep.size()) < k - nlocked + 6 &&
              static_cast<int>(keep.size()) < m - 2) {
            keep.push_back(i);
            border.push_back(beta * svec(ncols - 1, i));
          }
        }
      }
      if (nlocked >= k) break;

      // Thick restart. After locking, restart from a fresh random vector so
      // a degenerate copy outside the old Krylov space can appear.
      if (nlocked > before || keep.empty()) {
        Eigen::VectorXd v = random_vec();
        deflate(v);
        v.normalize();
        basis.col(0) = v;
        tmat.setZero();
        ncols = 1;
      } else {
        Eigen::MatrixXd kept(dim, keep.size());
        for (std::size_t i = 0; i < keep.size(); ++i)
          kept.col(i) = basis.leftCols(ncols) * svec.col(keep[i]);
        tmat.setZero();
        for (std::size_t i = 0; i < keep.size(); ++i) {
          basis.col(i) = kept.col(i);
          tmat(i, i) = theta[keep[i]];
          tmat(i, keep.size()) = border[i];
          tmat(keep.size(), i) = border[i];
        }
        // Re-orthonormalize the continuation vector against the kept block.
        auto kb = basis.leftCols(keep.size());
        resid_vec.noalias() -= kb * (kb.transpose() * resid_vec);
        resid_vec.normalize();
        basis.col(keep.size()) = resid_vec;
        ncols = static_cast<int>(keep.size()) + 1;
      }
    }
  }

  if (nlocked < k)
    throw numerical_error(
        "lanczos: failed to converge " + std::to_string(k) + " eigenpairs (" +
        std::to_string(nlocked) + " locked, residual " + std::to_string(worst_res) +
        ", tol " + std::to_string(tol_abs) + ")");

  // Locking order is ascending per cycle but cycles may interleave: sort.
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return locked_vals[a] < locked_vals[b]; });
  SpectrumSlice slice;
  slice.energies.resize(k);
  slice.vectors.resize(dim, k);
  for (int i = 0; i < k; ++i) {
    slice.energies[i] = locked_vals[order[i]];
    slice.vectors.col(i) = locked.col(order[i]);
  }
  return slice;
}

}  // namespace detail

inline SpectrumSlice lowest_k_eigen(const TransverseIsingOperator& op, int k,
                                    const EigenOptions& opts = {}) {
  if (k < 1 || static_cast<std::uint64_t>(k) > op.dim())
    throw validation_error("lowest_k_eigen: K must be in [1, dim]");
  if (op.is_diagonal()) return detail::lowest_k_diagonal(op, k);
  if (op.dim() <= static_cast<std::uint64_t>(opts.dense_dim_max))
    return detail::lowest_k_dense(op, k);
  return detail::lowest_k_lanczos(op, k, opts);
}

// --- tracking ----------------------------------------------------------------

struct TrackOptions {
  EigenOptions eig;
  double overlap_guard = 0.5;  // min singular value of consecutive K-subspace overlap
  double degeneracy_tol = 1e-6;  // GHz; levels closer than this form a cluster
};

struct SpectrumTrack {
  std::vector<double> grid;
  std::vector<SpectrumSlice> slices;
  int levels() const {
    return slices.empty() ? 0 : static_cast<int>(slices.front().energies.size());
  }
};

inline std::vector<double> uniform_grid(int points) {
  if (points < 2) throw validation_error("grid needs at least 2 points");
  std::vector<double> g(points);
  for (int i = 0; i < points; ++i) g[i] = static_cast<double>(i) / (points - 1);
  g.back() = 1.0;
  return g;
}

namespace detail {

// Rotates every degenerate eigenvector cluster of `slice` (consecutive levels
// within tol of each other) toward the same columns of `target` by orthogonal
// Procrustes. Inside a cluster the eigenbasis is solver-arbitrary; this picks
// the representative that varies smoothly along the track.
inline void align_clusters(SpectrumSlice& slice, const SpectrumSlice& target,
                           double tol) {
  const int k = static_cast<int>(slice.energies.size());
  int a = 0;
  while (a < k) {
    int b = a + 1;
    while (b < k && slice.energies[b] - slice.energies[b - 1] <= tol) ++b;
    if (b - a >= 2) {
      const auto block = slice.vectors.middleCols(a, b - a);
      Eigen::MatrixXd gram = block.transpose() * target.vectors.middleCols(a, b - a);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram,
                                            Eigen::ComputeFullU | Eigen::ComputeFullV);
      slice.vectors.middleCols(a, b - a) =
          block * (svd.matrixU() * svd.matrixV().transpose());
    }
    a = b;
  }
}

// Number of leading levels whose tracked subspace is well defined. When the
// level just above the K cut is degenerate with level K-1 the boundary slices
// through a cluster, so which members are retained is solver-arbitrary and
// the whole cluster is exempt from the subspace-continuity guard.
inline int guarded_rank(const std::vector<double>& energies, int k,
                        double next_energy, bool have_next, double tol) {
  if (!have_next || next_energy - energies[k - 1] > tol) return k;
  int c = k - 1;
  while (c > 0 && energies[c] - energies[c - 1] <= tol) --c;
  return c;
}

}  // namespace detail

// Visits slices in grid order with continuity fixing: degenerate clusters are
// rotated for smoothness, eigenvector signs are aligned so consecutive
// same-level overlaps are non-negative, and the subspace overlap between
// neighbours is guarded (excluding levels inside a cluster cut by the K
// boundary, where the subspace itself is ambiguous). Levels stay ordered by
// energy; crossings are not followed diabatically.
template <class Visitor>
void scan_spectrum(const ProblemInstance& inst, const Schedule& sched,
                   const std::vector<double>& grid, int k, const TrackOptions& opts,
                   Visitor&& visit) {
  if (grid.size() < 2)
    throw validation_error("track_spectrum: grid needs at least 2 points");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1]))
      throw validation_error("track_spectrum: grid must be strictly increasing");
  SpectrumSlice held;
  int held_rank = k;
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    auto op = build_hamiltonian(inst, sched, grid[gi]);
    // one spare level detects a degenerate cluster cut by the K boundary
    const bool have_spare = static_cast<std::uint64_t>(k) < op.dim();
    SpectrumSlice slice = lowest_k_eigen(op, have_spare ? k + 1 : k, opts.eig);
    slice.s = grid[gi];
    const double spare_energy = have_spare ? slice.energies[k] : 0.0;
    if (have_spare) {
      slice.energies.resize(k);
      slice.vectors.conservativeResize(Eigen::NoChange, k);
    }
    const int rank = detail::guarded_rank(slice.energies, k, spare_energy,
                                          have_spare, opts.degeneracy_tol);
    if (gi > 0) {
      if (gi == 1) detail::align_clusters(held, slice, opts.degeneracy_tol);
      detail::align_clusters(slice, held, opts.degeneracy_tol);
      const int r = std::min(held_rank, rank);
      if (r > 0) {
        Eigen::MatrixXd overlap =
            held.vectors.leftCols(r).transpose() * slice.vectors.leftCols(r);
        const double sigma_min = overlap.jacobiSvd().singularValues().minCoeff();
        if (sigma_min <= opts.overlap_guard)
          throw numerical_error(
              "track_spectrum: subspace overlap " + std::to_string(sigma_min) +
              " <= " + std::to_string(opts.overlap_guard) + " in [" +
              std::to_string(grid[gi - 1]) + ", " + std::to_string(grid[gi]) +
              "]; refine the grid");
      }
      for (int c = 0; c < k; ++c)
        if (held.vectors.col(c).dot(slice.vectors.col(c)) < 0.0)
          slice.vectors.col(c) = -slice.vectors.col(c);
      visit(std::move(held));
    }
    held = std::move(slice);
    held_rank = rank;
  }
  visit(std::move(held));
}

inline SpectrumTrack track_spectrum(const ProblemInstance& inst,
                                    const Schedule& sched,
                                    const std::vector<double>& grid, int k,
                                    const TrackOptions& opts = {}) {
  SpectrumTrack track;
  track.grid = grid;
  track.slices.reserve(grid.size());
  scan_spectrum(inst, sched, grid, k, opts,
                [&](SpectrumSlice&& s) { track.slices.push_back(std::move(s)); });
  return track;
}

// K lowest classical energies (with multiplicity) scaled by B(s): the dashed
// comparison levels for spectrum plots. Exhaustive over all 2^n states.
inline std::vector<double> classical_levels(const ProblemInstance& inst,
                                            const Schedule& sched, double s, int k) {
  inst.validate();
  if (inst.n > kBruteForceMaxQubits)
    throw unsupported_size_error("classical_levels: n > " +
                                 std::to_string(kBruteForceMaxQubits));
  const std::uint64_t dim = std::uint64_t{1} << inst.n;
  if (static_cast<std::uint64_t>(k) > dim)
    throw validation_error("classical_levels: K exceeds 2^n");
  const auto adj = adjacency(inst);
  std::priority_queue<double> worst;  // max-heap of the K smallest energies
  std::vector<int> spins(inst.n, 1);
  double e = 0.0;
  for (int i = 0; i < inst.n; ++i) e += inst.h[i];
  for (const auto& c : inst.couplings) e += c.value;
  worst.push(e);
  for (std::uint64_t x = 1; x < dim; ++x) {
    const int b = std::countr_zero(x);
    double local = inst.h[b];
    for (const auto& nb : adj[b]) local += nb.value * spins[nb.j];
    e -= 2.0 * spins[b] * local;
    spins[b] = -spins[b];
    if (static_cast<int>(worst.size()) < k)
      worst.push(e);
    else if (e < worst.top()) {
      worst.pop();
      worst.push(e);
    }
  }
  std::vector<double> levels(worst.size());
  for (std::size_t i = levels.size(); i-- > 0;) {
    levels[i] = worst.top();
    worst.pop();
  }
  const double b_s = sched.evaluate(s).B;
  for (double& v : levels) v *= b_s;
  return levels;
}

// CSV: s, E_0..E_{K-1}[, C_0..C_{K-1}]. Streams slices, so large-n scans do
// not hold every eigenvector in memory.
inline void write_spectrum_csv(const ProblemInstance& inst, const Schedule& sched,
                               const std::vector<double>& grid, int k,
                               bool with_classical, const std::string& path,
                               const TrackOptions& opts = {}) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot open for writing: " + path);
  out << "s";
  for (int i = 0; i < k; ++i) out << ",E_" << i;
  std::vector<double> classical;
  if (with_classical) {
    classical = classical_levels(inst, sched, 1.0, k);  // dimensionless * B below
    const double b1 = sched.evaluate(1.0).B;
    for (double& c : classical) c /= b1;
    for (int i = 0; i < k; ++i) out << ",C_" << i;
  }
  out << '\n';
  char buf[64];
  scan_spectrum(inst, sched, grid, k, opts, [&](SpectrumSlice&& slice) {
    std::snprintf(buf, sizeof buf, "%.10g", slice.s);
    out << buf;
    for (double e : slice.energies) {
      std::snprintf(buf, sizeof buf, ",%.12g", e);
      out << buf;
    }
    if (with_classical) {
      const double b_s = sched.evaluate(slice.s).B;
      for (double c : classical) {
        std::snprintf(buf, sizeof buf, ",%.12g", c * b_s);
        out << buf;
      }
    }
    out << '\n';
  });
}

}  // namespace qa
