#pragma once

// Annealing envelope functions A(s), B(s) in GHz over s in [0, 1], stored as
// a knot table and evaluated with shape-preserving piecewise-cubic (PCHIP)
// interpolation: exact at knots, no overshoot, monotone between knots.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qa/errors.hpp"

namespace qa {

struct ScheduleKnot {
  double s = 0.0;
  double A = 0.0;  // GHz
  double B = 0.0;  // GHz
};

struct SchedulePoint {
  double A = 0.0;
  double B = 0.0;
};

namespace detail {

// Fritsch-Carlson derivative choice: keeps the Hermite cubic monotone on
// every interval when the data are monotone.
inline std::vector<double> pchip_slopes(const std::vector<double>& x,
                                        const std::vector<double>& y) {
  const std::size_t n = x.size();
  std::vector<double> d(n, 0.0);
  if (n == 2) {
    d[0] = d[1] = (y[1] - y[0]) / (x[1] - x[0]);
    return d;
  }
  std::vector<double> hsteps(n - 1), delta(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    hsteps[i] = x[i + 1] - x[i];
    delta[i] = (y[i + 1] - y[i]) / hsteps[i];
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (delta[i - 1] * delta[i] <= 0.0) {
      d[i] = 0.0;
    } else {
      const double w1 = 2.0 * hsteps[i] + hsteps[i - 1];
      const double w2 = hsteps[i] + 2.0 * hsteps[i - 1];
      d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
    }
  }
  auto endpoint = [](double h0, double h1, double d0, double d1) {
    double d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (d * d0 <= 0.0)
      d = 0.0;
    else if (d0 * d1 < 0.0 && std::abs(d) > 3.0 * std::abs(d0))
      d = 3.0 * d0;
    return d;
  };
  d[0] = endpoint(hsteps[0], hsteps[1], delta[0], delta[1]);
  d[n - 1] = endpoint(hsteps[n - 2], hsteps[n - 3], delta[n - 2], delta[n - 3]);
  return d;
}

inline double hermite(double x0, double x1, double y0, double y1, double d0,
                      double d1, double x) {
  const double h = x1 - x0;
  const double t = (x - x0) / h;
  const double t2 = t * t;
  const double t3 = t2 * t;
  return y0 * (2 * t3 - 3 * t2 + 1) + h * d0 * (t3 - 2 * t2 + t) +
         y1 * (-2 * t3 + 3 * t2) + h * d1 * (t3 - t2);
}

inline double hermite_slope(double x0, double x1, double y0, double y1, double d0,
                            double d1, double x) {
  const double h = x1 - x0;
  const double t = (x - x0) / h;
  const double t2 = t * t;
  return y0 * (6 * t2 - 6 * t) / h + d0 * (3 * t2 - 4 * t + 1) +
         y1 * (6 * t - 6 * t2) / h + d1 * (3 * t2 - 2 * t);
}

}  // namespace detail

class Schedule {
 public:
  Schedule(std::vector<ScheduleKnot> knots, std::string name)
      : knots_(std::move(knots)), name_(std::move(name)) {
    validate();
    std::vector<double> s(knots_.size()), a(knots_.size()), b(knots_.size());
    for (std::size_t i = 0; i < knots_.size(); ++i) {
      s[i] = knots_[i].s;
      a[i] = knots_[i].A;
      b[i] = knots_[i].B;
    }
    slope_a_ = detail::pchip_slopes(s, a);
    slope_b_ = detail::pchip_slopes(s, b);
  }

  SchedulePoint evaluate(double s) const {
    if (!(s >= 0.0 && s <= 1.0))
      throw validation_error("schedule: s out of [0,1]: " + std::to_string(s));
    // exact at knots, binary-search the interval otherwise
    std::size_t lo = 0, hi = knots_.size() - 1;
    if (s == knots_[hi].s) return {knots_[hi].A, knots_[hi].B};
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (knots_[mid].s <= s)
        lo = mid;
      else
        hi = mid;
    }
    if (s == knots_[lo].s) return {knots_[lo].A, knots_[lo].B};
    const auto& k0 = knots_[lo];
    const auto& k1 = knots_[hi];
    return {detail::hermite(k0.s, k1.s, k0.A, k1.A, slope_a_[lo], slope_a_[hi], s),
            detail::hermite(k0.s, k1.s, k0.B, k1.B, slope_b_[lo], slope_b_[hi], s)};
  }

  // d/ds of the interpolants; piecewise smooth, one-sided at knots.
  SchedulePoint derivative(double s) const {
    if (!(s >= 0.0 && s <= 1.0))
      throw validation_error("schedule: s out of [0,1]: " + std::to_string(s));
    std::size_t lo = 0, hi = knots_.size() - 1;
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (knots_[mid].s <= s)
        lo = mid;
      else
        hi = mid;
    }
    const auto& k0 = knots_[lo];
    const auto& k1 = knots_[hi];
    return {
        detail::hermite_slope(k0.s, k1.s, k0.A, k1.A, slope_a_[lo], slope_a_[hi], s),
        detail::hermite_slope(k0.s, k1.s, k0.B, k1.B, slope_b_[lo], slope_b_[hi], s)};
  }

  const std::vector<ScheduleKnot>& knots() const { return knots_; }
  const std::string& name() const { return name_; }

 private:
  void validate() const {
    if (knots_.size() < 2)
      throw validation_error("schedule: needs at least two knots");
    for (std::size_t i = 0; i < knots_.size(); ++i) {
      const auto& k = knots_[i];
      if (!std::isfinite(k.s) || !std::isfinite(k.A) || !std::isfinite(k.B))
        throw validation_error("schedule row " + std::to_string(i) + ": non-finite value");
      if (k.s < 0.0 || k.s > 1.0)
        throw validation_error("schedule row " + std::to_string(i) + ": s outside [0,1]");
      if (i > 0) {
        if (k.s <= knots_[i - 1].s)
          throw validation_error("schedule row " + std::to_string(i) +
                                 ": s values must be strictly increasing");
        if (k.A > knots_[i - 1].A)
          throw validation_error("schedule row " + std::to_string(i) +
                                 ": A must be non-increasing");
        if (k.B < knots_[i - 1].B)
          throw validation_error("schedule row " + std::to_string(i) +
                                 ": B must be non-decreasing");
      }
    }
    if (knots_.front().s != 0.0)
      throw validation_error("schedule: first knot must be at s = 0");
    if (knots_.back().s != 1.0)
      throw validation_error("schedule: last knot must be at s = 1");
    if (knots_.back().A < 0.0 || knots_.front().B < 0.0)
      throw validation_error("schedule: A(1) and B(0) must be >= 0");
    if (!(knots_.front().A > knots_.front().B))
      throw validation_error("schedule: requires A(0) > B(0)");
    if (!(knots_.back().B > knots_.back().A))
      throw validation_error("schedule: requires B(1) > A(1)");
  }

  std::vector<ScheduleKnot> knots_;
  std::vector<double> slope_a_, slope_b_;
  std::string name_;
};

// Built-in knot table. Synthetic: roughly exponential A decay with a monotone
// B ramp at superconducting-annealer energy scales, not measured hardware
// curves; the name marks it so in all output metadata.
inline Schedule default_schedule() {
  static constexpr double kA[] = {8.0, 6.0, 4.4,  3.1, 2.1, 1.3,
                                  0.75, 0.38, 0.16, 0.05, 0.0};
  static constexpr double kB[] = {0.0, 0.3, 0.8, 1.6, 2.6, 3.9,
                                  5.4, 7.2, 9.2, 11.5, 14.0};
  std::vector<ScheduleKnot> knots;
  for (int i = 0; i <= 10; ++i)
    knots.push_back({i / 10.0, kA[i], kB[i]});
  return Schedule(std::move(knots), "builtin-synthetic-v1");
}

// CSV with header "s,A_GHz,B_GHz". Saving writes round-trip-exact doubles
// in a fixed format, so save(load(f)) is idempotent byte-wise.
inline Schedule load_schedule_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open schedule file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "s,A_GHz,B_GHz")
    throw validation_error("schedule CSV: expected header 's,A_GHz,B_GHz'");
  std::vector<ScheduleKnot> knots;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ScheduleKnot k;
    char c1, c2;
    if (!(ss >> k.s >> c1 >> k.A >> c2 >> k.B) || c1 != ',' || c2 != ',')
      throw validation_error("schedule CSV row " + std::to_string(row) +
                             ": expected 's,A,B'");
    knots.push_back(k);
  }
  try {
    return Schedule(std::move(knots), path);
  } catch (const validation_error& e) {
    throw validation_error(std::string(e.what()) + " (file " + path + ")");
  }
}

inline void save_schedule_csv(const Schedule& sched, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot open for writing: " + path);
  out << "s,A_GHz,B_GHz\n";
  char buf[128];
  for (const auto& k : sched.knots()) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", k.s, k.A, k.B);
    out << buf;
  }
}

// Resolves the CLI convention "--schedule <path|default>".
inline Schedule resolve_schedule(const std::string& spec_string) {
  if (spec_string.empty() || spec_string == "default") return default_schedule();
  return load_schedule_csv(spec_string);
}

}  // namespace qa
