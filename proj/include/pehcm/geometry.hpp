#pragma once

// Poincaré-ball primitives in double precision.
//
// The ball of curvature c is the open set { z : c·|z|² < 1 }. Every op that
// produces a point clips it to the shell |z| ≤ (1 − kBallEps)/√c so that the
// atanh/asinh arguments downstream stay finite.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "pehcm/errors.hpp"

namespace pehcm {

using Vector = Eigen::VectorXd;

inline constexpr double kBallEps = 1e-5;

/// Counts calls into hyperbolic code paths. The Euclidean ablation asserts
/// this stays at zero.
inline std::atomic<std::uint64_t>& hyperbolic_op_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

namespace detail {
inline void count_hyperbolic_op() {
  hyperbolic_op_counter().fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

class Curvature {
 public:
  explicit Curvature(double c) : c_(c) {
    if (!(c > 0.0) || !std::isfinite(c)) {
      throw InvalidInput("curvature must be a finite positive number, got " + std::to_string(c));
    }
  }
  double value() const noexcept { return c_; }
  double sqrt_c() const noexcept { return std::sqrt(c_); }
  /// Largest admissible norm after clipping.
  double max_norm() const noexcept { return (1.0 - kBallEps) / std::sqrt(c_); }

  friend bool operator==(const Curvature&, const Curvature&) = default;

 private:
  double c_;
};

class PoincarePoint {
 public:
  PoincarePoint(Vector coords, Curvature c) : coords_(std::move(coords)), c_(c) {}

  static PoincarePoint origin(Eigen::Index dim, Curvature c) {
    return PoincarePoint(Vector::Zero(dim), c);
  }

  const Vector& coords() const noexcept { return coords_; }
  Curvature curvature() const noexcept { return c_; }
  Eigen::Index dim() const noexcept { return coords_.size(); }
  double norm() const { return coords_.norm(); }

  PoincarePoint operator-() const { return PoincarePoint(-coords_, c_); }

 private:
  Vector coords_;
  Curvature c_;
};

inline void require_finite(const Vector& x, const char* what) {
  if (x.size() == 0) throw InvalidInput(std::string(what) + ": empty vector");
  if (!x.allFinite()) throw InvalidInput(std::string(what) + ": non-finite component");
}

inline PoincarePoint clip_to_ball(Vector z, Curvature c) {
  const double n = z.norm();
  const double limit = c.max_norm();
  if (c.value() * n * n >= (1.0 - kBallEps) * (1.0 - kBallEps) && n > 0.0) {
    z *= limit / n;
  }
  return PoincarePoint(std::move(z), c);
}

namespace detail {

// tanh(u)/u with u = √c·r, and its r-derivative divided by r.
struct ExpScale {
  double g;        // tanh(u)/u
  double dg_over_r;  // g'(r)/r
};

inline ExpScale exp_scale(double r, Curvature c) {
  const double cv = c.value();
  const double u = c.sqrt_c() * r;
  ExpScale s{};
  if (r < 1e-7) {
    s.g = 1.0 - u * u / 3.0;
  } else {
    s.g = std::tanh(u) / u;
  }
  if (u < 1e-2) {
    const double u2 = u * u;
    s.dg_over_r = cv * (-2.0 / 3.0 + 8.0 * u2 / 15.0 - 34.0 * u2 * u2 / 105.0);
  } else {
    const double t = std::tanh(u);
    const double sech2 = 1.0 - t * t;
    s.dg_over_r = cv * (u * sech2 - t) / (u * u * u);
  }
  return s;
}

}  // namespace detail

/// z = x·tanh(√c|x|)/(√c|x|), clipped to the ball shell.
inline PoincarePoint exp_map(const Vector& x, Curvature c) {
  require_finite(x, "exp_map");
  detail::count_hyperbolic_op();
  const auto s = detail::exp_scale(x.norm(), c);
  return clip_to_ball(x * s.g, c);
}

/// Vector-Jacobian product of exp_map (including the clip branch).
inline Vector exp_map_vjp(const Vector& x, Curvature c, const Vector& z_bar) {
  detail::count_hyperbolic_op();
  const double r = x.norm();
  const auto s = detail::exp_scale(r, c);
  const double zn = s.g * r;
  if (c.value() * zn * zn >= (1.0 - kBallEps) * (1.0 - kBallEps) && r > 0.0) {
    // z = R·x/|x|
    const double R = c.max_norm();
    const Vector xh = x / r;
    return (R / r) * (z_bar - xh * xh.dot(z_bar));
  }
  return s.g * z_bar + (s.dg_over_r * x.dot(z_bar)) * x;
}

namespace detail {

inline void require_same_curvature(const PoincarePoint& u, const PoincarePoint& v, const char* op) {
  if (!(u.curvature() == v.curvature())) {
    throw ContractError(std::string(op) + ": curvature mismatch");
  }
  if (u.dim() != v.dim()) {
    throw ContractError(std::string(op) + ": dimension mismatch");
  }
}

struct MobiusParts {
  double A, B, D;
  Vector raw;  // (A u + B v)/D before clipping
};

inline MobiusParts mobius_parts(const Vector& u, const Vector& v, double c) {
  const double uv = u.dot(v);
  const double uu = u.squaredNorm();
  const double vv = v.squaredNorm();
  MobiusParts p;
  p.A = 1.0 + 2.0 * c * uv + c * vv;
  p.B = 1.0 - c * uu;
  p.D = 1.0 + 2.0 * c * uv + c * c * uu * vv;
  p.raw = (p.A * u + p.B * v) / p.D;
  return p;
}

}  // namespace detail

inline PoincarePoint mobius_add(const PoincarePoint& u, const PoincarePoint& v) {
  detail::require_same_curvature(u, v, "mobius_add");
  detail::count_hyperbolic_op();
  auto parts = detail::mobius_parts(u.coords(), v.coords(), u.curvature().value());
  return clip_to_ball(std::move(parts.raw), u.curvature());
}

/// Gradients of mobius_add(u, v) with respect to u and v, given m_bar.
struct MobiusVjp {
  Vector u_bar;
  Vector v_bar;
};

inline MobiusVjp mobius_add_vjp(const Vector& u, const Vector& v, Curvature curv, const Vector& m_bar_in) {
  detail::count_hyperbolic_op();
  const double c = curv.value();
  const auto p = detail::mobius_parts(u, v, c);
  const double rn = p.raw.norm();
  Vector m_bar = m_bar_in;
  if (c * rn * rn >= (1.0 - kBallEps) * (1.0 - kBallEps) && rn > 0.0) {
    const Vector mh = p.raw / rn;
    m_bar = (curv.max_norm() / rn) * (m_bar_in - mh * mh.dot(m_bar_in));
  }
  const double uu = u.squaredNorm();
  const double vv = v.squaredNorm();
  const Vector n_bar = m_bar / p.D;
  const double d_bar = -m_bar.dot(p.raw) / p.D;
  const double a_bar = n_bar.dot(u);
  const double b_bar = n_bar.dot(v);

  const double uv_bar = 2.0 * c * a_bar + 2.0 * c * d_bar;
  const double vv_bar = c * a_bar + c * c * uu * d_bar;
  const double uu_bar = -c * b_bar + c * c * vv * d_bar;

  MobiusVjp g;
  g.u_bar = p.A * n_bar + uv_bar * v + 2.0 * uu_bar * u;
  g.v_bar = p.B * n_bar + uv_bar * u + 2.0 * vv_bar * v;
  return g;
}

/// Geodesic distance (2/√c)·atanh(√c·|(−u) ⊕ v|).
inline double poincare_distance(const PoincarePoint& u, const PoincarePoint& v) {
  detail::require_same_curvature(u, v, "poincare_distance");
  detail::count_hyperbolic_op();
  const double sc = u.curvature().sqrt_c();
  const PoincarePoint m = mobius_add(-u, v);
  return 2.0 / sc * std::atanh(sc * m.norm());
}

/// Distance from z to the hyperbolic hyperplane through p with normal a.
inline double hyperplane_distance(const PoincarePoint& z, const PoincarePoint& p, const Vector& a) {
  detail::require_same_curvature(z, p, "hyperplane_distance");
  if (a.size() != z.dim()) throw ContractError("hyperplane_distance: normal dimension mismatch");
  const double an = a.norm();
  if (!(an > 0.0)) throw DegenerateHyperplane("hyperplane_distance: zero normal vector");
  detail::count_hyperbolic_op();
  const Curvature c = z.curvature();
  const double sc = c.sqrt_c();
  const PoincarePoint m = mobius_add(-p, z);
  const double mm = m.coords().squaredNorm();
  const double arg = 2.0 * sc * std::abs(m.coords().dot(a)) / ((1.0 - c.value() * mm) * an);
  return std::asinh(arg) / sc;
}

}  // namespace pehcm
