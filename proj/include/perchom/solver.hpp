#pragma once

// Linear algebra on cluster graphs: Laplacian application, preconditioned
// conjugate gradients (diagonal or geometric two-grid), Dirichlet solves on
// the reduced SPD system, singular-consistent solves on the full Laplacian,
// Green's function columns, the smallest nonzero eigenvalue, and a dense
// direct oracle for small instances.
//
// Conventions: the quadratic form is E(u) = sum over unordered edges of
// (u(x)-u(y))^2 = u^T A u with A = deg - adjacency; the operator of the
// paper is L = -A, i.e. Lu(x) = sum_{y~x} (u(y)-u(x)).

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <vector>

#include "perchom/graph.hpp"
#include "perchom/rng.hpp"

namespace perchom {

using Mask = std::vector<uint8_t>;
using Field = std::vector<double>;

inline Mask boundary_to_free(const Mask& boundary) {
  Mask free(boundary.size());
  for (size_t i = 0; i < boundary.size(); ++i) free[i] = !boundary[i];
  return free;
}

template <int D>
Field apply_laplacian(const Graph<D>& g, const Field& u) {
  Field out(g.n());
  for (int64_t v = 0; v < g.n(); ++v) {
    double s = -double(g.degree(v)) * u[v];
    for (uint32_t w : g.neighbors(v)) s += u[w];
    out[v] = s;
  }
  return out;
}

template <int D>
double energy(const Graph<D>& g, const Field& u) {
  double s = 0;
  for (int64_t v = 0; v < g.n(); ++v)
    for (uint32_t w : g.neighbors(v))
      if (w > v) {
        const double d = u[v] - u[w];
        s += d * d;
      }
  return s;
}

template <int D>
double edge_dot(const Graph<D>& g, const Field& u, const Field& v) {
  double s = 0;
  for (int64_t x = 0; x < g.n(); ++x)
    for (uint32_t y : g.neighbors(x))
      if (y > x) s += (u[x] - u[y]) * (v[x] - v[y]);
  return s;
}

inline double vec_dot(const Field& a, const Field& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double vec_mean(const Field& a) {
  double s = 0;
  for (double x : a) s += x;
  return a.empty() ? 0.0 : s / double(a.size());
}

inline void vec_shift(Field& a, double c) {
  for (double& x : a) x += c;
}

struct SolveStats {
  int64_t iterations = 0;
  double rel_residual = 0;
  double seconds = 0;
  bool converged = false;
};

struct SolverOptions {
  double tol = 1e-10;
  int64_t max_iter = 0;     // 0: use the 50*sqrt(n) default cap
  int twogrid_from = 4000;  // use the two-grid preconditioner above this size
  int64_t agg_side = 9;     // aggregate block side for the two-grid coarse space
};

class SingularSystemError : public std::runtime_error {
 public:
  explicit SingularSystemError(const std::string& what) : std::runtime_error(what) {}
};

class ConvergenceError : public std::runtime_error {
 public:
  explicit ConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

// Geometric aggregation preconditioner: vertices are grouped by cubic blocks
// of side agg_side, the coarse operator is the Galerkin product with the
// piecewise-constant prolongation, and one Jacobi sweep smooths on each side
// of the coarse correction (a symmetric V(1,1) cycle, valid inside CG).
template <int D>
class TwoGrid {
 public:
  TwoGrid(const Graph<D>& g, const Mask& free, const Field& invdiag, int64_t agg_side,
          bool pin_coarse)
      : invdiag_(invdiag) {
    const int64_t n = g.n();
    Vec<D> lo = g.pts.empty() ? Vec<D>{} : g.pts[0];
    Vec<D> hi = lo;
    for (const auto& x : g.pts)
      for (int i = 0; i < D; ++i) {
        lo[i] = std::min(lo[i], x[i]);
        hi[i] = std::max(hi[i], x[i]);
      }
    IVec<D> nb{};
    IVec<D> base{};
    for (int i = 0; i < D; ++i) {
      base[i] = int64_t(std::floor(lo[i]));
      nb[i] = (int64_t(std::floor(hi[i])) - base[i]) / agg_side + 1;
    }
    int64_t nblocks = 1;
    for (int i = 0; i < D; ++i) nblocks *= nb[i];
    std::vector<int32_t> block_to_agg(nblocks, -1);
    agg_.assign(n, -1);
    nagg_ = 0;
    for (int64_t v = 0; v < n; ++v) {
      if (!free.empty() && !free[v]) continue;
      int64_t id = 0;
      for (int i = 0; i < D; ++i) {
        int64_t c = (int64_t(std::floor(g.pts[v][i])) - base[i]) / agg_side;
        id = id * nb[i] + c;
      }
      if (block_to_agg[id] < 0) block_to_agg[id] = nagg_++;
      agg_[v] = block_to_agg[id];
    }
    // Galerkin coarse matrix P^T A P over the free vertices
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<double> diag(nagg_, 0.0);
    for (int64_t v = 0; v < n; ++v) {
      if (agg_[v] < 0) continue;
      for (uint32_t w : g.neighbors(v)) {
        if (!free.empty() && !free[w]) {
          diag[agg_[v]] += 1.0;  // edge to eliminated boundary keeps its degree
          continue;
        }
        if (agg_[w] == agg_[v]) continue;
        diag[agg_[v]] += 1.0;
        if (w > v) {
          trip.emplace_back(agg_[v], agg_[w], -1.0);
          trip.emplace_back(agg_[w], agg_[v], -1.0);
        }
      }
    }
    pinned_ = pin_coarse && nagg_ > 0;
    for (int32_t a = 0; a < nagg_; ++a) {
      double d = diag[a];
      if (pinned_ && a == 0) d += 1.0;  // ground one aggregate of a singular coarse system
      trip.emplace_back(a, a, d);
    }
    Eigen::SparseMatrix<double> Ac(nagg_, nagg_);
    Ac.setFromTriplets(trip.begin(), trip.end());
    coarse_.compute(Ac);
    if (coarse_.info() != Eigen::Success)
      throw SingularSystemError("two-grid coarse factorization failed");
  }

  // z = M^{-1} r for the symmetric V(1,1) cycle
  void apply(const std::function<void(const Field&, Field&)>& amul, const Field& r,
             Field& z, Field& scratch1, Field& scratch2) const {
    const int64_t n = int64_t(r.size());
    constexpr double omega = 0.7;
    for (int64_t v = 0; v < n; ++v) z[v] = omega * invdiag_[v] * r[v];
    amul(z, scratch1);
    for (int64_t v = 0; v < n; ++v) scratch1[v] = r[v] - scratch1[v];
    Eigen::VectorXd rc = Eigen::VectorXd::Zero(nagg_);
    for (int64_t v = 0; v < n; ++v)
      if (agg_[v] >= 0) rc[agg_[v]] += scratch1[v];
    Eigen::VectorXd zc = coarse_.solve(rc);
    for (int64_t v = 0; v < n; ++v)
      if (agg_[v] >= 0) z[v] += zc[agg_[v]];
    amul(z, scratch2);
    for (int64_t v = 0; v < n; ++v) z[v] += omega * invdiag_[v] * (r[v] - scratch2[v]);
  }

 private:
  Field invdiag_;
  std::vector<int32_t> agg_;
  int32_t nagg_ = 0;
  bool pinned_ = false;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> coarse_;
};

// Preconditioned CG with optional projection (applied to keep iterates in a
// constrained subspace, e.g. mean-zero for singular-consistent systems).
inline SolveStats pcg(const std::function<void(const Field&, Field&)>& amul,
                      const std::function<void(const Field&, Field&)>& prec,
                      const std::function<void(Field&)>& project, const Field& b,
                      Field& x, double tol, int64_t max_iter) {
  const auto t0 = std::chrono::steady_clock::now();
  const int64_t n = int64_t(b.size());
  Field r(n), z(n), p(n), ap(n);
  amul(x, ap);
  for (int64_t i = 0; i < n; ++i) r[i] = b[i] - ap[i];
  if (project) project(r);
  const double bnorm = std::sqrt(vec_dot(b, b));
  const double stop = tol * (bnorm > 0 ? bnorm : 1.0);
  SolveStats stats;
  double rnorm = std::sqrt(vec_dot(r, r));
  if (rnorm <= stop) {
    stats.converged = true;
    stats.rel_residual = bnorm > 0 ? rnorm / bnorm : rnorm;
    return stats;
  }
  prec(r, z);
  if (project) project(z);
  p = z;
  double rz = vec_dot(r, z);
  for (int64_t it = 1; it <= max_iter; ++it) {
    amul(p, ap);
    const double pap = vec_dot(p, ap);
    if (!(pap > 0)) throw SingularSystemError("indefinite or singular operator in cg");
    const double alpha = rz / pap;
    for (int64_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    if (project) project(r);
    rnorm = std::sqrt(vec_dot(r, r));
    stats.iterations = it;
    if (rnorm <= stop) {
      stats.converged = true;
      break;
    }
    prec(r, z);
    if (project) project(z);
    const double rz_new = vec_dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (int64_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  stats.rel_residual = bnorm > 0 ? rnorm / bnorm : rnorm;
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!stats.converged)
    throw ConvergenceError("cg failed to reach tolerance " + std::to_string(tol) +
                           " (residual " + std::to_string(stats.rel_residual) + ")");
  return stats;
}

inline int64_t iter_cap(const SolverOptions& opts, int64_t n) {
  return opts.max_iter > 0 ? opts.max_iter
                           : int64_t(50.0 * std::sqrt(double(std::max<int64_t>(n, 1)))) + 100;
}

}  // namespace detail

// Solves L u = f at free vertices with u = boundary_values on the boundary
// mask, by CG on the reduced SPD system. boundary_values and f are full
// length; f may be empty (treated as zero).
template <int D>
std::pair<Field, SolveStats> solve_dirichlet(const Graph<D>& g, const Mask& boundary,
                                             const Field& boundary_values, const Field& f,
                                             const SolverOptions& opts = {}) {
  const int64_t n = g.n();
  // every free component must touch the boundary, otherwise the reduced
  // system is singular; detect by union-find over free vertices
  {
    std::vector<uint32_t> parent(n);
    for (int64_t v = 0; v < n; ++v) parent[v] = uint32_t(v);
    auto find = [&](uint32_t v) {
      while (parent[v] != v) {
        parent[v] = parent[parent[v]];
        v = parent[v];
      }
      return v;
    };
    for (int64_t v = 0; v < n; ++v) {
      if (boundary[v]) continue;
      for (uint32_t w : g.neighbors(v)) {
        if (boundary[w]) continue;
        const uint32_t a = find(uint32_t(v)), b2 = find(w);
        if (a != b2) parent[std::max(a, b2)] = std::min(a, b2);
      }
    }
    std::vector<uint8_t> touches(n, 0);
    for (int64_t v = 0; v < n; ++v) {
      if (boundary[v]) continue;
      for (uint32_t w : g.neighbors(v))
        if (boundary[w]) touches[find(uint32_t(v))] = 1;
    }
    for (int64_t v = 0; v < n; ++v)
      if (!boundary[v] && !touches[find(uint32_t(v))])
        throw SingularSystemError("free component containing vertex " + std::to_string(v) +
                                  " has no boundary vertex");
  }

  Field x(n, 0.0), b(n, 0.0);
  for (int64_t v = 0; v < n; ++v) {
    if (boundary[v]) continue;
    double rhs = f.empty() ? 0.0 : -f[v];
    for (uint32_t w : g.neighbors(v))
      if (boundary[w]) rhs += boundary_values[w];
    b[v] = rhs;
  }

  auto amul = [&](const Field& u, Field& out) {
    for (int64_t v = 0; v < n; ++v) {
      if (boundary[v]) {
        out[v] = 0;
        continue;
      }
      double s = double(g.degree(v)) * u[v];
      for (uint32_t w : g.neighbors(v))
        if (!boundary[w]) s -= u[w];
      out[v] = s;
    }
  };

  Field invdiag(n, 0.0);
  for (int64_t v = 0; v < n; ++v)
    if (!boundary[v] && g.degree(v) > 0) invdiag[v] = 1.0 / double(g.degree(v));

  SolveStats stats;
  if (n > opts.twogrid_from) {
    detail::TwoGrid<D> tg(g, boundary_to_free(boundary), invdiag, opts.agg_side, false);
    Field s1(n), s2(n);
    auto prec = [&](const Field& r, Field& z) { tg.apply(amul, r, z, s1, s2); };
    stats = detail::pcg(amul, prec, nullptr, b, x, opts.tol, detail::iter_cap(opts, n));
  } else {
    auto prec = [&](const Field& r, Field& z) {
      for (int64_t v = 0; v < n; ++v) z[v] = r[v] * invdiag[v];
    };
    stats = detail::pcg(amul, prec, nullptr, b, x, opts.tol, detail::iter_cap(opts, n));
  }
  for (int64_t v = 0; v < n; ++v)
    if (boundary[v]) x[v] = boundary_values[v];
  return {std::move(x), stats};
}

// Solves A u = b on a connected graph with b orthogonal to constants;
// returns the mean-zero solution.
template <int D>
std::pair<Field, SolveStats> solve_singular(const Graph<D>& g, const Field& b,
                                            const SolverOptions& opts = {}) {
  const int64_t n = g.n();
  const double bmean = vec_mean(b);
  const double bscale = std::sqrt(vec_dot(b, b));
  if (std::abs(bmean) * double(n) > 1e-8 * (bscale > 0 ? bscale : 1.0) * std::sqrt(double(n)))
    throw SingularSystemError("right-hand side not orthogonal to constants");

  auto amul = [&](const Field& u, Field& out) {
    for (int64_t v = 0; v < n; ++v) {
      double s = double(g.degree(v)) * u[v];
      for (uint32_t w : g.neighbors(v)) s -= u[w];
      out[v] = s;
    }
  };
  auto project = [&](Field& u) { vec_shift(u, -vec_mean(u)); };

  Field invdiag(n, 0.0);
  for (int64_t v = 0; v < n; ++v)
    if (g.degree(v) > 0) invdiag[v] = 1.0 / double(g.degree(v));
    else throw SingularSystemError("isolated vertex in singular solve");

  Field x(n, 0.0), bproj = b;
  project(bproj);
  SolveStats stats;
  if (n > opts.twogrid_from) {
    detail::TwoGrid<D> tg(g, Mask{}, invdiag, opts.agg_side, true);
    Field s1(n), s2(n);
    auto prec = [&](const Field& r, Field& z) { tg.apply(amul, r, z, s1, s2); };
    stats = detail::pcg(amul, prec, project, bproj, x, opts.tol, detail::iter_cap(opts, n));
  } else {
    auto prec = [&](const Field& r, Field& z) {
      for (int64_t v = 0; v < n; ++v) z[v] = r[v] * invdiag[v];
    };
    stats = detail::pcg(amul, prec, project, bproj, x, opts.tol, detail::iter_cap(opts, n));
  }
  project(x);
  return {std::move(x), stats};
}

// Column of the finite-volume Green's function: L G = delta_x - 1/n,
// mean-zero. The representation u = sum_z G(.,z) f(z) then reproduces
// mean-zero right-hand sides.
template <int D>
std::pair<Field, SolveStats> greens_column(const Graph<D>& g, int64_t x,
                                           const SolverOptions& opts = {}) {
  if (x < 0 || x >= g.n()) throw std::invalid_argument("source vertex out of range");
  const int64_t n = g.n();
  Field b(n, 1.0 / double(n));  // A G = 1/n - delta since A = -L
  b[x] -= 1.0;
  return solve_singular<D>(g, b, opts);
}

// A-orthogonal projection of the target onto functions harmonic on
// interior_set, i.e. the harmonic extension of the target's values from the
// complement; mean-zero normalized.
template <int D>
std::pair<Field, SolveStats> harmonic_projection(const Graph<D>& g, const Field& target,
                                                 const Mask& interior,
                                                 const SolverOptions& opts = {}) {
  bool any_interior = false, all_interior = true;
  for (uint8_t m : interior) {
    any_interior |= m;
    all_interior &= bool(m);
  }
  if (!any_interior) {
    Field u = target;
    vec_shift(u, -vec_mean(u));
    return {std::move(u), SolveStats{}};
  }
  if (all_interior)
    throw SingularSystemError("interior covers the whole cluster; only constants are harmonic");
  Mask boundary(g.n());
  for (int64_t v = 0; v < g.n(); ++v) boundary[v] = !interior[v];
  auto [u, stats] = solve_dirichlet<D>(g, boundary, target, {}, opts);
  vec_shift(u, -vec_mean(u));
  return {std::move(u), stats};
}

// Vertices whose unit ball lies inside the box (the default reading of the
// harmonic-comparison class; see harmonic_projection).
template <int D>
Mask unit_ball_interior_mask(const Box<D>& box, const std::type_identity_t<std::vector<Vec<D>>>& pts) {
  Mask m(pts.size(), 0);
  for (size_t p = 0; p < pts.size(); ++p) {
    bool in = true;
    for (int i = 0; i < D; ++i)
      in = in && pts[p][i] - box.lo[i] >= 1.0 && box.hi(i) - pts[p][i] >= 1.0;
    m[p] = in;
  }
  return m;
}

// Dense direct oracle for small clusters.
template <int D>
Field dense_solve_dirichlet(const Graph<D>& g, const Mask& boundary,
                            const Field& boundary_values, const Field& f) {
  const int64_t n = g.n();
  if (n > 4000) throw std::invalid_argument("dense oracle limited to small clusters");
  std::vector<int64_t> idx(n, -1);
  int64_t nf = 0;
  for (int64_t v = 0; v < n; ++v)
    if (!boundary[v]) idx[v] = nf++;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(nf, nf);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(nf);
  for (int64_t v = 0; v < n; ++v) {
    if (boundary[v]) continue;
    A(idx[v], idx[v]) = double(g.degree(v));
    b[idx[v]] = f.empty() ? 0.0 : -f[v];
    for (uint32_t w : g.neighbors(v)) {
      if (boundary[w])
        b[idx[v]] += boundary_values[w];
      else
        A(idx[v], idx[w]) -= 1.0;
    }
  }
  Eigen::VectorXd xf = A.ldlt().solve(b);
  Field x(n);
  for (int64_t v = 0; v < n; ++v) x[v] = boundary[v] ? boundary_values[v] : xf[idx[v]];
  return x;
}

// Smallest nonzero eigenvalue of the cluster Laplacian (graph assumed
// connected): dense for small clusters, inverse power iteration on the
// mean-zero subspace otherwise.
template <int D>
double smallest_nonzero_eigenvalue(const Graph<D>& g, const SolverOptions& opts = {},
                                   int max_outer = 12, double inner_tol = 1e-8) {
  const int64_t n = g.n();
  if (n < 2) throw std::invalid_argument("need at least two vertices");
  if (n <= 600) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (int64_t v = 0; v < n; ++v) {
      A(v, v) = double(g.degree(v));
      for (uint32_t w : g.neighbors(v)) A(v, w) -= 1.0;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
    return es.eigenvalues()[1];
  }
  SolverOptions sopts = opts;
  sopts.tol = inner_tol;
  Field x(n);
  Stream s(0x5eed, StreamId::test, 0x715, uint64_t(n));
  for (int64_t v = 0; v < n; ++v) x[v] = s.unit() - 0.5;
  vec_shift(x, -vec_mean(x));
  double lambda = 0, prev = -1;
  for (int it = 0; it < max_outer; ++it) {
    const double nrm = std::sqrt(vec_dot(x, x));
    for (double& xv : x) xv /= nrm;
    auto [y, st] = solve_singular<D>(g, x, sopts);
    const double xy = vec_dot(x, y);
    lambda = 1.0 / xy;  // Rayleigh quotient of A^{-1} on the current iterate
    x = std::move(y);
    if (prev > 0 && std::abs(lambda - prev) < 0.02 * lambda) break;
    prev = lambda;
  }
  return lambda;
}

}  // namespace perchom
