#pragma once

// Coarse-graining onto the 3^l block lattice: block membership of cluster
// points, block averages with empty-block inheritance, the lattice pairing
// of the Neumann quantity (evaluated through per-block affine
// representatives, which is what makes the pairing of a linear function
// exactly p.q and the finite-volume identities close at solver precision),
// cluster and lattice norms including variational H^{-1}, the multiscale
// block sum, and solution export helpers.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "perchom/geometry.hpp"
#include "perchom/graph.hpp"
#include "perchom/solver.hpp"

namespace perchom {

// Block partition of a box at block side 3^l together with the membership
// lists of a point set (vertex order of the graph it was built from).
template <int D>
struct CoarseLevel {
  int l = 0;
  BlockGrid<D> grid;
  std::vector<int64_t> block_of;
  std::vector<std::vector<uint32_t>> members;
  int64_t empty_blocks = 0;

  CoarseLevel() = default;
  CoarseLevel(const Box<D>& box, const std::vector<Vec<D>>& pts, int level_l)
      : l(level_l), grid(box, pow3(level_l)) {
    block_of.resize(pts.size());
    members.resize(grid.count());
    for (size_t v = 0; v < pts.size(); ++v) {
      block_of[v] = grid.index_of_point(pts[v]);
      members[block_of[v]].push_back(uint32_t(v));
    }
    for (const auto& m : members)
      if (m.empty()) ++empty_blocks;
  }

  Vec<D> block_center(int64_t b) const {
    const Box<D> bb = grid.block_box(b);
    Vec<D> c;
    for (int i = 0; i < D; ++i) c[i] = bb.lo[i] + 0.5 * double(bb.side);
    return c;
  }
};

// Cluster vertices lying in the boundary-collar blocks (the thickened
// boundary of width 3^l).
template <int D>
Mask collar_mask(const CoarseLevel<D>& cl) {
  Mask m(cl.block_of.size(), 0);
  std::vector<uint8_t> cb(cl.grid.count());
  for (int64_t b = 0; b < cl.grid.count(); ++b) cb[b] = cl.grid.is_collar(b);
  for (size_t v = 0; v < cl.block_of.size(); ++v) m[v] = cb[cl.block_of[v]];
  return m;
}

// Block field: one value per block of a CoarseLevel.
struct CoarseField {
  std::vector<double> value;
  std::vector<uint8_t> inherited;
  int64_t empty_blocks = 0;
};

// Block average of a cluster function; empty blocks inherit the nearest
// nonempty block's value by breadth-first search over block adjacency
// (ties resolved by visit order, which is by ascending block index).
template <int D>
CoarseField coarsen(const CoarseLevel<D>& cl, const Field& u) {
  CoarseField f;
  const int64_t nb = cl.grid.count();
  f.value.assign(nb, 0.0);
  f.inherited.assign(nb, 0);
  std::deque<int64_t> queue;
  for (int64_t b = 0; b < nb; ++b) {
    if (cl.members[b].empty()) {
      f.inherited[b] = 1;
      ++f.empty_blocks;
      continue;
    }
    double s = 0;
    for (uint32_t v : cl.members[b]) s += u[v];
    f.value[b] = s / double(cl.members[b].size());
    queue.push_back(b);
  }
  std::vector<uint8_t> filled(nb, 0);
  for (int64_t b : queue) filled[b] = 1;
  while (!queue.empty()) {
    const int64_t b = queue.front();
    queue.pop_front();
    const IVec<D> c = cl.grid.coords(b);
    for (int i = 0; i < D; ++i)
      for (int s = -1; s <= 1; s += 2) {
        IVec<D> cc = c;
        cc[i] += s;
        if (cc[i] < 0 || cc[i] >= cl.grid.nb) continue;
        const int64_t b2 = cl.grid.index(cc);
        if (filled[b2]) continue;
        filled[b2] = 1;
        f.value[b2] = f.value[b];
        queue.push_back(b2);
      }
  }
  return f;
}

// Coarsening over an arbitrary collection of cells (partition coarsening):
// cell value = average over cluster points in the cell, empties inherit the
// nearest (by adjacency hops) nonempty cell.
template <int D>
CoarseField coarsen_cells(const std::type_identity_t<std::vector<Vec<D>>>& pts, const Field& u,
                          const std::vector<TriadicCube<D>>& cells) {
  CoarseField f;
  const size_t nc = cells.size();
  f.value.assign(nc, 0.0);
  f.inherited.assign(nc, 0);
  std::vector<int64_t> count(nc, 0);
  std::vector<Box<D>> boxes(nc);
  for (size_t c = 0; c < nc; ++c) boxes[c] = cells[c].box();
  for (size_t v = 0; v < pts.size(); ++v)
    for (size_t c = 0; c < nc; ++c)
      if (boxes[c].contains(pts[v])) {
        f.value[c] += u[v];
        ++count[c];
        break;
      }
  std::deque<size_t> queue;
  std::vector<uint8_t> filled(nc, 0);
  for (size_t c = 0; c < nc; ++c) {
    if (count[c] > 0) {
      f.value[c] /= double(count[c]);
      filled[c] = 1;
      queue.push_back(c);
    } else {
      f.inherited[c] = 1;
      ++f.empty_blocks;
    }
  }
  auto touches = [&](size_t a, size_t b) {
    for (int i = 0; i < D; ++i) {
      if (boxes[a].hi(i) < double(boxes[b].lo[i])) return false;
      if (boxes[b].hi(i) < double(boxes[a].lo[i])) return false;
    }
    return true;
  };
  while (!queue.empty()) {
    const size_t c = queue.front();
    queue.pop_front();
    for (size_t c2 = 0; c2 < nc; ++c2) {
      if (filled[c2] || !touches(c, c2)) continue;
      filled[c2] = 1;
      f.value[c2] = f.value[c];
      queue.push_back(c2);
    }
  }
  return f;
}

namespace detail {

// Least-squares affine representative of u on one block: value(x) = a0 +
// beta.(x - block center). Exact for affine u whenever the block's point
// configuration is nondegenerate; degenerate blocks fall back to the plain
// average (beta = 0).
template <int D>
struct BlockFit {
  double a0 = 0;
  Vec<D> beta{};
  bool degenerate = false;
};

template <int D>
Eigen::Matrix<double, D + 1, D + 1> block_moment_matrix(const Graph<D>& g,
                                                        const CoarseLevel<D>& cl, int64_t b) {
  Eigen::Matrix<double, D + 1, D + 1> M = Eigen::Matrix<double, D + 1, D + 1>::Zero();
  const Vec<D> c = cl.block_center(b);
  for (uint32_t v : cl.members[b]) {
    Eigen::Matrix<double, D + 1, 1> r;
    r[0] = 1.0;
    for (int i = 0; i < D; ++i) r[i + 1] = g.pts[v][i] - c[i];
    M += r * r.transpose();
  }
  return M;
}

template <int D>
bool block_degenerate(const Eigen::Matrix<double, D + 1, D + 1>& M, size_t n_members) {
  if (n_members < size_t(D + 1)) return true;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, D + 1, D + 1>> es(M,
                                                                        Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return ev[0] <= 1e-10 * ev[D];
}

template <int D>
BlockFit<D> affine_fit(const Graph<D>& g, const CoarseLevel<D>& cl, int64_t b, const Field& u) {
  BlockFit<D> fit;
  const auto& mem = cl.members[b];
  if (mem.empty()) {
    fit.degenerate = true;
    return fit;
  }
  const auto M = block_moment_matrix(g, cl, b);
  if (block_degenerate<D>(M, mem.size())) {
    fit.degenerate = true;
    double s = 0;
    for (uint32_t v : mem) s += u[v];
    fit.a0 = s / double(mem.size());
    return fit;
  }
  const Vec<D> c = cl.block_center(b);
  Eigen::Matrix<double, D + 1, 1> rhs = Eigen::Matrix<double, D + 1, 1>::Zero();
  for (uint32_t v : mem) {
    Eigen::Matrix<double, D + 1, 1> r;
    r[0] = 1.0;
    for (int i = 0; i < D; ++i) r[i + 1] = g.pts[v][i] - c[i];
    rhs += u[v] * r;
  }
  Eigen::Matrix<double, D + 1, 1> y = M.ldlt().solve(rhs);
  fit.a0 = y[0];
  for (int i = 0; i < D; ++i) fit.beta[i] = y[i + 1];
  return fit;
}

// Outer-normal weights of the unit-lattice boundary of the box, accumulated
// per block as moments against (1, x - block center); the pairing gradient
// and the direct lattice pairing both reduce to these.
template <int D>
std::map<int64_t, Eigen::Matrix<double, D + 1, 1>> boundary_moments(
    const CoarseLevel<D>& cl, const std::type_identity_t<Vec<D>>& q) {
  const LatticeGrid<D> lat(cl.grid.box);
  std::map<int64_t, Eigen::Matrix<double, D + 1, 1>> sb;
  const int64_t n = lat.n;
  int64_t transverse = 1;
  for (int i = 0; i < D - 1; ++i) transverse *= n;
  for (int j = 0; j < D; ++j) {
    if (q[j] == 0.0) continue;
    for (int side = 0; side < 2; ++side) {
      const double w = side ? q[j] : -q[j];
      for (int64_t t = 0; t < transverse; ++t) {
        IVec<D> x;
        int64_t rem = t;
        for (int i = 0; i < D; ++i) {
          if (i == j) continue;
          x[i] = lat.first[i] + rem % n;
          rem /= n;
        }
        x[j] = side ? lat.first[j] + n - 1 : lat.first[j];
        Vec<D> xv;
        for (int i = 0; i < D; ++i) xv[i] = double(x[i]);
        const int64_t b = cl.grid.index_of_point(xv);
        auto& s = sb.try_emplace(b, Eigen::Matrix<double, D + 1, 1>::Zero()).first->second;
        const Vec<D> c = cl.block_center(b);
        s[0] += w;
        for (int i = 0; i < D; ++i) s[i + 1] += w * (xv[i] - c[i]);
      }
    }
  }
  return sb;
}

}  // namespace detail

// Gradient vector of the lattice pairing functional u -> (1-1/size)^{-1}
// sum over nearest-neighbor lattice edges of the box of q.(x-y) times the
// difference of the block affine representatives of u. The vector is
// supported on cluster points of the outermost block layer and is exactly
// orthogonal to constants; paired against a linear function l_p it gives
// |box| p.q exactly, which is what makes the Neumann quantity close the
// finite-volume duality identities.
template <int D>
struct PairingGradient {
  Field chat;
  int64_t degenerate_blocks = 0;
  int64_t empty_blocks = 0;
};

template <int D>
PairingGradient<D> pairing_gradient(const Graph<D>& g, const CoarseLevel<D>& cl,
                                    const std::type_identity_t<Vec<D>>& q) {
  PairingGradient<D> out;
  out.chat.assign(g.n(), 0.0);
  const double pref = 1.0 / (1.0 - 1.0 / double(cl.grid.box.side));
  for (const auto& [b, s] : detail::boundary_moments(cl, q)) {
    const auto& mem = cl.members[b];
    if (mem.empty()) {
      ++out.empty_blocks;
      continue;
    }
    const auto M = detail::block_moment_matrix(g, cl, b);
    if (detail::block_degenerate<D>(M, mem.size())) {
      ++out.degenerate_blocks;
      const double w = pref * s[0] / double(mem.size());
      for (uint32_t v : mem) out.chat[v] += w;
      continue;
    }
    const Eigen::Matrix<double, D + 1, 1> y = M.ldlt().solve(s);
    const Vec<D> c = cl.block_center(b);
    for (uint32_t v : mem) {
      double w = y[0];
      for (int i = 0; i < D; ++i) w += y[i + 1] * (g.pts[v][i] - c[i]);
      out.chat[v] += pref * w;
    }
  }
  return out;
}

// Direct evaluation of the same pairing by explicit summation over lattice
// edges (test oracle for the gradient form; quadratic cost in the side).
template <int D>
double lattice_pairing(const Graph<D>& g, const CoarseLevel<D>& cl,
                       const std::type_identity_t<Vec<D>>& q, const Field& u) {
  const LatticeGrid<D> lat(cl.grid.box);
  std::vector<detail::BlockFit<D>> fits(cl.grid.count());
  for (int64_t b = 0; b < cl.grid.count(); ++b) fits[b] = detail::affine_fit(g, cl, b, u);
  // empty blocks take the inherited plain average so every lattice point has
  // a value; they cannot occur on cubes the pairing is actually used on
  CoarseField cf = coarsen(cl, u);
  auto value_at = [&](const IVec<D>& x) {
    Vec<D> xv;
    for (int i = 0; i < D; ++i) xv[i] = double(x[i]);
    const int64_t b = cl.grid.index_of_point(xv);
    if (cl.members[b].empty()) return cf.value[b];
    const Vec<D> c = cl.block_center(b);
    double w = fits[b].a0;
    for (int i = 0; i < D; ++i) w += fits[b].beta[i] * (xv[i] - c[i]);
    return w;
  };
  double sum = 0;
  const int64_t total = lat.count();
  for (int64_t idx = 0; idx < total; ++idx) {
    const IVec<D> x = lat.point(idx);
    for (int j = 0; j < D; ++j) {
      if (x[j] + 1 >= lat.first[j] + lat.n) continue;
      IVec<D> x2 = x;
      ++x2[j];
      sum += q[j] * (value_at(x2) - value_at(x));
    }
  }
  return sum / (1.0 - 1.0 / double(cl.grid.box.side));
}

// Norms. The averaged norms follow the displayed conventions: L2 averages
// by the box volume, the H1 seminorm uses the ordered double edge sum, and
// H^{-1} is the dual norm of the averaged pairing (f, v) -> (1/|box|) sum
// f v over the H1 unit ball, evaluated exactly through the solve A u_f = f.

inline double l2_avg(double vol, const Field& u) {
  double s = 0;
  for (double x : u) s += x * x;
  return std::sqrt(s / vol);
}

template <int D>
double h1_seminorm(double vol, const Graph<D>& g, const Field& u) {
  return std::sqrt(2.0 * energy(g, u) / vol);
}

// Variational H^{-1} of f over functions vanishing on the boundary mask; if
// the mask is empty the compatibility condition (mean-zero f) is required.
template <int D>
double hminus1_norm(const Box<D>& box, const Graph<D>& g, const Field& f, const Mask& boundary,
                    const SolverOptions& opts = {}) {
  const double vol = box.volume();
  bool any_boundary = false;
  for (uint8_t b : boundary) any_boundary |= b;
  Field uf;
  double pair = 0;
  if (any_boundary) {
    Field negf(g.n());
    for (int64_t v = 0; v < g.n(); ++v) negf[v] = boundary[v] ? 0.0 : -f[v];
    Field zero(g.n(), 0.0);
    auto [u, st] = solve_dirichlet(g, boundary, zero, negf, opts);
    uf = std::move(u);
    for (int64_t v = 0; v < g.n(); ++v)
      if (!boundary[v]) pair += f[v] * uf[v];
  } else {
    auto [u, st] = solve_singular(g, f, opts);
    uf = std::move(u);
    pair = vec_dot(f, uf);
  }
  return std::sqrt(std::max(0.0, pair / (2.0 * vol)));
}

// Lattice norms of block fields (every block carries the same number of
// lattice points, so lattice averages are plain block means).

inline double block_l2_avg(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s / double(v.size()));
}

// Variational H^{-1} of a block field against the 5/7-point block Laplacian
// at mesh width 3^l, Neumann-style (no boundary): requires mean-zero input.
template <int D>
double block_hminus1(const CoarseLevel<D>& cl, const std::vector<double>& f,
                     const SolverOptions& opts = {}) {
  const int64_t nb = cl.grid.count();
  const double h = double(cl.grid.bs);
  double mean = 0;
  for (double x : f) mean += x;
  mean /= double(nb);
  double scale = block_l2_avg(f);
  if (std::abs(mean) > 1e-8 * (scale > 0 ? scale : 1.0))
    throw SingularSystemError("block field not orthogonal to constants");

  auto amul = [&](const Field& u, Field& out) {
    for (int64_t b = 0; b < nb; ++b) {
      const IVec<D> c = cl.grid.coords(b);
      double s = 0;
      for (int i = 0; i < D; ++i)
        for (int d = -1; d <= 1; d += 2) {
          IVec<D> cc = c;
          cc[i] += d;
          if (cc[i] < 0 || cc[i] >= cl.grid.nb) continue;
          s += u[b] - u[cl.grid.index(cc)];
        }
      out[b] = s / (h * h);
    }
  };
  auto project = [&](Field& u) { vec_shift(u, -vec_mean(u)); };
  auto prec = [&](const Field& r, Field& z) { z = r; };
  Field x(nb, 0.0), b0(f.begin(), f.end());
  project(b0);
  detail::pcg(amul, prec, project, b0, x, opts.tol > 0 ? opts.tol : 1e-10,
              10 * nb + 1000);
  double pair = 0;
  for (int64_t b = 0; b < nb; ++b) pair += f[b] * x[b];
  return std::sqrt(std::max(0.0, pair / (2.0 * double(nb))));
}

// Multiscale block sum: sum over scales k = l..m of 3^k times the root mean
// square over level-k supercubes of the average forward block gradient (at
// mesh width 3^l) inside the supercube.
template <int D>
double multiscale_sum(const CoarseLevel<D>& cl, const std::vector<double>& v, int m) {
  const double h = double(cl.grid.bs);
  double total = 0;
  for (int k = cl.l; k <= m; ++k) {
    const int64_t span = pow3(k - cl.l);
    if (span > cl.grid.nb) break;
    const int64_t nsup = cl.grid.nb / span;
    int64_t count_sup = 1;
    for (int i = 0; i < D; ++i) count_sup *= nsup;
    double acc = 0;
    for (int64_t s = 0; s < count_sup; ++s) {
      IVec<D> sc;
      int64_t rem = s;
      for (int i = D - 1; i >= 0; --i) {
        sc[i] = rem % nsup;
        rem /= nsup;
      }
      Vec<D> gsum{};
      std::array<int64_t, D> gcount{};
      int64_t cells = 1;
      for (int i = 0; i < D; ++i) cells *= span;
      for (int64_t c = 0; c < cells; ++c) {
        IVec<D> bc;
        int64_t r2 = c;
        for (int i = D - 1; i >= 0; --i) {
          bc[i] = sc[i] * span + r2 % span;
          r2 /= span;
        }
        const int64_t b = cl.grid.index(bc);
        for (int i = 0; i < D; ++i) {
          IVec<D> fwd = bc;
          ++fwd[i];
          if (fwd[i] >= cl.grid.nb) continue;
          gsum[i] += (v[cl.grid.index(fwd)] - v[b]) / h;
          ++gcount[i];
        }
      }
      double g2 = 0;
      for (int i = 0; i < D; ++i)
        if (gcount[i] > 0) {
          const double gi = gsum[i] / double(gcount[i]);
          g2 += gi * gi;
        }
      acc += g2;
    }
    total += double(pow3(k)) * std::sqrt(acc / double(count_sup));
  }
  return total;
}

// Empirical constant of the block Poincare inequality: max over blocks of
// sum (u - block avg)^2 divided by (3^{2l}/|block|) times the ordered edge
// energy rooted in the block.
template <int D>
double poincare_block_ratio(const Graph<D>& g, const CoarseLevel<D>& cl, const Field& u) {
  const double blockvol = std::pow(double(cl.grid.bs), D);
  const double pref = double(cl.grid.bs) * double(cl.grid.bs) / blockvol;
  double worst = 0;
  for (int64_t b = 0; b < cl.grid.count(); ++b) {
    const auto& mem = cl.members[b];
    if (mem.size() < 2) continue;
    double avg = 0;
    for (uint32_t v : mem) avg += u[v];
    avg /= double(mem.size());
    double lhs = 0;
    for (uint32_t v : mem) lhs += (u[v] - avg) * (u[v] - avg);
    double edge2 = 0;
    for (uint32_t v : mem)
      for (uint32_t w : g.neighbors(v)) edge2 += (u[v] - u[w]) * (u[v] - u[w]);
    if (edge2 == 0) return lhs == 0 ? worst : std::numeric_limits<double>::infinity();
    worst = std::max(worst, lhs / (pref * edge2));
  }
  return worst;
}

// Export helpers.

template <int D>
void write_solution_csv(std::ostream& os, const Graph<D>& g, const Field& u) {
  os << "i";
  const char* axis[] = {"x", "y", "z"};
  for (int i = 0; i < D; ++i) os << ',' << axis[i];
  os << ",value\n";
  char buf[64];
  for (int64_t v = 0; v < g.n(); ++v) {
    os << v;
    for (int i = 0; i < D; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", g.pts[v][i]);
      os << ',' << buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", u[v]);
    os << ',' << buf << '\n';
  }
}

inline nlohmann::json to_json(const SolveStats& s) {
  return {{"iterations", s.iterations},
          {"rel_residual", s.rel_residual},
          {"seconds", s.seconds},
          {"converged", s.converged}};
}

}  // namespace perchom
