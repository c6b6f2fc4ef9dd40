#pragma once

// Coarse-grained variational quantities on triadic cubes: the Dirichlet
// energy density mu, its Neumann-style dual mu_star driven by the lattice
// pairing, the master difference J = mu + mu_star - p.q together with exact
// finite-volume identities (maximizer energy, first variation, quadratic
// response), the coarse matrices they generate, block flux fields, and the
// subadditivity defect between a parent cube and its triadic descendants.

#include <Eigen/Dense>
#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "perchom/cloud.hpp"
#include "perchom/cluster.hpp"
#include "perchom/coarse.hpp"
#include "perchom/geometry.hpp"
#include "perchom/graph.hpp"
#include "perchom/rng.hpp"
#include "perchom/solver.hpp"

namespace perchom {

namespace detail {

template <int D>
std::string cube_tag(const TriadicCube<D>& cube) {
  std::string s = "cube(level=" + std::to_string(cube.level) + ", center=(";
  for (int i = 0; i < D; ++i) {
    if (i) s += ',';
    s += std::to_string(cube.center[i]);
  }
  return s + "))";
}

template <int D>
Field linear_data(const Graph<D>& g, const std::type_identity_t<Vec<D>>& p) {
  Field u(g.n());
  for (int64_t v = 0; v < g.n(); ++v) {
    double s = 0;
    for (int i = 0; i < D; ++i) s += p[i] * g.pts[v][i];
    u[v] = s;
  }
  return u;
}

}  // namespace detail

// One cube prepared for coarse-grained work: dominant-cluster subgraph,
// block partition at level l, collar mask, and the goodness certificate.
// good additionally requires every block to hold at least one cluster point
// so that coarsenings and the pairing see the whole cube.
template <int D>
struct CubeInstance {
  TriadicCube<D> cube;
  int l = 1;
  double theta = 0;
  GoodCubeReport<D> cert;
  bool blocks_nonempty = false;
  bool good = false;
  Graph<D> g;
  CoarseLevel<D> coarse;
  Mask collar;
  double vol = 0;
};

template <int D>
CubeInstance<D> make_instance(const PointCloud<D>& cloud, const TriadicCube<D>& cube, int l,
                              double theta, const GoodnessConfig& cfg = {},
                              const SolverOptions& sopts = {}) {
  if (pow3(l) > cube.side())
    throw std::invalid_argument("coarsening level must be finer than the cube");
  CubeInstance<D> inst;
  inst.cube = cube;
  inst.l = l;
  inst.theta = theta;
  auto cg = build_graph(cloud, cube.box());
  inst.cert = is_good(cg, cube, theta, cfg, sopts);
  inst.g = cluster_subgraph(cg);
  inst.coarse = CoarseLevel<D>(cube.box(), inst.g.pts, l);
  inst.collar = collar_mask(inst.coarse);
  inst.vol = cube.box().volume();
  inst.blocks_nonempty = inst.coarse.empty_blocks == 0;
  inst.good = inst.cert.good && inst.blocks_nonempty;
  return inst;
}

// Value of one coarse-grained quantity on one cube. Off the good event the
// indicator is 0 and the value is 0 by convention; extremal is the
// minimizer (mu) or the mean-zero maximizer (mu_star).
template <int D>
struct EnergyValue {
  TriadicCube<D> cube;
  int l = 1;
  Vec<D> direction{};
  double value = 0;
  uint8_t indicator = 0;
  Field extremal;
  SolveStats stats;
};

// Dirichlet quantity: minimal energy per volume over extensions of the
// linear data p.x from the collar.
template <int D>
EnergyValue<D> mu(const CubeInstance<D>& inst, const std::type_identity_t<Vec<D>>& p,
                  const SolverOptions& opts = {}) {
  EnergyValue<D> out;
  out.cube = inst.cube;
  out.l = inst.l;
  out.direction = p;
  if (!inst.good) return out;
  try {
    auto [v, st] = solve_dirichlet(inst.g, inst.collar, detail::linear_data(inst.g, p),
                                   Field{}, opts);
    out.value = energy(inst.g, v) / inst.vol;
    out.extremal = std::move(v);
    out.stats = st;
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(detail::cube_tag(inst.cube) + ": " + e.what());
  } catch (const SingularSystemError& e) {
    throw SingularSystemError(detail::cube_tag(inst.cube) + ": " + e.what());
  }
  out.indicator = 1;
  return out;
}

// Neumann quantity: the concave problem sup -E(u) + pairing_q(u) per
// volume, solved exactly by 2 A u = chat with chat the pairing gradient.
template <int D>
EnergyValue<D> mu_star(const CubeInstance<D>& inst, const std::type_identity_t<Vec<D>>& q,
                       const SolverOptions& opts = {}) {
  EnergyValue<D> out;
  out.cube = inst.cube;
  out.l = inst.l;
  out.direction = q;
  if (!inst.good) return out;
  auto pg = pairing_gradient(inst.g, inst.coarse, q);
  Field half(inst.g.n());
  for (int64_t v = 0; v < inst.g.n(); ++v) half[v] = 0.5 * pg.chat[v];
  try {
    auto [u, st] = solve_singular(inst.g, half, opts);
    out.value = energy(inst.g, u) / inst.vol;
    out.extremal = std::move(u);
    out.stats = st;
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(detail::cube_tag(inst.cube) + ": " + e.what());
  } catch (const SingularSystemError& e) {
    throw SingularSystemError(detail::cube_tag(inst.cube) + ": " + e.what());
  }
  out.indicator = 1;
  return out;
}

// Coarse matrices of the quadratic forms p -> mu and q -> mu_star assembled
// from the d basis solves: a from the Dirichlet minimizers, astar_inv from
// the Neumann maximizers, astar by inversion. Off the good event all
// matrices are zero with indicator 0.
template <int D>
struct CoarseMatrices {
  TriadicCube<D> cube;
  int l = 1;
  uint8_t indicator = 0;
  Eigen::Matrix<double, D, D> a = Eigen::Matrix<double, D, D>::Zero();
  Eigen::Matrix<double, D, D> astar_inv = Eigen::Matrix<double, D, D>::Zero();
  Eigen::Matrix<double, D, D> astar = Eigen::Matrix<double, D, D>::Zero();
  std::array<Field, D> v;
  std::array<Field, D> u;
  std::array<SolveStats, D> v_stats;
  std::array<SolveStats, D> u_stats;
};

template <int D>
CoarseMatrices<D> assemble_matrices(const CubeInstance<D>& inst, const SolverOptions& opts = {},
                                    bool dirichlet_only = false) {
  CoarseMatrices<D> out;
  out.cube = inst.cube;
  out.l = inst.l;
  if (!inst.good) return out;

  for (int i = 0; i < D; ++i) {
    Vec<D> e{};
    e[i] = 1.0;
    auto mv = mu(inst, e, opts);
    out.v[i] = std::move(mv.extremal);
    out.v_stats[i] = mv.stats;
    if (!dirichlet_only) {
      auto ms = mu_star(inst, e, opts);
      out.u[i] = std::move(ms.extremal);
      out.u_stats[i] = ms.stats;
    }
  }
  for (int i = 0; i < D; ++i)
    for (int j = i; j < D; ++j) {
      out.a(i, j) = out.a(j, i) = 2.0 * edge_dot(inst.g, out.v[i], out.v[j]) / inst.vol;
      if (!dirichlet_only)
        out.astar_inv(i, j) = out.astar_inv(j, i) =
            2.0 * edge_dot(inst.g, out.u[i], out.u[j]) / inst.vol;
    }

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, D, D>> ea(out.a, Eigen::EigenvaluesOnly);
  if (ea.eigenvalues()[0] <= 0.0)
    throw std::runtime_error(detail::cube_tag(inst.cube) +
                             ": Dirichlet matrix not positive definite on a good cube, "
                             "smallest eigenvalue " +
                             std::to_string(ea.eigenvalues()[0]));
  if (!dirichlet_only) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, D, D>> eb(out.astar_inv,
                                                                  Eigen::EigenvaluesOnly);
    if (eb.eigenvalues()[0] <= 0.0)
      throw std::runtime_error(detail::cube_tag(inst.cube) +
                               ": Neumann matrix not positive definite on a good cube, "
                               "smallest eigenvalue " +
                               std::to_string(eb.eigenvalues()[0]));
    out.astar = out.astar_inv.inverse();
  }
  out.indicator = 1;
  return out;
}

// Master quantity J(p, q) = mu + mu_star - p.q with its exact identities
// recorded as residuals: the maximizer-energy identity, the first
// variations against random harmonic probe directions (normalized to unit
// energy per volume), and the quadratic responses of both the master
// functional and the Neumann objective. Residuals are per unit volume.
template <int D>
struct MasterValue {
  TriadicCube<D> cube;
  int l = 1;
  Vec<D> p{};
  Vec<D> q{};
  uint8_t indicator = 0;
  double mu_value = 0;
  double mu_star_value = 0;
  double J = 0;
  double maximizer_energy = 0;  // E(xi)/|box| for xi = u* - v_p
  double energy_identity_rel = 0;
  std::vector<double> first_variation;
  std::vector<double> neumann_first_variation;
  std::vector<double> quadratic_response;
  std::vector<double> neumann_response;
  Field maximizer;
  SolveStats stats_mu;
  SolveStats stats_mu_star;
};

template <int D>
MasterValue<D> master_J(const CubeInstance<D>& inst, const std::type_identity_t<Vec<D>>& p,
                        const std::type_identity_t<Vec<D>>& q, uint64_t probe_seed = 0,
                        int n_probes = 10, const SolverOptions& opts = {}) {
  MasterValue<D> out;
  out.cube = inst.cube;
  out.l = inst.l;
  out.p = p;
  out.q = q;
  if (!inst.good) return out;

  auto mv = mu(inst, p, opts);
  auto ms = mu_star(inst, q, opts);
  out.mu_value = mv.value;
  out.mu_star_value = ms.value;
  out.stats_mu = mv.stats;
  out.stats_mu_star = ms.stats;
  double pq = 0;
  for (int i = 0; i < D; ++i) pq += p[i] * q[i];
  out.J = mv.value + ms.value - pq;

  const Field lp = detail::linear_data(inst.g, p);
  Field xi(inst.g.n());
  for (int64_t v = 0; v < inst.g.n(); ++v) xi[v] = ms.extremal[v] - mv.extremal[v];
  vec_shift(xi, -vec_mean(xi));
  out.maximizer_energy = energy(inst.g, xi) / inst.vol;
  double pscale = 0;
  for (int i = 0; i < D; ++i) pscale += p[i] * p[i] + q[i] * q[i];
  out.energy_identity_rel = std::abs(out.J - out.maximizer_energy) /
                            std::max({std::abs(out.J), out.maximizer_energy, 1e-9 * pscale});

  auto pg = pairing_gradient(inst.g, inst.coarse, q);
  for (int k = 0; k < n_probes; ++k) {
    Stream s(probe_seed, StreamId::test, uint32_t(k), 0x6a);
    Field bc(inst.g.n(), 0.0);
    for (int64_t v = 0; v < inst.g.n(); ++v)
      if (inst.collar[v]) bc[v] = s.normal();
    auto [w, st] = solve_dirichlet(inst.g, inst.collar, bc, Field{}, opts);
    const double ew = energy(inst.g, w);
    if (ew <= 0) continue;
    const double scale = std::sqrt(inst.vol / ew);
    for (double& x : w) x *= scale;

    const double cw = vec_dot(pg.chat, w);
    const double lw = edge_dot(inst.g, lp, w);
    const double xw = edge_dot(inst.g, xi, w);
    const double uw = edge_dot(inst.g, ms.extremal, w);
    out.first_variation.push_back(std::abs(cw - 2.0 * lw - 2.0 * xw) / inst.vol);
    out.neumann_first_variation.push_back(std::abs(cw - 2.0 * uw) / inst.vol);

    // master functional G(w) = (-E(w) - 2 (l_p, w)_A + chat.w)/|box| dips
    // below its maximum by exactly the energy of the mismatch
    const double gw = (-energy(inst.g, w) - 2.0 * lw + cw) / inst.vol;
    Field diff(inst.g.n());
    for (int64_t v = 0; v < inst.g.n(); ++v) diff[v] = w[v] - xi[v];
    out.quadratic_response.push_back(
        std::abs(out.maximizer_energy - gw - energy(inst.g, diff) / inst.vol));

    // Neumann objective evaluated at u* + w drops by exactly E(w)
    Field upw(inst.g.n());
    for (int64_t v = 0; v < inst.g.n(); ++v) upw[v] = ms.extremal[v] + w[v];
    const double obj = -energy(inst.g, upw) + vec_dot(pg.chat, upw);
    out.neumann_response.push_back(
        std::abs(obj - (inst.vol * ms.value - energy(inst.g, w))) / inst.vol);
  }
  out.maximizer = std::move(xi);
  out.indicator = 1;
  return out;
}

// Block flux of a corrected coordinate: per block, the volume-normalized
// ordered sum over edges rooted in the block of (x_j - y_j) times the
// corrected gradient of x_i + phi. With phi the Dirichlet corrector the
// average over blocks reproduces the matrix entry e_j . a e_i exactly.
template <int D>
struct FluxField {
  TriadicCube<D> cube;
  int l = 1;
  int i = 0;
  int j = 0;
  std::vector<double> block_value;
  double cube_average = 0;
};

template <int D>
FluxField<D> coarse_flux(const CubeInstance<D>& inst, int i, int j, const Field& phi) {
  if (int64_t(phi.size()) != inst.g.n())
    throw std::invalid_argument("corrector length does not match the cluster graph");
  FluxField<D> out;
  out.cube = inst.cube;
  out.l = inst.l;
  out.i = i;
  out.j = j;
  const int64_t nb = inst.coarse.grid.count();
  out.block_value.assign(nb, 0.0);
  const double blockvol = std::pow(double(inst.coarse.grid.bs), D);
  for (int64_t b = 0; b < nb; ++b) {
    double s = 0;
    for (uint32_t x : inst.coarse.members[b])
      for (uint32_t y : inst.g.neighbors(x))
        s += (inst.g.pts[x][j] - inst.g.pts[y][j]) *
             (inst.g.pts[x][i] - inst.g.pts[y][i] + phi[x] - phi[y]);
    out.block_value[b] = s / blockvol;
    out.cube_average += out.block_value[b];
  }
  out.cube_average /= double(nb);
  return out;
}

// Subadditivity defect between a parent cube and its level-n descendants:
// parent matrix minus the average of the children's. The sample is rejected
// (accepted = false) unless the parent and every child are good.
template <int D>
struct DefectReport {
  TriadicCube<D> parent;
  int child_level = 0;
  int l = 1;
  bool accepted = false;
  int64_t children = 0;
  int64_t bad_children = 0;
  bool parent_good = false;
  bool dirichlet_only = false;
  Eigen::Matrix<double, D, D> defect_dirichlet = Eigen::Matrix<double, D, D>::Zero();
  Eigen::Matrix<double, D, D> defect_neumann = Eigen::Matrix<double, D, D>::Zero();
  double dirichlet_eig_min = 0, dirichlet_eig_max = 0;
  double neumann_eig_min = 0, neumann_eig_max = 0;
  double bound_dirichlet = 0;  // C 3^{-(n-l)}
  double bound_neumann = 0;    // C 3^{-(n-l)/2}
};

template <int D>
std::vector<TriadicCube<D>> descendant_cubes(const TriadicCube<D>& parent, int level) {
  if (level > parent.level) throw std::invalid_argument("descendant level exceeds the parent");
  const int64_t b = pow3(parent.level - level);
  const int64_t side = pow3(level);
  std::vector<TriadicCube<D>> cubes;
  int64_t total = 1;
  for (int i = 0; i < D; ++i) total *= b;
  for (int64_t k = 0; k < total; ++k) {
    TriadicCube<D> c{level, parent.center};
    int64_t rem = k;
    for (int i = D - 1; i >= 0; --i) {
      c.center[i] += (rem % b - (b - 1) / 2) * side;
      rem /= b;
    }
    cubes.push_back(c);
  }
  return cubes;
}

template <int D>
DefectReport<D> subadditivity_defect(const PointCloud<D>& cloud, const TriadicCube<D>& parent,
                                     int child_level, int l, double theta,
                                     const GoodnessConfig& cfg = {},
                                     const SolverOptions& opts = {},
                                     bool dirichlet_only = false, double bound_constant = 1.0) {
  if (l >= child_level)
    throw std::invalid_argument("children must be coarser than the block level");
  DefectReport<D> out;
  out.parent = parent;
  out.child_level = child_level;
  out.l = l;
  out.dirichlet_only = dirichlet_only;
  const double sep = double(child_level - l);
  out.bound_dirichlet = bound_constant * std::pow(3.0, -sep);
  out.bound_neumann = bound_constant * std::pow(3.0, -sep / 2.0);

  auto pinst = make_instance(cloud, parent, l, theta, cfg, opts);
  out.parent_good = pinst.good;
  const auto children = descendant_cubes(parent, child_level);
  out.children = int64_t(children.size());
  if (!pinst.good) return out;

  std::vector<CoarseMatrices<D>> mats;
  for (const auto& c : children) {
    auto inst = make_instance(cloud, c, l, theta, cfg, opts);
    if (!inst.good) {
      ++out.bad_children;
      continue;
    }
    mats.push_back(assemble_matrices(inst, opts, dirichlet_only));
  }
  if (out.bad_children > 0) return out;

  auto pmat = assemble_matrices(pinst, opts, dirichlet_only);
  Eigen::Matrix<double, D, D> avg_a = Eigen::Matrix<double, D, D>::Zero();
  Eigen::Matrix<double, D, D> avg_b = Eigen::Matrix<double, D, D>::Zero();
  for (const auto& m : mats) {
    avg_a += m.a;
    avg_b += m.astar_inv;
  }
  avg_a /= double(mats.size());
  avg_b /= double(mats.size());
  out.defect_dirichlet = pmat.a - avg_a;
  out.defect_neumann = pmat.astar_inv - avg_b;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, D, D>> ed(out.defect_dirichlet,
                                                                Eigen::EigenvaluesOnly);
  out.dirichlet_eig_min = ed.eigenvalues()[0];
  out.dirichlet_eig_max = ed.eigenvalues()[D - 1];
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, D, D>> en(out.defect_neumann,
                                                                Eigen::EigenvaluesOnly);
  out.neumann_eig_min = en.eigenvalues()[0];
  out.neumann_eig_max = en.eigenvalues()[D - 1];
  out.accepted = true;
  return out;
}

// Serialization.

template <int D>
nlohmann::json to_json(const TriadicCube<D>& c) {
  nlohmann::json center = nlohmann::json::array();
  for (int i = 0; i < D; ++i) center.push_back(c.center[i]);
  return {{"level", c.level}, {"center", center}};
}

template <int D>
nlohmann::json to_json(const CoarseMatrices<D>& m) {
  auto mat = [](const Eigen::Matrix<double, D, D>& a) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < D; ++i) {
      nlohmann::json r = nlohmann::json::array();
      for (int j = 0; j < D; ++j) r.push_back(a(i, j));
      rows.push_back(r);
    }
    return rows;
  };
  return {{"cube", to_json(m.cube)},
          {"l", m.l},
          {"indicator", int(m.indicator)},
          {"a", mat(m.a)},
          {"astar_inv", mat(m.astar_inv)},
          {"astar", mat(m.astar)}};
}

template <int D>
nlohmann::json to_json(const MasterValue<D>& m) {
  auto vec = [](const Vec<D>& x) {
    nlohmann::json r = nlohmann::json::array();
    for (int i = 0; i < D; ++i) r.push_back(x[i]);
    return r;
  };
  auto vmax = [](const std::vector<double>& v) {
    double r = 0;
    for (double x : v) r = std::max(r, x);
    return r;
  };
  return {{"cube", to_json(m.cube)},
          {"l", m.l},
          {"p", vec(m.p)},
          {"q", vec(m.q)},
          {"indicator", int(m.indicator)},
          {"mu", m.mu_value},
          {"mu_star", m.mu_star_value},
          {"J", m.J},
          {"maximizer_energy", m.maximizer_energy},
          {"energy_identity_rel", m.energy_identity_rel},
          {"first_variation_max", vmax(m.first_variation)},
          {"neumann_first_variation_max", vmax(m.neumann_first_variation)},
          {"quadratic_response_max", vmax(m.quadratic_response)},
          {"neumann_response_max", vmax(m.neumann_response)}};
}

inline void write_defect_csv_header(std::ostream& os) {
  os << "seed,level,l,separation,dd_eig_min,dd_eig_max,dn_eig_min,dn_eig_max,"
        "bound_d,bound_n,accepted\n";
}

template <int D>
void write_defect_csv_row(std::ostream& os, uint64_t seed, const DefectReport<D>& r) {
  char buf[64];
  os << seed << ',' << r.parent.level << ',' << r.l << ',' << (r.child_level - r.l);
  const double cols[] = {r.dirichlet_eig_min, r.dirichlet_eig_max, r.neumann_eig_min,
                         r.neumann_eig_max,   r.bound_dirichlet,   r.bound_neumann};
  for (double c : cols) {
    std::snprintf(buf, sizeof buf, "%.17g", c);
    os << ',' << buf;
  }
  os << ',' << (r.accepted ? 1 : 0) << '\n';
}

}  // namespace perchom
