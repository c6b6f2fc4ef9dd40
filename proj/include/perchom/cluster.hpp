#pragma once

// Percolation clusters on cubes: extraction of the dominant component,
// well-connectedness of triadic cubes, density calibration, goodness
// certificates (spectral Poincare and affine-energy bounds), and good-cube
// partitions with neighbor-ratio repair.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <type_traits>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "perchom/cloud.hpp"
#include "perchom/graph.hpp"
#include "perchom/solver.hpp"

namespace perchom {

template <int D>
struct ClusterGraph {
  Graph<D> g;                     // all points of the region
  Components comp;                // component labels of g
  Box<D> region;
  std::vector<uint32_t> cluster;  // vertices of the selected component, ascending
  int32_t cluster_label = -1;
  bool empty = false;
  bool fallback = false;          // no enclosing well-connected triadic cube found
};

// largest component; ties broken by the lexicographically smallest member
template <int D>
int32_t dominant_label(const Graph<D>& g, const Components& comp) {
  const int32_t nc = int32_t(comp.size.size());
  std::vector<Vec<D>> minpt(nc);
  std::vector<uint8_t> seen(nc, 0);
  for (int64_t v = 0; v < g.n(); ++v) {
    const int32_t c = comp.label[v];
    if (!seen[c] || g.pts[v] < minpt[c]) {
      minpt[c] = g.pts[v];
      seen[c] = 1;
    }
  }
  int32_t best = 0;
  for (int32_t c = 1; c < nc; ++c) {
    if (comp.size[c] > comp.size[best])
      best = c;
    else if (comp.size[c] == comp.size[best] && minpt[c] < minpt[best])
      best = c;
  }
  return best;
}

template <int D>
ClusterGraph<D> build_graph(const PointCloud<D>& cloud, const Box<D>& region) {
  ClusterGraph<D> out;
  out.region = region;
  std::vector<Vec<D>> pts;
  for (const auto& x : cloud.pts)
    if (region.contains(x)) pts.push_back(x);
  out.g = build_unit_graph(region, pts);
  out.comp = connected_components(out.g);
  if (out.g.n() == 0) {
    out.empty = true;
    return out;
  }
  out.cluster_label = dominant_label(out.g, out.comp);
  for (int64_t v = 0; v < out.g.n(); ++v)
    if (out.comp.label[v] == out.cluster_label) out.cluster.push_back(uint32_t(v));
  return out;
}

namespace detail {

// Euclidean diameter of a vertex subset; cheap bounding-box screens before
// the quadratic scan (subsets reaching the scan are small clumps).
template <int D>
double euclidean_diameter(const Graph<D>& g, const std::vector<uint32_t>& vs) {
  if (vs.size() < 2) return 0.0;
  Vec<D> lo = g.pts[vs[0]], hi = lo;
  for (uint32_t v : vs)
    for (int i = 0; i < D; ++i) {
      lo[i] = std::min(lo[i], g.pts[v][i]);
      hi[i] = std::max(hi[i], g.pts[v][i]);
    }
  double diag2 = 0;
  for (int i = 0; i < D; ++i) diag2 += (hi[i] - lo[i]) * (hi[i] - lo[i]);
  double best2 = 0;
  for (int i = 0; i < D; ++i) {
    const double e = hi[i] - lo[i];
    best2 = std::max(best2, e * e);
  }
  if (vs.size() > 4000) return std::sqrt(best2);  // giant component: extent bound suffices
  for (size_t a = 0; a < vs.size(); ++a)
    for (size_t b = a + 1; b < vs.size(); ++b)
      best2 = std::max(best2, dist2(g.pts[vs[a]], g.pts[vs[b]]));
  return std::sqrt(std::min(best2, diag2));
}

// diameter decision against a threshold: extent lower bound, diagonal upper
// bound, exact scan only in the gray zone
template <int D>
bool diameter_exceeds(const Graph<D>& g, const std::vector<uint32_t>& vs, double thr) {
  if (vs.size() < 2) return false;
  Vec<D> lo = g.pts[vs[0]], hi = lo;
  for (uint32_t v : vs)
    for (int i = 0; i < D; ++i) {
      lo[i] = std::min(lo[i], g.pts[v][i]);
      hi[i] = std::max(hi[i], g.pts[v][i]);
    }
  double diag2 = 0, ext2 = 0;
  for (int i = 0; i < D; ++i) {
    const double e = hi[i] - lo[i];
    diag2 += e * e;
    ext2 = std::max(ext2, e * e);
  }
  if (ext2 > thr * thr) return true;
  if (diag2 <= thr * thr) return false;
  for (size_t a = 0; a < vs.size(); ++a)
    for (size_t b = a + 1; b < vs.size(); ++b)
      if (dist2(g.pts[vs[a]], g.pts[vs[b]]) > thr * thr) return true;
  return false;
}

// Certified upper bound on sup over the box of the distance to the nearest
// set point: the sup is evaluated on a grid of spacing h and padded by the
// half-diagonal (the distance function is 1-Lipschitz).
template <int D>
double continuum_reach_bound(const Box<D>& box, const std::type_identity_t<std::vector<Vec<D>>>& set,
                             double h = 0.25, double give_up = 1e300) {
  if (set.empty()) return 1e300;
  CellIndex<D> idx(box, set);
  const int64_t m = int64_t(std::ceil(double(box.side) / h));
  int64_t nodes = 1;
  for (int i = 0; i < D; ++i) nodes *= m;
  const int64_t ring_cap = give_up >= 1e300 ? idx.max_ring() + 1
                                            : int64_t(std::ceil(give_up)) + 2;
  double worst2 = 0.0;
  for (int64_t node = 0; node < nodes; ++node) {
    Vec<D> q;
    int64_t rem = node;
    for (int i = D - 1; i >= 0; --i) {
      q[i] = double(box.lo[i]) + (double(rem % m) + 0.5) * h;
      rem /= m;
    }
    double best2 = std::numeric_limits<double>::infinity();
    bool resolved = false;
    for (int64_t ring = 0; ring <= ring_cap; ++ring) {
      idx.ring(q, ring, [&](uint32_t si) { best2 = std::min(best2, dist2(q, set[si])); });
      const double lower = double(ring);  // unscanned points are at distance >= ring
      if (best2 <= lower * lower) {
        resolved = true;
        break;
      }
    }
    // ring budget exhausted: this node alone already exceeds the bound, so
    // return the certified lower bound on the sup
    if (!resolved) return double(ring_cap);
    worst2 = std::max(worst2, best2);
  }
  return std::sqrt(worst2) + 0.5 * h * std::sqrt(double(D));
}

}  // namespace detail

struct ThetaEstimate {
  double density = 0, density_se = 0;    // cluster points per unit volume
  double fraction = 0, fraction_se = 0;  // cluster points over all points
  int64_t samples = 0;
  bool subcritical_warning = false;
};

// Monte Carlo calibration of the dominant-cluster density on cubes of the
// given level. The subcritical warning fires when the largest component
// fails to span half the cube in most samples.
template <int D>
ThetaEstimate estimate_theta(double lambda, int level, int64_t n_samples, uint64_t seed) {
  if (level < 3) throw std::invalid_argument("calibration level must be at least 3");
  if (n_samples < 2) throw std::invalid_argument("need at least two samples");
  ThetaEstimate est;
  est.samples = n_samples;
  std::vector<double> dens, frac;
  int64_t sub_votes = 0;
  const int64_t side = pow3(level);
  for (int64_t i = 0; i < n_samples; ++i) {
    Box<D> box = Box<D>::centered(side);
    auto cloud = sample_poisson(box, lambda, seed + uint64_t(i));
    auto cg = build_graph(cloud, box);
    if (cg.empty) {
      dens.push_back(0);
      frac.push_back(0);
      ++sub_votes;
      continue;
    }
    const double count = double(cg.cluster.size());
    dens.push_back(count / double(box.volume()));
    frac.push_back(count / double(cg.g.n()));
    if (!detail::diameter_exceeds(cg.g, cg.cluster, double(side) / 2.0)) ++sub_votes;
  }
  auto mean_se = [](const std::vector<double>& xs, double& m, double& se) {
    m = 0;
    for (double x : xs) m += x;
    m /= double(xs.size());
    double var = 0;
    for (double x : xs) var += (x - m) * (x - m);
    var /= double(xs.size() - 1);
    se = std::sqrt(var / double(xs.size()));
  };
  mean_se(dens, est.density, est.density_se);
  mean_se(frac, est.fraction, est.fraction_se);
  est.subcritical_warning = sub_votes * 2 > n_samples;
  return est;
}

struct WellConnectedConditions {
  bool unique_giant = false;  // exactly one component of diameter > size/100
  bool density_band = false;  // cluster fraction within 1 percent of theta
  bool reach = false;         // every cube point near the cluster
};

template <int D>
struct WellConnectedReport {
  TriadicCube<D> cube;
  WellConnectedConditions cond;
  bool passed = false;
  int64_t point_count = 0;
  int64_t giant_size = 0;
  int64_t big_components = 0;
  double giant_diameter = 0;
  double fraction = 0;
  double max_dist_to_cluster = 0;
  double reach_threshold = 0;
  double theta_hat = 0;
};

// Definition-style check of the three conditions on a triadic cube. theta is
// the dimensionless dominant-cluster fraction in (0, 1]. The reach radius is
// size/100 floored at the interaction range, otherwise no finite intensity
// passes at desk scales. The first overload reuses a graph already built on
// the cube's box.
template <int D>
WellConnectedReport<D> well_connected_check(const ClusterGraph<D>& cg,
                                            const TriadicCube<D>& cube, double theta) {
  if (!(theta > 0.0 && theta <= 1.0)) throw std::invalid_argument("theta must be in (0,1]");
  WellConnectedReport<D> rep;
  rep.cube = cube;
  rep.theta_hat = theta;
  const double size = double(cube.side());
  const double diam_thr = size / 100.0;
  rep.reach_threshold = std::max(2.0, size / 100.0);
  const Box<D> box = cube.box();
  rep.point_count = cg.g.n();
  if (cg.empty) return rep;

  std::vector<std::vector<uint32_t>> members(cg.comp.size.size());
  for (int64_t v = 0; v < cg.g.n(); ++v) members[cg.comp.label[v]].push_back(uint32_t(v));
  int64_t big = 0;
  for (int32_t c = 0; c < int32_t(members.size()); ++c)
    if (detail::diameter_exceeds(cg.g, members[c], diam_thr)) ++big;
  rep.big_components = big;
  rep.cond.unique_giant = (big == 1);
  const int32_t giant = cg.cluster_label;  // dominant component regardless of uniqueness
  rep.giant_size = int64_t(members[giant].size());
  rep.giant_diameter = detail::euclidean_diameter(cg.g, members[giant]);

  rep.fraction = double(rep.giant_size) / double(rep.point_count);
  rep.cond.density_band =
      rep.fraction >= 0.99 * theta && rep.fraction <= std::min(1.01 * theta, 1.0) + 1e-15;

  std::vector<Vec<D>> cl_pts;
  cl_pts.reserve(members[giant].size());
  for (uint32_t v : members[giant]) cl_pts.push_back(cg.g.pts[v]);
  rep.max_dist_to_cluster = detail::continuum_reach_bound(box, cl_pts, 0.25, rep.reach_threshold);
  rep.cond.reach = rep.max_dist_to_cluster <= rep.reach_threshold + 1e-12;

  rep.passed = rep.cond.unique_giant && rep.cond.density_band && rep.cond.reach;
  return rep;
}

template <int D>
WellConnectedReport<D> well_connected_check(const PointCloud<D>& cloud,
                                            const TriadicCube<D>& cube, double theta) {
  return well_connected_check(build_graph(cloud, cube.box()), cube, theta);
}

// Dominant cluster within U: the giant component of the smallest enclosing
// triadic cube whose tripled cube is well-connected, restricted to U. Falls
// back to the component structure of U alone when no such cube fits.
template <int D>
ClusterGraph<D> cluster_in_region(const PointCloud<D>& cloud, const Box<D>& U,
                                  double theta = 0.0) {
  // smallest triadic cube containing U
  int level = 0;
  std::optional<TriadicCube<D>> found;
  for (; level <= 12; ++level) {
    Vec<D> lo_pt;
    for (int i = 0; i < D; ++i) lo_pt[i] = double(U.lo[i]);
    TriadicCube<D> c = containing_cube<D>(level, lo_pt);
    Box<D> cb = c.box();
    bool covers = true;
    for (int i = 0; i < D; ++i)
      covers = covers && cb.lo[i] <= U.lo[i] && cb.hi(i) >= U.hi(i);
    if (!covers) continue;
    TriadicCube<D> triple{level + 1, c.center};  // concentric cube of triple side
    Box<D> tb = triple.box();
    bool inside = true;
    for (int i = 0; i < D; ++i)
      inside = inside && tb.lo[i] >= cloud.box.lo[i] && tb.hi(i) <= cloud.box.hi(i);
    if (!inside) break;
    double th = theta;
    if (th <= 0.0) {
      auto probe = build_graph(cloud, tb);
      th = probe.empty ? 1.0 : double(probe.cluster.size()) / double(probe.g.n());
    }
    if (well_connected_check(cloud, triple, th).passed) {
      found = c;
      break;
    }
  }
  if (!found) {
    ClusterGraph<D> out = build_graph(cloud, U);
    out.fallback = true;
    return out;
  }
  // giant cluster of the enclosing cube, restricted to U
  auto big = build_graph(cloud, found->box());
  std::vector<Vec<D>> pts;
  for (uint32_t v : big.cluster)
    if (U.contains(big.g.pts[v])) pts.push_back(big.g.pts[v]);
  ClusterGraph<D> out;
  out.region = U;
  out.g = build_unit_graph(U, pts);
  out.comp = connected_components(out.g);
  if (out.g.n() == 0) {
    out.empty = true;
    return out;
  }
  out.cluster_label = dominant_label(out.g, out.comp);
  for (int64_t v = 0; v < out.g.n(); ++v)
    if (out.comp.label[v] == out.cluster_label) out.cluster.push_back(uint32_t(v));
  return out;
}

struct GoodnessConfig {
  double c_p = 1.0;        // Poincare budget multiplier: inverse gap <= (c_p * side)^2
  double affine_k = 60.0;  // cap on (1/|box|) sum over ordered edges of |x-y|^2
  int gap_iters = 12;      // inverse-power iterations for the gap estimate
  double gap_inner_tol = 1e-8;  // inner solve tolerance of those iterations
};

template <int D>
struct GoodCubeReport {
  WellConnectedReport<D> wc;
  bool poincare_passed = false;
  bool affine_passed = false;
  bool good = false;
  double inv_gap = 0;
  double poincare_budget = 0;
  double affine_energy = 0;
  double affine_budget = 0;
};

// extracts the dominant-cluster subgraph of a cube as a standalone graph
template <int D>
Graph<D> cluster_subgraph(const ClusterGraph<D>& cg) {
  std::vector<Vec<D>> pts;
  pts.reserve(cg.cluster.size());
  for (uint32_t v : cg.cluster) pts.push_back(cg.g.pts[v]);
  return build_unit_graph(cg.region, pts);
}

template <int D>
GoodCubeReport<D> is_good(const ClusterGraph<D>& cg, const TriadicCube<D>& cube,
                          double theta, const GoodnessConfig& cfg = {},
                          const SolverOptions& sopts = {}) {
  GoodCubeReport<D> rep;
  rep.wc = well_connected_check(cg, cube, theta);
  rep.poincare_budget = cfg.c_p * double(cube.side());
  rep.poincare_budget *= rep.poincare_budget;
  rep.affine_budget = cfg.affine_k;
  if (!rep.wc.passed) return rep;

  Graph<D> sub = cluster_subgraph(cg);
  if (sub.n() < 2) return rep;

  double aff = 0;
  for (int64_t v = 0; v < sub.n(); ++v)
    for (uint32_t w : sub.neighbors(v)) aff += dist2(sub.pts[v], sub.pts[w]);
  rep.affine_energy = aff / double(cube.box().volume());
  rep.affine_passed = rep.affine_energy <= cfg.affine_k;

  const double gap = smallest_nonzero_eigenvalue(sub, sopts, cfg.gap_iters, cfg.gap_inner_tol);
  rep.inv_gap = 1.0 / gap;
  rep.poincare_passed = rep.inv_gap <= rep.poincare_budget;

  rep.good = rep.wc.passed && rep.poincare_passed && rep.affine_passed;
  return rep;
}

template <int D>
GoodCubeReport<D> is_good(const PointCloud<D>& cloud, const TriadicCube<D>& cube,
                          double theta, const GoodnessConfig& cfg = {},
                          const SolverOptions& sopts = {}) {
  return is_good(build_graph(cloud, cube.box()), cube, theta, cfg, sopts);
}

template <int D>
struct GoodPartition {
  TriadicCube<D> root;
  std::vector<TriadicCube<D>> cells;
  std::vector<uint8_t> cell_good;
  bool defective = false;
  std::vector<TriadicCube<D>> bad_cells;
  double lambda_stat = 0;        // |root|^{-1} sum |cell|^{d+1-1/d}
  double lambda_tilde_stat = 0;  // |root|^{-1} sum |cell|^2
  int ratio_repairs = 0;
};

namespace detail {

template <int D>
bool cubes_adjacent(const TriadicCube<D>& a, const TriadicCube<D>& b) {
  const Box<D> ba = a.box(), bb = b.box();
  for (int i = 0; i < D; ++i) {
    if (double(ba.hi(i)) < double(bb.lo[i])) return false;
    if (double(bb.hi(i)) < double(ba.lo[i])) return false;
  }
  return true;
}

template <int D>
std::vector<TriadicCube<D>> children(const TriadicCube<D>& c) {
  std::vector<TriadicCube<D>> out;
  const int64_t s = c.side() / 3;
  IVec<D> idx{};
  for (;;) {
    TriadicCube<D> ch;
    ch.level = c.level - 1;
    for (int i = 0; i < D; ++i) ch.center[i] = c.center[i] + (idx[i] - 1) * s;
    out.push_back(ch);
    int i = 0;
    for (; i < D; ++i) {
      if (++idx[i] < 3) break;
      idx[i] = 0;
    }
    if (i == D) break;
  }
  return out;
}

}  // namespace detail

// Greedy top-down refinement into good subcubes, then neighbor-ratio repair
// by splitting the larger of any adjacent pair more than one level apart.
template <int D>
GoodPartition<D> good_partition(const PointCloud<D>& cloud, const TriadicCube<D>& root,
                                double theta, int l_min = 1, const GoodnessConfig& cfg = {},
                                const SolverOptions& sopts = {}) {
  GoodPartition<D> part;
  part.root = root;
  std::vector<TriadicCube<D>> work = {root};
  auto good_of = [&](const TriadicCube<D>& c) {
    return is_good(cloud, c, theta, cfg, sopts).good;
  };
  std::vector<TriadicCube<D>> done;
  std::vector<uint8_t> done_good;
  while (!work.empty()) {
    TriadicCube<D> c = work.back();
    work.pop_back();
    const bool g = good_of(c);
    if (g || c.level <= l_min) {
      done.push_back(c);
      done_good.push_back(g);
      continue;
    }
    for (auto& ch : detail::children(c)) work.push_back(ch);
  }
  // ratio repair: adjacent cells must be within one level of each other
  bool changed = true;
  while (changed) {
    changed = false;
    for (size_t a = 0; a < done.size() && !changed; ++a)
      for (size_t b = a + 1; b < done.size() && !changed; ++b) {
        if (std::abs(done[a].level - done[b].level) <= 1) continue;
        if (!detail::cubes_adjacent(done[a], done[b])) continue;
        const size_t big = done[a].level > done[b].level ? a : b;
        TriadicCube<D> c = done[big];
        done.erase(done.begin() + int64_t(big));
        done_good.erase(done_good.begin() + int64_t(big));
        for (auto& ch : detail::children(c)) {
          done.push_back(ch);
          done_good.push_back(good_of(ch));
        }
        ++part.ratio_repairs;
        changed = true;
      }
  }
  part.cells = std::move(done);
  part.cell_good = std::move(done_good);
  double vol_root = double(root.box().volume());
  for (size_t i = 0; i < part.cells.size(); ++i) {
    const double vol = double(part.cells[i].box().volume());
    part.lambda_stat += std::pow(vol, double(D + 1) - 1.0 / double(D));
    part.lambda_tilde_stat += vol * vol;
    if (!part.cell_good[i]) {
      part.defective = true;
      part.bad_cells.push_back(part.cells[i]);
    }
  }
  part.lambda_stat /= vol_root;
  part.lambda_tilde_stat /= vol_root;
  return part;
}

// JSON / CSV export surfaces

template <int D>
nlohmann::json to_json(const WellConnectedReport<D>& r) {
  nlohmann::json j;
  j["cube"] = {{"level", r.cube.level}, {"center", r.cube.center}};
  j["passed"] = r.passed;
  j["conditions"] = {{"unique_giant", r.cond.unique_giant},
                     {"density_band", r.cond.density_band},
                     {"reach", r.cond.reach}};
  j["point_count"] = r.point_count;
  j["giant_size"] = r.giant_size;
  j["big_components"] = r.big_components;
  j["giant_diameter"] = r.giant_diameter;
  j["fraction"] = r.fraction;
  j["max_dist_to_cluster"] = r.max_dist_to_cluster;
  j["reach_threshold"] = r.reach_threshold;
  j["theta_hat"] = r.theta_hat;
  return j;
}

template <int D>
nlohmann::json to_json(const GoodPartition<D>& p) {
  nlohmann::json j;
  j["root"] = {{"level", p.root.level}, {"center", p.root.center}};
  j["defective"] = p.defective;
  j["ratio_repairs"] = p.ratio_repairs;
  j["lambda_stat"] = p.lambda_stat;
  j["lambda_tilde_stat"] = p.lambda_tilde_stat;
  nlohmann::json cells = nlohmann::json::array();
  for (size_t i = 0; i < p.cells.size(); ++i)
    cells.push_back({{"level", p.cells[i].level},
                     {"center", p.cells[i].center},
                     {"good", bool(p.cell_good[i])}});
  j["cells"] = cells;
  return j;
}

template <int D>
void write_edge_list_csv(std::ostream& os, const Graph<D>& g) {
  os << "i,j,dist\n";
  char buf[64];
  for (int64_t v = 0; v < g.n(); ++v)
    for (uint32_t w : g.neighbors(v))
      if (w > v) {
        std::snprintf(buf, sizeof buf, "%.17g", std::sqrt(dist2(g.pts[v], g.pts[w])));
        os << v << ',' << w << ',' << buf << '\n';
      }
}

}  // namespace perchom
