#pragma once

// Finite-volume correctors on good cubes: the deviation of the optimal
// affine extension from the exact affine datum, convergence of its gradient
// across nested scales, heat-kernel spatial averages of the coarse lattice
// gradient, variance scaling of those averages over kernel radii, and the
// sensitivity of the averages to resampling a single unit cell.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "perchom/homog.hpp"

namespace perchom {

// phi is the corrector of the affine datum ell_e on one cube: the optimal
// extension minus ell_e, shifted to mean zero over the cluster. ell_e + phi
// is graph-harmonic away from the collar and its energy per volume equals
// the quadratic-form value J(box, -e, 0) exactly.
template <int D>
struct CorrectorField {
  TriadicCube<D> cube;
  int l = 1;
  Vec<D> e{};
  uint8_t indicator = 0;
  Field phi;
  CoarseField coarse;
  double mu_value = 0;
  SolveStats stats;
};

template <int D>
CorrectorField<D> finite_volume_corrector(const CubeInstance<D>& inst,
                                          const std::type_identity_t<Vec<D>>& e,
                                          const SolverOptions& opts = {}) {
  CorrectorField<D> out;
  out.cube = inst.cube;
  out.l = inst.l;
  out.e = e;
  if (!inst.good) return out;
  Vec<D> me{};
  for (int i = 0; i < D; ++i) me[i] = -e[i];
  auto mj = master_J(inst, me, Vec<D>{}, 0, 0, opts);
  out.phi.resize(size_t(inst.g.n()));
  for (int64_t v = 0; v < inst.g.n(); ++v) {
    double le = 0;
    for (int i = 0; i < D; ++i) le += e[i] * inst.g.pts[size_t(v)][i];
    out.phi[size_t(v)] = mj.maximizer[size_t(v)] - le;
  }
  vec_shift(out.phi, -vec_mean(out.phi));
  out.coarse = coarsen(inst.coarse, out.phi);
  out.mu_value = mj.J;
  out.stats = mj.stats_mu;
  out.indicator = 1;
  return out;
}

template <int D>
CorrectorField<D> finite_volume_corrector(const PointCloud<D>& cloud,
                                          const TriadicCube<D>& cube,
                                          const std::type_identity_t<Vec<D>>& e, int l,
                                          double theta, const GoodnessConfig& good = {},
                                          const SolverOptions& opts = {}) {
  auto inst = make_instance(cloud, cube, l, theta, good, opts);
  return finite_volume_corrector(inst, e, opts);
}

struct ConvergenceLevel {
  int level = 0;
  uint8_t good = 0;
  double phi_l2_avg = 0;
  double sublinear = 0;  // 3^{-level} * phi_l2_avg
};

struct ConvergenceIncrement {
  int level_from = 0;
  int level_to = 0;
  double increment = 0;  // gradient L2 average of the corrector difference
  int64_t n_points = 0;
};

template <int D>
struct ConvergenceReport {
  Vec<D> e{};
  double radius = 0;
  std::vector<ConvergenceLevel> levels;
  std::vector<ConvergenceIncrement> increments;
};

namespace detail {

// Clouds restricted to nested cubes share exact point coordinates, so
// clusters can be matched across instances by position.
template <int D>
std::map<Vec<D>, uint32_t> position_index(const Graph<D>& g, double reach) {
  std::map<Vec<D>, uint32_t> m;
  for (int64_t v = 0; v < g.n(); ++v) {
    const Vec<D>& x = g.pts[size_t(v)];
    double far = 0;
    for (int i = 0; i < D; ++i) far = std::max(far, std::abs(x[i]));
    if (reach <= 0 || far <= reach) m.emplace(x, uint32_t(v));
  }
  return m;
}

}  // namespace detail

// Correctors of nested concentric cubes built from one cloud, with the
// gradient increment of consecutive pairs measured over the common cluster
// points of a fixed inner ball. Repeated levels are legal and give a zero
// increment.
template <int D>
ConvergenceReport<D> corrector_convergence(const PointCloud<D>& cloud,
                                           const std::vector<int>& levels_in,
                                           const std::type_identity_t<Vec<D>>& e, int l,
                                           double theta, double radius = -1,
                                           const GoodnessConfig& good = {},
                                           const SolverOptions& opts = {}) {
  if (levels_in.empty()) throw std::invalid_argument("convergence needs levels");
  std::vector<int> levels(levels_in);
  std::sort(levels.begin(), levels.end());
  if (radius <= 0) radius = double(pow3(levels.front())) / 3.0;
  if (radius > double(pow3(levels.front())) / 2.0 - 1.0)
    throw std::invalid_argument("ball exceeds the smallest cube");

  ConvergenceReport<D> out;
  out.e = e;
  out.radius = radius;
  std::vector<CubeInstance<D>> insts;
  std::vector<CorrectorField<D>> cfs;
  for (int m : levels) {
    TriadicCube<D> cube;
    cube.level = m;
    insts.push_back(make_instance(cloud, cube, l, theta, good, opts));
    cfs.push_back(finite_volume_corrector(insts.back(), e, opts));
    ConvergenceLevel cl;
    cl.level = m;
    cl.good = cfs.back().indicator;
    if (cl.good) {
      cl.phi_l2_avg = l2_avg(insts.back().vol, cfs.back().phi);
      cl.sublinear = cl.phi_l2_avg / double(pow3(m));
    }
    out.levels.push_back(cl);
  }

  for (size_t k = 0; k + 1 < cfs.size(); ++k) {
    if (!cfs[k].indicator || !cfs[k + 1].indicator) continue;
    const Graph<D>& gs = insts[k].g;
    const Graph<D>& gb = insts[k + 1].g;
    auto big = detail::position_index(gb, radius + 1.5);
    // delta of corrector values at matched points; gradients kill the
    // mean-zero shifts of the two fields
    std::vector<double> delta(size_t(gs.n()), 0.0);
    std::vector<uint8_t> matched(size_t(gs.n()), 0);
    for (int64_t v = 0; v < gs.n(); ++v) {
      auto it = big.find(gs.pts[size_t(v)]);
      if (it == big.end()) continue;
      delta[size_t(v)] = cfs[k + 1].phi[it->second] - cfs[k].phi[size_t(v)];
      matched[size_t(v)] = 1;
    }
    double num = 0;
    int64_t den = 0;
    for (int64_t v = 0; v < gs.n(); ++v) {
      if (!matched[size_t(v)]) continue;
      double r2 = 0;
      for (int i = 0; i < D; ++i) r2 += gs.pts[size_t(v)][i] * gs.pts[size_t(v)][i];
      if (r2 > radius * radius) continue;
      ++den;
      for (uint32_t y : gs.neighbors(v)) {
        if (!matched[y]) continue;
        const double d = delta[y] - delta[size_t(v)];
        num += d * d;
      }
    }
    ConvergenceIncrement inc;
    inc.level_from = levels[k];
    inc.level_to = levels[k + 1];
    inc.n_points = den;
    inc.increment = den > 0 ? std::sqrt(num / double(den)) : 0.0;
    out.increments.push_back(inc);
  }
  return out;
}

// Heat-kernel average of the coarse forward gradient on the block lattice.
// The Gaussian of scale r is truncated at trunc * r and renormalized to
// unit discrete mass, so the value is a convex combination of block
// gradients and the kernel shape is identical for every radius.
template <int D>
struct SpatialAverage {
  Vec<D> e{};
  double r = 0;
  double trunc = 6.0;
  Vec<D> center{};
  Vec<D> value{};
  double kernel_mass = 0;      // renormalized mass, 1 up to roundoff
  double kernel_mass_raw = 0;  // truncated continuum-normalized mass
  int64_t n_cells = 0;
};

template <int D>
SpatialAverage<D> spatial_average(const CubeInstance<D>& inst, const CorrectorField<D>& cf,
                                  double r, const std::type_identity_t<Vec<D>>& center = {},
                                  double trunc = 6.0) {
  if (!cf.indicator) throw std::invalid_argument("corrector unavailable on a bad cube");
  if (int64_t(cf.phi.size()) != inst.g.n())
    throw std::invalid_argument("corrector does not match the instance");
  if (r <= 0 || trunc <= 0)
    throw std::invalid_argument("radius and truncation must be positive");
  const auto& grid = inst.coarse.grid;
  const double h = double(grid.bs);
  for (int i = 0; i < D; ++i) {
    if (center[i] - trunc * r - 2.0 * h < grid.box.lo[i] ||
        center[i] + trunc * r + 2.0 * h > grid.box.hi(i))
      throw std::invalid_argument("kernel support leaves the cube interior");
  }

  SpatialAverage<D> out;
  out.e = cf.e;
  out.r = r;
  out.trunc = trunc;
  out.center = center;
  const double cut2 = trunc * r * trunc * r;
  std::vector<std::pair<int64_t, double>> cells;
  double mass = 0;
  for (int64_t b = 0; b < grid.count(); ++b) {
    const Vec<D> c = inst.coarse.block_center(b);
    double d2 = 0;
    for (int i = 0; i < D; ++i) d2 += (c[i] - center[i]) * (c[i] - center[i]);
    if (d2 > cut2) continue;
    const double w = std::exp(-d2 / (4.0 * r * r));
    cells.emplace_back(b, w);
    mass += w;
  }
  out.n_cells = int64_t(cells.size());
  out.kernel_mass_raw =
      std::pow(4.0 * std::numbers::pi * r * r, -0.5 * D) * mass * std::pow(h, D);
  for (const auto& [b, w] : cells) {
    const double wn = w / mass;
    out.kernel_mass += wn;
    const IVec<D> bc = grid.coords(b);
    for (int i = 0; i < D; ++i) {
      IVec<D> fc = bc;
      fc[i] += 1;
      const double g = (cf.coarse.value[size_t(grid.index(fc))] - cf.coarse.value[size_t(b)]) / h;
      out.value[i] += wn * g;
    }
  }
  return out;
}

struct RadiusVariance {
  double r = 0;
  int64_t n = 0;
  double var = 0;  // sum of component variances
  double ci_lo = 0;
  double ci_hi = 0;
  double mean_sq = 0;        // squared norm of the mean average
  double second_moment = 0;  // mean squared norm
};

template <int D>
struct VarianceScaling {
  double lambda = 0;
  int level = 0;
  int l = 1;
  Vec<D> e{};
  double trunc = 6.0;
  uint64_t seed = 0;
  int64_t n_samples = 0;
  int64_t n_good = 0;
  std::vector<RadiusVariance> radii;
  double slope = 0;
  bool degenerate = false;
  std::array<double, 3> sobolev_s{};
  std::array<double, 3> sobolev_norm{};
};

// Variance of the spatial average over independent clouds, one cloud per
// sample serving every radius, with a bootstrap interval per radius, the
// log-log slope across radii, and a descriptive negative-Sobolev synthesis
// at the exponents d/2 - 1, d/2, d/2 + 1.
template <int D>
VarianceScaling<D> variance_scaling(double lambda, double theta, int level, int l,
                                    const std::type_identity_t<Vec<D>>& e,
                                    const std::vector<double>& radii_in, int64_t n_samples,
                                    uint64_t seed, double trunc = 6.0,
                                    const CampaignConfig& cfg = {}) {
  if (radii_in.size() < 3)
    throw std::invalid_argument("variance scaling needs at least three radii");
  if (n_samples < 50)
    throw std::invalid_argument("variance scaling needs at least 50 samples");
  std::vector<double> radii(radii_in);
  std::sort(radii.begin(), radii.end());
  const int64_t side = pow3(level);
  const double h = double(pow3(l));
  if (trunc * radii.back() + 2.0 * h > 0.5 * double(side))
    throw std::invalid_argument("kernel support leaves the cube interior");

  VarianceScaling<D> out;
  out.lambda = lambda;
  out.level = level;
  out.l = l;
  out.e = e;
  out.trunc = trunc;
  out.seed = seed;
  out.n_samples = n_samples;

  struct Row {
    uint8_t ok = 0;
    std::vector<Vec<D>> z;
  };
  const Box<D> box = Box<D>::centered(double(side));
  const GoodnessConfig good = goodness_for_side(cfg, side);
  auto rows = map_samples(
      n_samples,
      [&](int64_t i) {
        auto cloud = sample_poisson(box, lambda, sample_seed(seed, 0x2e11u, uint64_t(i)));
        TriadicCube<D> cube;
        cube.level = level;
        auto inst = make_instance(cloud, cube, l, theta, good, cfg.solve);
        Row row;
        if (!inst.good) return row;
        row.ok = 1;
        auto cf = finite_volume_corrector(inst, e, cfg.solve);
        for (double r : radii) row.z.push_back(spatial_average(inst, cf, r, {}, trunc).value);
        return row;
      },
      cfg.workers);

  std::vector<const Row*> ok;
  for (const auto& row : rows)
    if (row.ok) ok.push_back(&row);
  out.n_good = int64_t(ok.size());

  std::vector<double> log_r, log_var;
  for (size_t k = 0; k < radii.size(); ++k) {
    RadiusVariance rv;
    rv.r = radii[k];
    rv.n = out.n_good;
    if (out.n_good > 1) {
      for (int i = 0; i < D; ++i) {
        std::vector<double> xs;
        xs.reserve(ok.size());
        for (const Row* row : ok) xs.push_back(row->z[k][i]);
        const auto st = summarize(xs);
        rv.var += st.sd * st.sd;
        rv.mean_sq += st.mean * st.mean;
      }
      for (const Row* row : ok) {
        double n2 = 0;
        for (int i = 0; i < D; ++i) n2 += row->z[k][i] * row->z[k][i];
        rv.second_moment += n2;
      }
      rv.second_moment /= double(ok.size());
      // bootstrap over samples for the summed component variance
      const int B = 400;
      std::vector<double> reps(B, 0.0);
      Stream bs(seed, StreamId::experiment, 0x2e12u + uint32_t(k), 0);
      for (int b = 0; b < B; ++b) {
        std::vector<const Row*> draw(ok.size());
        for (auto& p : draw) p = ok[size_t(bs.next_u64() % ok.size())];
        double tv = 0;
        for (int i = 0; i < D; ++i) {
          double m = 0, m2 = 0;
          for (const Row* row : draw) {
            m += row->z[k][i];
            m2 += row->z[k][i] * row->z[k][i];
          }
          m /= double(draw.size());
          m2 /= double(draw.size());
          tv += (m2 - m * m) * double(draw.size()) / double(draw.size() - 1);
        }
        reps[size_t(b)] = tv;
      }
      std::sort(reps.begin(), reps.end());
      auto q = [&](double p) {
        return reps[size_t(std::clamp<int64_t>(int64_t(p * (B - 1) + 0.5), 0, B - 1))];
      };
      rv.ci_lo = q(0.025);
      rv.ci_hi = q(0.975);
    }
    if (rv.var > 0) {
      log_r.push_back(std::log(rv.r));
      log_var.push_back(std::log(rv.var));
    }
    out.radii.push_back(rv);
  }

  if (log_r.size() == radii.size() && out.n_good > 1)
    out.slope = fit_slope(log_r, log_var);
  else
    out.degenerate = true;

  // trapezoid weights in log r feed the multiscale synthesis
  std::vector<double> w(radii.size(), 0.0);
  for (size_t k = 0; k < radii.size(); ++k) {
    if (k > 0) w[k] += 0.5 * (std::log(radii[k]) - std::log(radii[k - 1]));
    if (k + 1 < radii.size()) w[k] += 0.5 * (std::log(radii[k + 1]) - std::log(radii[k]));
  }
  out.sobolev_s = {0.5 * D - 1.0, 0.5 * D, 0.5 * D + 1.0};
  for (int j = 0; j < 3; ++j) {
    double acc = 0;
    for (size_t k = 0; k < radii.size(); ++k)
      acc += w[k] * std::pow(radii[k], 2.0 * out.sobolev_s[size_t(j)]) *
             out.radii[k].second_moment;
    out.sobolev_norm[size_t(j)] = std::sqrt(acc);
  }
  return out;
}

// Effect of resampling one unit cell on the spatial averages. The patched
// resampled corrector equals the resampled corrector outside the block of
// the cell and its block average inside, the difference field w carries a
// divergence-form forcing supported on edges meeting that block, and the
// forcing per edge is the gradient of the affine datum plus the patched
// corrector across the edge.
template <int D>
struct SensitivityRecord {
  IVec<D> zeta{};
  Vec<D> e{};
  std::vector<double> radii;
  uint8_t ok = 0;  // resampled cube kept its goodness
  std::vector<double> dz;
  std::vector<Vec<D>> dz_vec;
  double f_l2 = 0;
  int64_t f_edges = 0;
  bool f_antisymmetric = false;
  int64_t unmatched = 0;
  double bin_width = 0;
  std::vector<double> profile;  // mean forward-gradient norm of [w] per distance bin
  std::vector<int64_t> profile_n;
};

template <int D>
SensitivityRecord<D> sensitivity(const PointCloud<D>& cloud, const CubeInstance<D>& inst,
                                 const CorrectorField<D>& cf,
                                 const std::type_identity_t<IVec<D>>& zeta,
                                 const std::vector<double>& radii, uint64_t resample_seed,
                                 double trunc = 6.0, const GoodnessConfig& good = {},
                                 const SolverOptions& opts = {}) {
  if (!cf.indicator) throw std::invalid_argument("corrector unavailable on a bad cube");
  SensitivityRecord<D> out;
  out.zeta = zeta;
  out.e = cf.e;
  out.radii = radii;

  const auto& grid = inst.coarse.grid;
  Vec<D> zc{};
  for (int i = 0; i < D; ++i) {
    zc[i] = double(zeta[i]);
    if (zc[i] - 0.5 < cloud.box.lo[i] || zc[i] + 0.5 > cloud.box.hi(i))
      throw std::invalid_argument("resample cube not inside the box");
  }
  const int64_t bstar = grid.index_of_point(zc);
  if (grid.is_collar(bstar))
    throw std::invalid_argument("resample cell must lie deep inside the cube");

  auto cloud2 = resample_cube<D>(cloud, zeta, resample_seed);
  auto inst2 = make_instance(cloud2, inst.cube, inst.l, inst.theta, good, opts);
  if (!inst2.good) return out;
  auto cf2 = finite_volume_corrector(inst2, cf.e, opts);

  // patched resampled corrector on the original cluster
  auto match = detail::position_index(inst2.g, 0.0);
  const int64_t n = inst.g.n();
  Field hat(size_t(n), 0.0);
  for (int64_t v = 0; v < n; ++v) {
    const int64_t b = inst.coarse.block_of[size_t(v)];
    if (b == bstar) {
      hat[size_t(v)] = cf2.coarse.value[size_t(bstar)];
      continue;
    }
    auto it = match.find(inst.g.pts[size_t(v)]);
    if (it != match.end()) {
      hat[size_t(v)] = cf2.phi[it->second];
    } else {
      hat[size_t(v)] = cf2.coarse.value[size_t(b)];
      ++out.unmatched;
    }
  }

  // forcing on edges meeting the patched block
  double f2 = 0;
  double asym = 0;
  auto fval = [&](uint32_t x, uint32_t y) {
    double f = 0;
    for (int i = 0; i < D; ++i)
      f += cf.e[i] * (inst.g.pts[x][i] - inst.g.pts[y][i]);
    return f + hat[x] - hat[y];
  };
  for (uint32_t x : inst.coarse.members[size_t(bstar)]) {
    for (uint32_t y : inst.g.neighbors(int64_t(x))) {
      const bool inside = inst.coarse.block_of[y] == bstar;
      if (inside && y <= x) continue;
      const double f = fval(x, y);
      f2 += f * f;
      asym = std::max(asym, std::abs(f + fval(y, x)));
      ++out.f_edges;
    }
  }
  out.f_l2 = std::sqrt(2.0 * f2);
  out.f_antisymmetric = asym <= 1e-12 * (1.0 + std::sqrt(f2));

  // spatial averages of both correctors and their gap
  for (double r : radii) {
    const auto z1 = spatial_average(inst, cf, r, {}, trunc);
    const auto z2 = spatial_average(inst2, cf2, r, {}, trunc);
    Vec<D> d{};
    double n2 = 0;
    for (int i = 0; i < D; ++i) {
      d[i] = z1.value[i] - z2.value[i];
      n2 += d[i] * d[i];
    }
    out.dz_vec.push_back(d);
    out.dz.push_back(std::sqrt(n2));
  }

  // radial profile of the coarse gradient of w = phi - patched
  Field w(size_t(n), 0.0);
  for (int64_t v = 0; v < n; ++v) w[size_t(v)] = cf.phi[size_t(v)] - hat[size_t(v)];
  const CoarseField cw = coarsen(inst.coarse, w);
  const double h = double(grid.bs);
  out.bin_width = h;
  for (int64_t b = 0; b < grid.count(); ++b) {
    if (grid.is_collar(b)) continue;
    const IVec<D> bc = grid.coords(b);
    double g2 = 0;
    bool full = true;
    for (int i = 0; i < D; ++i) {
      IVec<D> fc = bc;
      fc[i] += 1;
      if (fc[i] >= grid.nb) {
        full = false;
        break;
      }
      const double g = (cw.value[size_t(grid.index(fc))] - cw.value[size_t(b)]) / h;
      g2 += g * g;
    }
    if (!full) continue;
    const Vec<D> c = inst.coarse.block_center(b);
    double d2 = 0;
    for (int i = 0; i < D; ++i) d2 += (c[i] - zc[i]) * (c[i] - zc[i]);
    const size_t bin = size_t(std::sqrt(d2) / h);
    if (out.profile.size() <= bin) {
      out.profile.resize(bin + 1, 0.0);
      out.profile_n.resize(bin + 1, 0);
    }
    out.profile[bin] += std::sqrt(g2);
    out.profile_n[bin] += 1;
  }
  for (size_t k = 0; k < out.profile.size(); ++k)
    if (out.profile_n[k] > 0) out.profile[k] /= double(out.profile_n[k]);
  out.ok = 1;
  return out;
}

template <int D>
struct SensitivitySum {
  std::vector<double> radii;
  int spacing = 0;
  int64_t range = 0;
  int64_t n_zeta = 0;
  int64_t flagged = 0;
  std::vector<double> sum;    // per radius, over the subsampled cell grid
  std::vector<double> ratio;  // sum[k] / sum[k+1]
};

// Sum of squared average differences over a grid of resampled cells with
// the given spacing, every radius sharing the same corrector pair per
// cell. Cells whose resampled cube loses goodness are flagged and skipped.
template <int D>
SensitivitySum<D> sensitivity_sum(const PointCloud<D>& cloud, const CubeInstance<D>& inst,
                                  const CorrectorField<D>& cf,
                                  const std::vector<double>& radii, int spacing,
                                  int64_t range, uint64_t seed, double trunc = 6.0,
                                  const GoodnessConfig& good = {},
                                  const SolverOptions& opts = {}, int workers = 0) {
  if (spacing <= 0 || range < 0) throw std::invalid_argument("bad cell grid");
  SensitivitySum<D> out;
  out.radii = radii;
  out.spacing = spacing;
  out.range = range;

  std::vector<IVec<D>> cells;
  const int64_t K = range / spacing;
  const int64_t per = 2 * K + 1;
  int64_t total = 1;
  for (int i = 0; i < D; ++i) total *= per;
  for (int64_t t = 0; t < total; ++t) {
    IVec<D> z{};
    int64_t rem = t;
    for (int i = 0; i < D; ++i) {
      z[i] = (rem % per - K) * spacing;
      rem /= per;
    }
    cells.push_back(z);
  }
  out.n_zeta = int64_t(cells.size());

  auto recs = map_samples(
      int64_t(cells.size()),
      [&](int64_t i) {
        return sensitivity(cloud, inst, cf, cells[size_t(i)], radii,
                           sample_seed(seed, 0x5e12u, uint64_t(i)), trunc, good, opts);
      },
      workers);

  out.sum.assign(radii.size(), 0.0);
  for (const auto& rec : recs) {
    if (!rec.ok) {
      ++out.flagged;
      continue;
    }
    for (size_t k = 0; k < radii.size(); ++k) out.sum[k] += rec.dz[k] * rec.dz[k];
  }
  for (size_t k = 0; k + 1 < radii.size(); ++k)
    out.ratio.push_back(out.sum[k + 1] > 0 ? out.sum[k] / out.sum[k + 1] : 0.0);
  return out;
}

template <int D>
void write_scaling_csv(std::ostream& os, const VarianceScaling<D>& vs,
                       const std::string& prefix_header = "",
                       const std::string& prefix_cells = "") {
  os << prefix_header << "r,n,var,ci_lo,ci_hi,slope\n";
  for (const auto& rv : vs.radii) {
    os << prefix_cells << g17(rv.r) << ',' << rv.n << ',' << g17(rv.var) << ','
       << g17(rv.ci_lo) << ',' << g17(rv.ci_hi) << ',';
    if (!vs.degenerate) os << g17(vs.slope);
    os << '\n';
  }
}

template <int D>
void write_profile_csv(std::ostream& os, const SensitivityRecord<D>& rec,
                       const std::string& prefix_header = "",
                       const std::string& prefix_cells = "") {
  os << prefix_header << "bin_lo,bin_hi,mean_grad,n_blocks\n";
  for (size_t k = 0; k < rec.profile.size(); ++k) {
    os << prefix_cells << g17(double(k) * rec.bin_width) << ','
       << g17(double(k + 1) * rec.bin_width) << ',' << g17(rec.profile[k]) << ','
       << rec.profile_n[k] << '\n';
  }
}

}  // namespace perchom
