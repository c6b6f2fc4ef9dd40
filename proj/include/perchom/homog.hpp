#pragma once

// Monte Carlo campaigns over centered triadic cubes: per-level averaged
// coefficient matrices with standard errors and a bracket extrapolation,
// additivity defects between consecutive levels, variance decay of the dual
// matrices, covariance of well-separated cubes, the convergence-rate fit,
// the multiscale energy statistic, and empirical minimal scales. One cloud
// per sample serves every level (common random numbers), and because mu and
// mu_star are exact quadratic forms, every J evaluation after the basis
// solves is pure matrix arithmetic on the stored records.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "perchom/cgq.hpp"
#include "perchom/cloud.hpp"
#include "perchom/cluster.hpp"
#include "perchom/geometry.hpp"
#include "perchom/mc.hpp"
#include "perchom/rng.hpp"
#include "perchom/solver.hpp"

namespace perchom {

// Certificate and solver policy for a campaign. Cubes at least
// loose_gap_side wide use a cheaper spectral-gap estimate: the gap enters
// goodness only through an order-1 threshold with ample margin, never
// through a reported statistic.
struct CampaignConfig {
  GoodnessConfig good;
  SolverOptions solve;
  int64_t loose_gap_side = 243;
  int loose_gap_iters = 4;
  double loose_gap_tol = 1e-3;
  int workers = 0;
};

inline GoodnessConfig goodness_for_side(const CampaignConfig& cfg, int64_t side) {
  GoodnessConfig g = cfg.good;
  if (side >= cfg.loose_gap_side) {
    g.gap_iters = cfg.loose_gap_iters;
    g.gap_inner_tol = cfg.loose_gap_tol;
  }
  return g;
}

// Every per-sample cloud seed derives from the campaign seed and the sample
// index through its own keyed stream.
inline uint64_t sample_seed(uint64_t seed, uint32_t tag, int64_t sample) {
  Stream s(seed, StreamId::experiment, tag, uint64_t(sample));
  return s.next_u64();
}

template <int D>
struct MatrixRecord {
  int level = 0;
  uint8_t indicator = 0;
  Eigen::Matrix<double, D, D> a = Eigen::Matrix<double, D, D>::Zero();
  Eigen::Matrix<double, D, D> astar_inv = Eigen::Matrix<double, D, D>::Zero();
};

template <int D>
struct CampaignData {
  double lambda = 0;
  int l = 1;
  std::vector<int> levels;
  int64_t n_samples = 0;
  uint64_t seed = 0;
  double theta = 0;  // cluster fraction used by the certificates
  std::vector<std::vector<MatrixRecord<D>>> recs;  // [sample][level index]
};

// Independent cloud per sample; the top-level box is sampled once and every
// level reads the nested centered cube out of it.
template <int D>
CampaignData<D> run_matrix_campaign(double lambda, const std::vector<int>& levels_in,
                                    int l, int64_t n_samples, uint64_t seed,
                                    const CampaignConfig& cfg = {}, double theta = -1) {
  if (levels_in.empty()) throw std::invalid_argument("campaign needs at least one level");
  std::vector<int> levels = levels_in;
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  if (pow3(l) > pow3(levels.front()))
    throw std::invalid_argument("coarsening level exceeds the smallest cube");

  CampaignData<D> data;
  data.lambda = lambda;
  data.l = l;
  data.levels = levels;
  data.n_samples = n_samples;
  data.seed = seed;
  data.theta = theta >= 0 ? theta
                          : estimate_theta<D>(lambda, D == 2 ? 4 : 3, 12,
                                              sample_seed(seed, 0x7e7au, 0))
                                .fraction;

  const int64_t top_side = pow3(levels.back());
  data.recs = map_samples(
      n_samples,
      [&](int64_t s) {
        const auto cloud = sample_poisson<D>(Box<D>::centered(top_side), lambda,
                                             sample_seed(seed, 0xc10du, s));
        std::vector<MatrixRecord<D>> row;
        row.reserve(levels.size());
        for (int m : levels) {
          TriadicCube<D> cube;
          cube.level = m;
          auto inst = make_instance(cloud, cube, l, data.theta,
                                    goodness_for_side(cfg, pow3(m)), cfg.solve);
          MatrixRecord<D> rec;
          rec.level = m;
          if (inst.good) {
            auto cm = assemble_matrices(inst, cfg.solve);
            rec.indicator = 1;
            rec.a = cm.a;
            rec.astar_inv = cm.astar_inv;
          }
          row.push_back(rec);
        }
        return row;
      },
      cfg.workers);
  return data;
}

template <int D>
struct LevelCoefficients {
  int level = 0;
  int64_t n = 0;
  int64_t n_good = 0;
  bool usable = false;
  Eigen::Matrix<double, D, D> abar = Eigen::Matrix<double, D, D>::Zero();
  Eigen::Matrix<double, D, D> abar_se = Eigen::Matrix<double, D, D>::Zero();
  Eigen::Matrix<double, D, D> abar_star = Eigen::Matrix<double, D, D>::Zero();
  Eigen::Matrix<double, D, D> abar_star_se = Eigen::Matrix<double, D, D>::Zero();
  Eigen::Matrix<double, D, D> mean_astar_inv = Eigen::Matrix<double, D, D>::Zero();
};

template <int D>
struct AveragedCoefficients {
  double lambda = 0;
  int l = 1;
  int64_t n_samples = 0;
  uint64_t seed = 0;
  double theta = 0;
  std::vector<LevelCoefficients<D>> levels;
  Eigen::Matrix<double, D, D> abar_extrapolated = Eigen::Matrix<double, D, D>::Zero();
  bool extrapolated = false;
};

// Conditional means over the good event: the Dirichlet matrix averages
// plainly, the dual one harmonically (inverse of the averaged inverse), so
// the exact per-sample ordering survives averaging by operator convexity.
// The dual standard error comes from the leave-one-out spread.
template <int D>
AveragedCoefficients<D> averaged_coefficients(const CampaignData<D>& c) {
  AveragedCoefficients<D> out;
  out.lambda = c.lambda;
  out.l = c.l;
  out.n_samples = c.n_samples;
  out.seed = c.seed;
  out.theta = c.theta;

  using Mat = Eigen::Matrix<double, D, D>;
  for (size_t k = 0; k < c.levels.size(); ++k) {
    LevelCoefficients<D> lev;
    lev.level = c.levels[k];
    lev.n = c.n_samples;
    std::vector<const MatrixRecord<D>*> good;
    for (const auto& row : c.recs)
      if (row[k].indicator) good.push_back(&row[k]);
    lev.n_good = int64_t(good.size());
    lev.usable = !good.empty();
    if (lev.usable) {
      const double ng = double(good.size());
      for (const auto* r : good) {
        lev.abar += r->a;
        lev.mean_astar_inv += r->astar_inv;
      }
      lev.abar /= ng;
      lev.mean_astar_inv /= ng;
      lev.abar_star = lev.mean_astar_inv.inverse();
      if (good.size() > 1) {
        Mat ss = Mat::Zero();
        for (const auto* r : good) {
          const Mat d = r->a - lev.abar;
          ss += d.cwiseProduct(d);
        }
        lev.abar_se = (ss / (ng - 1) / ng).cwiseSqrt();

        std::vector<Mat> loo;
        Mat loo_mean = Mat::Zero();
        for (size_t j = 0; j < good.size(); ++j) {
          const Mat m = (lev.mean_astar_inv * ng - good[j]->astar_inv) / (ng - 1);
          loo.push_back(m.inverse());
          loo_mean += loo.back();
        }
        loo_mean /= ng;
        Mat jk = Mat::Zero();
        for (const Mat& m : loo) {
          const Mat d = m - loo_mean;
          jk += d.cwiseProduct(d);
        }
        lev.abar_star_se = (jk * ((ng - 1) / ng)).cwiseSqrt();
      }
    }
    out.levels.push_back(lev);
  }

  // bracket midpoint at the last two usable levels, accelerated one step
  // assuming the defect shrinks by 3 per level
  const LevelCoefficients<D>* last = nullptr;
  const LevelCoefficients<D>* prev = nullptr;
  for (const auto& lev : out.levels)
    if (lev.usable) {
      prev = last;
      last = &lev;
    }
  if (last) {
    const Mat mid_last = 0.5 * (last->abar + last->abar_star);
    if (prev) {
      const Mat mid_prev = 0.5 * (prev->abar + prev->abar_star);
      out.abar_extrapolated = mid_last + 0.5 * (mid_last - mid_prev);
      out.extrapolated = true;
    } else {
      out.abar_extrapolated = mid_last;
    }
  }
  return out;
}

template <int D>
AveragedCoefficients<D> mc_coefficients(double lambda, const std::vector<int>& levels,
                                        int l, int64_t n_samples, uint64_t seed,
                                        const CampaignConfig& cfg = {}, double theta = -1) {
  return averaged_coefficients(
      run_matrix_campaign<D>(lambda, levels, l, n_samples, seed, cfg, theta));
}

// Additivity defect between consecutive levels: Frobenius norms of the
// successive differences of the two averaged-matrix estimates. The standard
// error is a paired bootstrap over samples (the levels share clouds).
struct TauEntry {
  int level_from = 0;
  int level_to = 0;
  double tau = 0;
  double se = 0;
};

struct TauSeries {
  std::vector<TauEntry> entries;
};

namespace detail {

template <int D>
bool level_pair_estimates(const CampaignData<D>& c, const std::vector<int64_t>& samples,
                          size_t k0, size_t k1, double& tau) {
  using Mat = Eigen::Matrix<double, D, D>;
  Mat a0 = Mat::Zero(), a1 = Mat::Zero(), b0 = Mat::Zero(), b1 = Mat::Zero();
  int64_t n0 = 0, n1 = 0;
  for (int64_t s : samples) {
    const auto& row = c.recs[size_t(s)];
    if (row[k0].indicator) {
      a0 += row[k0].a;
      b0 += row[k0].astar_inv;
      ++n0;
    }
    if (row[k1].indicator) {
      a1 += row[k1].a;
      b1 += row[k1].astar_inv;
      ++n1;
    }
  }
  if (n0 == 0 || n1 == 0) return false;
  a0 /= double(n0);
  a1 /= double(n1);
  const Mat s0 = (b0 / double(n0)).inverse();
  const Mat s1 = (b1 / double(n1)).inverse();
  tau = (a1 - a0).norm() + (s1 - s0).norm();
  return true;
}

}  // namespace detail

template <int D>
TauSeries tau_defect(const CampaignData<D>& c, int n_boot = 200) {
  TauSeries out;
  std::vector<int64_t> all;
  for (int64_t s = 0; s < c.n_samples; ++s) all.push_back(s);
  for (size_t k = 0; k + 1 < c.levels.size(); ++k) {
    if (c.levels[k + 1] != c.levels[k] + 1) continue;
    TauEntry e;
    e.level_from = c.levels[k];
    e.level_to = c.levels[k + 1];
    if (!detail::level_pair_estimates<D>(c, all, k, k + 1, e.tau)) continue;

    Stream s(c.seed, StreamId::experiment, 0x7a00u + uint32_t(k), 0);
    std::vector<double> reps;
    std::vector<int64_t> draw(size_t(c.n_samples));
    for (int b = 0; b < n_boot; ++b) {
      for (auto& d : draw)
        d = std::min<int64_t>(int64_t(s.unit() * double(c.n_samples)), c.n_samples - 1);
      double t = 0;
      if (detail::level_pair_estimates<D>(c, draw, k, k + 1, t)) reps.push_back(t);
    }
    e.se = summarize(reps).sd;
    out.entries.push_back(e);
  }
  if (out.entries.empty())
    throw std::invalid_argument("additivity defect needs consecutive levels");
  return out;
}

// Entrywise variance of the dual matrix over the good event, with
// percentile-bootstrap intervals and the per-step trace decay ratios.
template <int D>
struct LevelVariance {
  int level = 0;
  int64_t n_good = 0;
  Eigen::Matrix<double, D, D> var = Eigen::Matrix<double, D, D>::Zero();
  Eigen::Matrix<double, D, D> ci_lo = Eigen::Matrix<double, D, D>::Zero();
  Eigen::Matrix<double, D, D> ci_hi = Eigen::Matrix<double, D, D>::Zero();
  double trace_var = 0;
};

template <int D>
struct VarianceSeries {
  std::vector<LevelVariance<D>> levels;
  std::vector<double> step_ratio;
};

template <int D>
VarianceSeries<D> variance_experiment(const CampaignData<D>& c, int n_boot = 400) {
  VarianceSeries<D> out;
  for (size_t k = 0; k < c.levels.size(); ++k) {
    LevelVariance<D> lev;
    lev.level = c.levels[k];
    std::vector<const MatrixRecord<D>*> good;
    for (const auto& row : c.recs)
      if (row[k].indicator) good.push_back(&row[k]);
    lev.n_good = int64_t(good.size());
    if (good.size() > 1) {
      for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) {
          std::vector<double> xs;
          xs.reserve(good.size());
          for (const auto* r : good) xs.push_back(r->astar_inv(i, j));
          const auto st = summarize(xs);
          lev.var(i, j) = st.sd * st.sd;
          auto var_stat = [](const std::vector<double>& v) {
            const auto s = summarize(v);
            return s.sd * s.sd;
          };
          const auto ci = bootstrap_ci(
              xs, var_stat, n_boot,
              Stream(c.seed, StreamId::experiment,
                     0x7b00u + uint32_t(k), uint64_t(i * D + j)));
          lev.ci_lo(i, j) = ci.first;
          lev.ci_hi(i, j) = ci.second;
        }
      lev.trace_var = lev.var.trace();
    }
    out.levels.push_back(lev);
  }
  for (size_t k = 0; k + 1 < out.levels.size(); ++k) {
    const double a = out.levels[k].trace_var, b = out.levels[k + 1].trace_var;
    out.step_ratio.push_back(a > 0 ? b / a : 0.0);
  }
  return out;
}

// Covariance of the dual matrix entry (0,0) on two cubes of the same level
// separated by a full cube of empty space; the keyed cloud makes the two
// regions exactly independent, so the truth is zero.
struct SeparatedCovariance {
  int level = 0;
  int64_t n_pairs = 0;
  double cov = 0;
  double se = 0;
};

template <int D>
SeparatedCovariance separated_covariance(double lambda, double theta, int level, int l,
                                         int64_t n_samples, uint64_t seed,
                                         const CampaignConfig& cfg = {}) {
  const int64_t side = pow3(level);
  Box<D> box;
  box.side = 3 * side;
  box.lo[0] = -0.5 * double(side);
  for (int i = 1; i < D; ++i) box.lo[i] = -1.5 * double(side);
  TriadicCube<D> near, far;
  near.level = far.level = level;
  far.center[0] = 2 * side;

  struct Pair {
    uint8_t ok = 0;
    double x = 0, y = 0;
  };
  auto pairs = map_samples(
      n_samples,
      [&](int64_t s) {
        const auto cloud =
            sample_poisson<D>(box, lambda, sample_seed(seed, 0xcafeu, s));
        auto ia = make_instance(cloud, near, l, theta, goodness_for_side(cfg, side),
                                cfg.solve);
        auto ib = make_instance(cloud, far, l, theta, goodness_for_side(cfg, side),
                                cfg.solve);
        Pair p;
        if (ia.good && ib.good) {
          p.ok = 1;
          p.x = assemble_matrices(ia, cfg.solve).astar_inv(0, 0);
          p.y = assemble_matrices(ib, cfg.solve).astar_inv(0, 0);
        }
        return p;
      },
      cfg.workers);

  std::vector<double> xs, ys;
  for (const auto& p : pairs)
    if (p.ok) {
      xs.push_back(p.x);
      ys.push_back(p.y);
    }
  SeparatedCovariance out;
  out.level = level;
  out.n_pairs = int64_t(xs.size());
  if (out.n_pairs < 2) return out;

  auto cov_of = [](const std::vector<double>& x, const std::vector<double>& y) {
    const int64_t n = int64_t(x.size());
    double mx = 0, my = 0;
    for (int64_t i = 0; i < n; ++i) {
      mx += x[size_t(i)];
      my += y[size_t(i)];
    }
    mx /= double(n);
    my /= double(n);
    double cv = 0;
    for (int64_t i = 0; i < n; ++i)
      cv += (x[size_t(i)] - mx) * (y[size_t(i)] - my);
    return cv / double(n - 1);
  };
  out.cov = cov_of(xs, ys);

  Stream s(seed, StreamId::experiment, 0xc0feu, 0);
  std::vector<double> reps;
  std::vector<double> bx(xs.size()), by(ys.size());
  for (int b = 0; b < 400; ++b) {
    for (size_t i = 0; i < xs.size(); ++i) {
      const size_t j = size_t(std::min<int64_t>(
          int64_t(s.unit() * double(xs.size())), int64_t(xs.size()) - 1));
      bx[i] = xs[j];
      by[i] = ys[j];
    }
    reps.push_back(cov_of(bx, by));
  }
  out.se = summarize(reps).sd;
  return out;
}

// Rate of decay of the master quantity at the averaged dual direction:
// F(m) = sum_i mean[ J(box_m, e_i, abar_star(m) e_i) ] over good samples,
// evaluated through the stored quadratic forms; the exponent comes from the
// log-least-squares fit against m log 3.
struct RateFit {
  std::vector<int> levels;
  std::vector<double> F, F_se;
  std::vector<double> F_tilde;
  double alpha_hat = 0;
  double alpha_se = 0;
  bool reliable = false;
  std::vector<double> E_mean, E_se;  // multiscale statistic, when computed
};

template <int D>
double quadratic_J(const MatrixRecord<D>& rec, const std::type_identity_t<Vec<D>>& p,
                   const std::type_identity_t<Vec<D>>& q) {
  Eigen::Matrix<double, D, 1> pv, qv;
  for (int i = 0; i < D; ++i) {
    pv[i] = p[i];
    qv[i] = q[i];
  }
  return 0.5 * pv.dot(rec.a * pv) + 0.5 * qv.dot(rec.astar_inv * qv) - pv.dot(qv);
}

template <int D>
RateFit rate_fit(const CampaignData<D>& c, const AveragedCoefficients<D>& coeffs) {
  if (c.levels.size() < 3)
    throw std::invalid_argument("rate fit needs at least three levels");
  RateFit out;
  for (size_t k = 0; k < c.levels.size(); ++k) {
    const auto& lev = coeffs.levels[k];
    if (!lev.usable || lev.n_good < 2) continue;
    std::vector<double> js;
    for (const auto& row : c.recs) {
      if (!row[k].indicator) continue;
      double jsum = 0;
      for (int i = 0; i < D; ++i) {
        Vec<D> e{}, q{};
        e[i] = 1.0;
        for (int j = 0; j < D; ++j) q[j] = lev.abar_star(j, i);
        jsum += quadratic_J(row[k], e, q);
      }
      js.push_back(jsum);
    }
    const auto st = summarize(js);
    out.levels.push_back(c.levels[k]);
    out.F.push_back(st.mean);
    out.F_se.push_back(st.se);
  }

  for (size_t k = 0; k < out.levels.size(); ++k) {
    double acc = 0;
    for (size_t j = 0; j <= k; ++j)
      acc += std::pow(3.0, -double(out.levels[k] - out.levels[j])) * out.F[j];
    out.F_tilde.push_back(acc);
  }

  std::vector<double> xs, ys;
  for (size_t k = 0; k < out.levels.size(); ++k)
    if (out.F[k] > 0) {
      xs.push_back(double(out.levels[k]) * std::log(3.0));
      ys.push_back(std::log(out.F[k]));
    }
  out.reliable = xs.size() == out.F.size() && xs.size() >= 3;
  for (size_t k = 0; k < out.F.size(); ++k)
    if (!(out.F[k] > 2.0 * out.F_se[k])) out.reliable = false;
  if (xs.size() >= 2) {
    out.alpha_hat = -fit_slope(xs, ys);
    if (xs.size() > 2) {
      const double slope = -out.alpha_hat;
      double mx = 0;
      for (double x : xs) mx += x;
      mx /= double(xs.size());
      double my = 0;
      for (double y : ys) my += y;
      my /= double(xs.size());
      double ssr = 0, sxx = 0;
      for (size_t k = 0; k < xs.size(); ++k) {
        const double r = ys[k] - my - slope * (xs[k] - mx);
        ssr += r * r;
        sxx += (xs[k] - mx) * (xs[k] - mx);
      }
      out.alpha_se = std::sqrt(ssr / double(xs.size() - 2) / sxx);
    }
  }
  return out;
}

// Multiscale energy statistic of a cube of level m: levels n from
// ceil(beta m) to m, weight 3^{n-m}, average over the level-n subcubes of
// sum_i J(subcube, e_i, abar e_i) with the indicator inside the average.
// The coarsening level is ceil(beta m) throughout, so the smallest term
// runs through the single-block coarsening.
struct EStatistic {
  std::vector<int> m_values;
  double beta = 0.5;
  std::vector<double> mean, se;
};

template <int D>
double e_statistic_sample(const PointCloud<D>& cloud, int m, double beta, double theta,
                          const Eigen::Matrix<double, D, D>& abar,
                          const CampaignConfig& cfg = {}) {
  const int l = std::max(1, int(std::ceil(beta * double(m) - 1e-12)));
  TriadicCube<D> top;
  top.level = m;
  double total = 0;
  for (int n = l; n <= m; ++n) {
    const auto cubes = descendant_cubes(top, n);
    double acc = 0;
    for (const auto& cube : cubes) {
      auto inst = make_instance(cloud, cube, l, theta,
                                goodness_for_side(cfg, pow3(n)), cfg.solve);
      if (!inst.good) continue;
      auto cm = assemble_matrices(inst, cfg.solve);
      MatrixRecord<D> rec{n, 1, cm.a, cm.astar_inv};
      for (int i = 0; i < D; ++i) {
        Vec<D> e{}, q{};
        e[i] = 1.0;
        for (int j = 0; j < D; ++j) q[j] = abar(j, i);
        acc += quadratic_J(rec, e, q);
      }
    }
    total += std::pow(3.0, double(n - m)) * acc / double(cubes.size());
  }
  return total;
}

template <int D>
EStatistic e_statistic(double lambda, double theta, const std::vector<int>& m_values,
                       double beta, const Eigen::Matrix<double, D, D>& abar,
                       int64_t n_samples, uint64_t seed, const CampaignConfig& cfg = {}) {
  if (!(beta > 0 && beta < 1)) throw std::invalid_argument("beta must lie in (0,1)");
  EStatistic out;
  out.m_values = m_values;
  out.beta = beta;
  int top = 0;
  for (int m : m_values) top = std::max(top, m);
  const int64_t top_side = pow3(top);

  auto rows = map_samples(
      n_samples,
      [&](int64_t s) {
        const auto cloud = sample_poisson<D>(Box<D>::centered(top_side), lambda,
                                             sample_seed(seed, 0xe57au, s));
        std::vector<double> row;
        for (int m : m_values)
          row.push_back(e_statistic_sample<D>(cloud, m, beta, theta, abar, cfg));
        return row;
      },
      cfg.workers);

  for (size_t k = 0; k < m_values.size(); ++k) {
    std::vector<double> xs;
    for (const auto& row : rows) xs.push_back(row[k]);
    const auto st = summarize(xs);
    out.mean.push_back(st.mean);
    out.se.push_back(st.se);
  }
  return out;
}

// Per-sample smallest level from which every tested level upward passes its
// criteria; samples failing even the top level are censored one past it.
struct ScaleCriteria {
  std::vector<int> levels;          // ascending tested range
  bool require_good = true;         // the cube's own certificate
  double child_good_fraction = 0;   // > 0: fraction of good level-(m-1) children
};

struct MinimalScale {
  std::vector<int> levels;
  std::vector<int64_t> histogram;  // minimal passing level counts, then censored
  int64_t censored = 0;
  int64_t n_samples = 0;
  double q50 = 0, q90 = 0;  // censored samples count as one past the top level
};

template <int D>
MinimalScale estimate_minimal_scale(double lambda, double theta, const ScaleCriteria& crit,
                                    int l, int64_t n_samples, uint64_t seed,
                                    const CampaignConfig& cfg = {}) {
  if (crit.levels.empty()) throw std::invalid_argument("criteria need levels");
  std::vector<int> levels = crit.levels;
  std::sort(levels.begin(), levels.end());
  if (pow3(l) > pow3(levels.front()))
    throw std::invalid_argument("coarsening level exceeds the smallest tested cube");
  if (crit.child_good_fraction > 0 && levels.front() - 1 < l)
    throw std::invalid_argument("child criterion needs children at least as coarse as l");

  const int64_t top_side = pow3(levels.back());
  auto minimal = map_samples(
      n_samples,
      [&](int64_t s) {
        const auto cloud = sample_poisson<D>(Box<D>::centered(top_side), lambda,
                                             sample_seed(seed, 0x5ca1u, s));
        int64_t min_level = levels.back() + 1;  // censored until proven otherwise
        for (size_t k = levels.size(); k-- > 0;) {
          const int m = levels[k];
          TriadicCube<D> cube;
          cube.level = m;
          bool pass = true;
          if (crit.require_good) {
            auto inst = make_instance(cloud, cube, l, theta,
                                      goodness_for_side(cfg, pow3(m)), cfg.solve);
            pass = inst.good;
          }
          if (pass && crit.child_good_fraction > 0) {
            const auto children = descendant_cubes(cube, m - 1);
            int64_t ok = 0;
            for (const auto& ch : children) {
              auto ci = make_instance(cloud, ch, l, theta,
                                      goodness_for_side(cfg, pow3(m - 1)), cfg.solve);
              if (ci.good) ++ok;
            }
            pass = double(ok) >= crit.child_good_fraction * double(children.size());
          }
          if (!pass) break;
          min_level = m;
        }
        return min_level;
      },
      cfg.workers);

  MinimalScale out;
  out.levels = levels;
  out.n_samples = n_samples;
  out.histogram.assign(levels.size(), 0);
  std::vector<double> vals;
  for (int64_t m : minimal) {
    vals.push_back(double(m));
    if (m > levels.back()) {
      ++out.censored;
    } else {
      const auto it = std::lower_bound(levels.begin(), levels.end(), int(m));
      ++out.histogram[size_t(it - levels.begin())];
    }
  }
  std::sort(vals.begin(), vals.end());
  auto quant = [&](double p) {
    const size_t k = std::min(vals.size() - 1, size_t(p * double(vals.size())));
    return vals[k];
  };
  if (!vals.empty()) {
    out.q50 = quant(0.5);
    out.q90 = quant(0.9);
  }
  return out;
}

// Per-level summary CSV. Cells undefined at a level (the defect of the first
// level, fit columns when absent) stay empty. The optional prefix lets the
// caller prepend run identification to the header and every row.
template <int D>
void write_homog_csv(std::ostream& os, const AveragedCoefficients<D>& co,
                     const TauSeries* tau = nullptr, const RateFit* fit = nullptr,
                     const std::string& prefix_header = "",
                     const std::string& prefix_cells = "") {
  std::string h = prefix_header.empty() ? "" : prefix_header + ",";
  h += "level,l,n,n_good";
  auto block = [&](const std::string& base) {
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j)
        h += "," + base + "_" + std::to_string(i + 1) + std::to_string(j + 1);
  };
  block("a");
  block("a_se");
  block("astar");
  block("astar_se");
  os << h << ",tau,tau_se,F,F_se,F_tilde,E,E_se,alpha_hat\n";

  for (size_t k = 0; k < co.levels.size(); ++k) {
    const auto& lev = co.levels[k];
    std::string line = prefix_cells.empty() ? "" : prefix_cells + ",";
    line += std::to_string(lev.level) + "," + std::to_string(co.l) + "," +
            std::to_string(lev.n) + "," + std::to_string(lev.n_good);
    auto mat = [&](const Eigen::Matrix<double, D, D>& m) {
      for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) line += "," + g17(m(i, j));
    };
    mat(lev.abar);
    mat(lev.abar_se);
    mat(lev.abar_star);
    mat(lev.abar_star_se);

    std::string tau_c, tau_se_c;
    if (tau)
      for (const auto& e : tau->entries)
        if (e.level_to == lev.level) {
          tau_c = g17(e.tau);
          tau_se_c = g17(e.se);
        }
    std::string f_c, f_se_c, ft_c, e_c, e_se_c, al_c;
    if (fit) {
      for (size_t j = 0; j < fit->levels.size(); ++j)
        if (fit->levels[j] == lev.level) {
          f_c = g17(fit->F[j]);
          f_se_c = g17(fit->F_se[j]);
          ft_c = g17(fit->F_tilde[j]);
          if (j < fit->E_mean.size()) {
            e_c = g17(fit->E_mean[j]);
            e_se_c = g17(fit->E_se[j]);
          }
        }
      al_c = g17(fit->alpha_hat);
    }
    line += "," + tau_c + "," + tau_se_c + "," + f_c + "," + f_se_c + "," + ft_c +
            "," + e_c + "," + e_se_c + "," + al_c;
    os << line << "\n";
  }
}

// One JSON object per (sample, level) with the raw matrices.
template <int D>
void write_raw_jsonl(std::ostream& os, const CampaignData<D>& c) {
  for (int64_t s = 0; s < int64_t(c.recs.size()); ++s) {
    for (const auto& rec : c.recs[size_t(s)]) {
      nlohmann::json j;
      j["seed"] = c.seed;
      j["sample"] = s;
      j["level"] = rec.level;
      j["l"] = c.l;
      j["indicator"] = int(rec.indicator);
      auto dump = [](const Eigen::Matrix<double, D, D>& m) {
        std::vector<std::vector<double>> rows;
        for (int i = 0; i < D; ++i) {
          std::vector<double> r;
          for (int jj = 0; jj < D; ++jj) r.push_back(m(i, jj));
          rows.push_back(r);
        }
        return rows;
      };
      j["a"] = dump(rec.a);
      j["astar_inv"] = dump(rec.astar_inv);
      os << j.dump() << "\n";
    }
  }
}

}  // namespace perchom
