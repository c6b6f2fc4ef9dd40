#pragma once

// Poisson clouds over boxes. Points are drawn per integer unit cell from a
// stream keyed by (seed, cell), so clouds with the same seed agree wherever
// their boxes overlap, and a single centered unit cube can be resampled
// surgically without disturbing anything else.

#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "perchom/geometry.hpp"
#include "perchom/rng.hpp"

namespace perchom {

template <int D>
struct PointCloud {
  Box<D> box;
  double lambda = 0;
  uint64_t seed = 0;
  std::vector<Vec<D>> pts;
};

namespace detail {

// Integer cell coordinates packed into a 64-bit stream selector.
template <int D>
uint64_t pack_cell(const IVec<D>& k) {
  uint64_t r = 0;
  for (int i = 0; i < D; ++i) {
    const int64_t shifted = k[i] + (int64_t(1) << 20);
    if (shifted < 0 || shifted >= (int64_t(1) << 21))
      throw std::invalid_argument("cell coordinate out of packing range");
    r = (r << 21) | uint64_t(shifted);
  }
  return r;
}

// All points of cell k + [0,1)^d, in draw order.
template <int D>
void cell_points(uint64_t seed, const IVec<D>& k, double lambda,
                 std::vector<Vec<D>>& out) {
  Stream s(seed, StreamId::cloud, 0, pack_cell<D>(k));
  const uint32_t n = s.poisson(lambda);
  for (uint32_t j = 0; j < n; ++j) {
    Vec<D> x;
    for (int i = 0; i < D; ++i) x[i] = double(k[i]) + s.unit();
    out.push_back(x);
  }
}

template <int D>
void for_each_cell(const Box<D>& box, auto&& fn) {
  IVec<D> lo, hi;  // inclusive cell-coordinate range covering the box
  for (int i = 0; i < D; ++i) {
    lo[i] = int64_t(std::floor(box.lo[i]));
    hi[i] = int64_t(std::ceil(box.hi(i))) - 1;
  }
  IVec<D> k = lo;
  while (true) {
    fn(k);
    int axis = D - 1;
    while (axis >= 0) {
      if (++k[axis] <= hi[axis]) break;
      k[axis] = lo[axis];
      --axis;
    }
    if (axis < 0) break;
  }
}

}  // namespace detail

template <int D>
PointCloud<D> sample_poisson(const Box<D>& box, double lambda, uint64_t seed) {
  if (!(lambda > 0)) throw std::invalid_argument("intensity must be positive");
  if (box.side < 1) throw std::invalid_argument("degenerate box");
  PointCloud<D> cloud;
  cloud.box = box;
  cloud.lambda = lambda;
  cloud.seed = seed;
  std::vector<Vec<D>> cell;
  detail::for_each_cell<D>(box, [&](const IVec<D>& k) {
    cell.clear();
    detail::cell_points<D>(seed, k, lambda, cell);
    for (const Vec<D>& x : cell)
      if (box.contains(x)) cloud.pts.push_back(x);
  });
  return cloud;
}

// Redraws the points of the centered unit cube zeta + [-1/2, 1/2)^d from the
// streams of seed2, leaving every point outside it bit-identical. Gluing two
// independent Poisson processes along a deterministic spatial partition is
// again a Poisson process, so the result has the exact target law; with
// seed2 == seed the cloud is returned unchanged.
template <int D>
PointCloud<D> resample_cube(const PointCloud<D>& cloud, const IVec<D>& zeta,
                            uint64_t seed2) {
  Box<D> cube;
  cube.side = 1;
  for (int i = 0; i < D; ++i) {
    cube.lo[i] = double(zeta[i]) - 0.5;
    if (cube.lo[i] < cloud.box.lo[i] || cube.hi(i) > cloud.box.hi(i))
      throw std::invalid_argument("resample cube not inside the box");
  }
  PointCloud<D> out;
  out.box = cloud.box;
  out.lambda = cloud.lambda;
  out.seed = cloud.seed;
  out.pts.reserve(cloud.pts.size());
  for (const Vec<D>& x : cloud.pts)
    if (!cube.contains(x)) out.pts.push_back(x);
  std::vector<Vec<D>> cell;
  detail::for_each_cell<D>(cube, [&](const IVec<D>& k) {
    cell.clear();
    detail::cell_points<D>(seed2, k, cloud.lambda, cell);
    for (const Vec<D>& x : cell)
      if (cube.contains(x)) out.pts.push_back(x);
  });
  return out;
}

// All 3^{d(m-n)} level-n descendants of a triadic cube.
template <int D>
std::vector<TriadicCube<D>> triadic_decompose(const TriadicCube<D>& cube, int n) {
  if (n > cube.level) throw std::invalid_argument("target level above cube level");
  const int64_t cs = pow3(n);
  const int64_t per_axis = pow3(cube.level - n);
  const Box<D> b = cube.box();
  std::vector<TriadicCube<D>> out;
  out.reserve(ipow(per_axis, D));
  IVec<D> j{};
  while (true) {
    TriadicCube<D> c;
    c.level = n;
    for (int i = 0; i < D; ++i)
      c.center[i] = int64_t(b.lo[i] + 0.5 * double(cs)) + j[i] * cs;
    out.push_back(c);
    int axis = D - 1;
    while (axis >= 0) {
      if (++j[axis] < per_axis) break;
      j[axis] = 0;
      --axis;
    }
    if (axis < 0) break;
  }
  return out;
}

// Unit-cell spatial index for fixed-radius (<= 1) neighbor queries.
template <int D>
class CellIndex {
 public:
  CellIndex(const Box<D>& box, const std::vector<Vec<D>>& pts) : box_(box) {
    for (int i = 0; i < D; ++i) {
      lo_[i] = int64_t(std::floor(box.lo[i]));
      n_[i] = int64_t(std::ceil(box.hi(i))) - lo_[i];
    }
    int64_t cells = 1;
    for (int i = 0; i < D; ++i) cells *= n_[i];
    start_.assign(cells + 1, 0);
    std::vector<int64_t> cell_of(pts.size());
    for (size_t p = 0; p < pts.size(); ++p) {
      cell_of[p] = cell_id(pts[p]);
      ++start_[cell_of[p] + 1];
    }
    for (int64_t c = 0; c < cells; ++c) start_[c + 1] += start_[c];
    items_.resize(pts.size());
    std::vector<int64_t> cursor(start_.begin(), start_.end() - 1);
    for (size_t p = 0; p < pts.size(); ++p) items_[cursor[cell_of[p]]++] = uint32_t(p);
  }

  // Visits point indices of the 3^d cells around x (a superset of all
  // points within distance 1).
  void near(const Vec<D>& x, auto&& fn) const {
    IVec<D> c;
    for (int i = 0; i < D; ++i) c[i] = int64_t(std::floor(x[i])) - lo_[i];
    IVec<D> d{};
    for (int i = 0; i < D; ++i) d[i] = -1;
    while (true) {
      IVec<D> cc;
      bool ok = true;
      for (int i = 0; i < D; ++i) {
        cc[i] = c[i] + d[i];
        if (cc[i] < 0 || cc[i] >= n_[i]) ok = false;
      }
      if (ok) {
        int64_t id = 0;
        for (int i = 0; i < D; ++i) id = id * n_[i] + cc[i];
        for (int64_t s = start_[id]; s < start_[id + 1]; ++s) fn(items_[s]);
      }
      int axis = D - 1;
      while (axis >= 0) {
        if (++d[axis] <= 1) break;
        d[axis] = -1;
        --axis;
      }
      if (axis < 0) break;
    }
  }

  // Visits point indices of cells at Chebyshev distance exactly r from x's
  // cell; their points are all at Euclidean distance >= r-1 from x.
  void ring(const Vec<D>& x, int64_t r, auto&& fn) const {
    IVec<D> c;
    for (int i = 0; i < D; ++i) c[i] = int64_t(std::floor(x[i])) - lo_[i];
    IVec<D> d;
    for (int i = 0; i < D; ++i) d[i] = -r;
    while (true) {
      int64_t cheb = 0;
      for (int i = 0; i < D; ++i) cheb = std::max(cheb, std::abs(d[i]));
      if (cheb == r) {
        IVec<D> cc;
        bool ok = true;
        for (int i = 0; i < D; ++i) {
          cc[i] = c[i] + d[i];
          if (cc[i] < 0 || cc[i] >= n_[i]) ok = false;
        }
        if (ok) {
          int64_t id = 0;
          for (int i = 0; i < D; ++i) id = id * n_[i] + cc[i];
          for (int64_t s = start_[id]; s < start_[id + 1]; ++s) fn(items_[s]);
        }
      }
      int axis = D - 1;
      while (axis >= 0) {
        if (++d[axis] <= r) break;
        d[axis] = -r;
        --axis;
      }
      if (axis < 0) break;
    }
  }

  int64_t max_ring() const {
    int64_t m = 0;
    for (int i = 0; i < D; ++i) m = std::max(m, n_[i]);
    return m;
  }

 private:
  int64_t cell_id(const Vec<D>& x) const {
    int64_t id = 0;
    for (int i = 0; i < D; ++i) {
      int64_t c = int64_t(std::floor(x[i])) - lo_[i];
      if (c < 0) c = 0;
      if (c >= n_[i]) c = n_[i] - 1;
      id = id * n_[i] + c;
    }
    return id;
  }

  Box<D> box_;
  IVec<D> lo_{}, n_{};
  std::vector<int64_t> start_;
  std::vector<uint32_t> items_;
};

// Binary cloud file: magic "PCLD", version u16, d u16, lambda f64, seed u64,
// box lo then hi as d f64 each, count u64, then coordinates.
template <int D>
void write_pcld(const PointCloud<D>& cloud, const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path);
  auto put = [&](const void* p, size_t n) {
    if (std::fwrite(p, 1, n, f) != n) {
      std::fclose(f);
      throw std::runtime_error("short write to " + path);
    }
  };
  put("PCLD", 4);
  const uint16_t version = 1, dim = D;
  put(&version, 2);
  put(&dim, 2);
  put(&cloud.lambda, 8);
  put(&cloud.seed, 8);
  for (int i = 0; i < D; ++i) put(&cloud.box.lo[i], 8);
  for (int i = 0; i < D; ++i) {
    const double hi = cloud.box.hi(i);
    put(&hi, 8);
  }
  const uint64_t count = cloud.pts.size();
  put(&count, 8);
  for (const Vec<D>& x : cloud.pts)
    for (int i = 0; i < D; ++i) put(&x[i], 8);
  std::fclose(f);
}

template <int D>
PointCloud<D> read_pcld(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  auto get = [&](void* p, size_t n) {
    if (std::fread(p, 1, n, f) != n) {
      std::fclose(f);
      throw std::runtime_error("short read from " + path);
    }
  };
  char magic[4];
  get(magic, 4);
  if (std::memcmp(magic, "PCLD", 4) != 0) {
    std::fclose(f);
    throw std::runtime_error("bad magic in " + path);
  }
  uint16_t version = 0, dim = 0;
  get(&version, 2);
  get(&dim, 2);
  if (version != 1 || dim != D) {
    std::fclose(f);
    throw std::runtime_error("unsupported version or dimension in " + path);
  }
  PointCloud<D> cloud;
  get(&cloud.lambda, 8);
  get(&cloud.seed, 8);
  Vec<D> hi;
  for (int i = 0; i < D; ++i) get(&cloud.box.lo[i], 8);
  for (int i = 0; i < D; ++i) get(&hi[i], 8);
  cloud.box.side = int64_t(std::llround(hi[0] - cloud.box.lo[0]));
  uint64_t count = 0;
  get(&count, 8);
  cloud.pts.resize(count);
  for (uint64_t p = 0; p < count; ++p)
    for (int i = 0; i < D; ++i) get(&cloud.pts[p][i], 8);
  std::fclose(f);
  return cloud;
}

}  // namespace perchom
