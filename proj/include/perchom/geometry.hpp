#pragma once

// Boxes, the triadic cube hierarchy, block partitions, and the integer
// lattice inside a box. Triadic cubes of level m have side 3^m and centers on
// (3^m Z)^d, so their corners sit on half-integers; a box of integer side s
// contains exactly s integer lattice coordinates per axis either way.

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>

namespace perchom {

template <int D>
using Vec = std::array<double, D>;
template <int D>
using IVec = std::array<int64_t, D>;

inline int64_t pow3(int m) {
  int64_t r = 1;
  while (m-- > 0) r *= 3;
  return r;
}

inline int64_t ipow(int64_t b, int e) {
  int64_t r = 1;
  while (e-- > 0) r *= b;
  return r;
}

template <size_t N>
double dist2(const std::array<double, N>& a, const std::array<double, N>& b) {
  double s = 0;
  for (size_t i = 0; i < N; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

template <int D>
struct Box {
  Vec<D> lo{};
  int64_t side = 0;

  double hi(int i) const { return lo[i] + double(side); }
  double volume() const { return std::pow(double(side), D); }

  bool contains(const Vec<D>& x) const {
    for (int i = 0; i < D; ++i)
      if (x[i] < lo[i] || x[i] >= hi(i)) return false;
    return true;
  }

  static Box centered(int64_t side) {
    Box b;
    b.side = side;
    for (int i = 0; i < D; ++i) b.lo[i] = -0.5 * double(side);
    return b;
  }
};

template <int D>
struct TriadicCube {
  int level = 0;
  IVec<D> center{};  // element of (3^level Z)^d

  int64_t side() const { return pow3(level); }

  Box<D> box() const {
    Box<D> b;
    b.side = side();
    for (int i = 0; i < D; ++i) b.lo[i] = double(center[i]) - 0.5 * double(b.side);
    return b;
  }
};

// The unique level-m cube containing x.
template <int D>
TriadicCube<D> containing_cube(int level, const Vec<D>& x) {
  TriadicCube<D> c;
  c.level = level;
  const double s = double(pow3(level));
  for (int i = 0; i < D; ++i)
    c.center[i] = int64_t(s) * int64_t(std::floor((x[i] + 0.5 * s) / s));
  return c;
}

// Partition of a box into cubic blocks of side bs (bs must divide side).
// For a triadic cube and bs = 3^l these are exactly the level-l subcubes
// centered on (3^l Z)^d; the outermost layer is the boundary collar.
template <int D>
struct BlockGrid {
  Box<D> box;
  int64_t bs = 1;
  int64_t nb = 0;  // blocks per axis

  BlockGrid() = default;
  BlockGrid(const Box<D>& b, int64_t block_side) : box(b), bs(block_side) {
    assert(b.side % block_side == 0);
    nb = b.side / block_side;
  }

  int64_t count() const { return ipow(nb, D); }

  IVec<D> coords_of_point(const Vec<D>& x) const {
    IVec<D> c;
    for (int i = 0; i < D; ++i) {
      int64_t j = int64_t(std::floor((x[i] - box.lo[i]) / double(bs)));
      c[i] = j < 0 ? 0 : (j >= nb ? nb - 1 : j);
    }
    return c;
  }

  int64_t index(const IVec<D>& c) const {
    int64_t r = 0;
    for (int i = 0; i < D; ++i) r = r * nb + c[i];
    return r;
  }

  IVec<D> coords(int64_t idx) const {
    IVec<D> c;
    for (int i = D - 1; i >= 0; --i) {
      c[i] = idx % nb;
      idx /= nb;
    }
    return c;
  }

  int64_t index_of_point(const Vec<D>& x) const { return index(coords_of_point(x)); }

  bool is_collar(int64_t idx) const {
    const IVec<D> c = coords(idx);
    for (int i = 0; i < D; ++i)
      if (c[i] == 0 || c[i] == nb - 1) return true;
    return false;
  }

  int64_t collar_count() const {
    if (nb <= 2) return count();
    return count() - ipow(nb - 2, D);
  }

  Box<D> block_box(int64_t idx) const {
    const IVec<D> c = coords(idx);
    Box<D> b;
    b.side = bs;
    for (int i = 0; i < D; ++i) b.lo[i] = box.lo[i] + double(c[i] * bs);
    return b;
  }
};

// Integer lattice points Z^d inside a box: exactly side points per axis.
template <int D>
struct LatticeGrid {
  IVec<D> first{};
  int64_t n = 0;

  LatticeGrid() = default;
  explicit LatticeGrid(const Box<D>& b) : n(b.side) {
    for (int i = 0; i < D; ++i) first[i] = int64_t(std::ceil(b.lo[i]));
  }

  int64_t count() const { return ipow(n, D); }

  int64_t index(const IVec<D>& p) const {
    int64_t r = 0;
    for (int i = 0; i < D; ++i) {
      assert(p[i] >= first[i] && p[i] < first[i] + n);
      r = r * n + (p[i] - first[i]);
    }
    return r;
  }

  IVec<D> point(int64_t idx) const {
    IVec<D> p;
    for (int i = D - 1; i >= 0; --i) {
      p[i] = first[i] + idx % n;
      idx /= n;
    }
    return p;
  }
};

}  // namespace perchom
