#include <catch2/catch_amalgamated.hpp>

#include "perchom/geometry.hpp"

using namespace perchom;

TEST_CASE("triadic cube boxes follow the centered convention", "[geometry]") {
  TriadicCube<2> c{2, {9, -9}};
  const Box<2> b = c.box();
  CHECK(b.side == 9);
  CHECK(b.lo[0] == 4.5);
  CHECK(b.lo[1] == -13.5);
  CHECK(b.contains({9.0, -9.0}));
  CHECK_FALSE(b.contains({13.5, -9.0}));  // half-open on the high side
  CHECK(b.contains({4.5, -13.5}));
}

TEST_CASE("containing cube inverts membership", "[geometry]") {
  for (double x : {-41.2, -13.6, -0.3, 0.0, 8.9, 39.99}) {
    for (double y : {-40.0, -4.51, 4.49, 27.1}) {
      const Vec<2> p{x, y};
      for (int level : {0, 1, 2, 3}) {
        const auto c = containing_cube<2>(level, p);
        CHECK(c.box().contains(p));
        CHECK(c.center[0] % pow3(level) == 0);
        CHECK(c.center[1] % pow3(level) == 0);
      }
    }
  }
}

TEST_CASE("block grid partitions a triadic cube into subcubes", "[geometry]") {
  // level-2 cube, level-1 blocks: 9 blocks in d=2, 8 of them collar
  const TriadicCube<2> cube{2, {0, 0}};
  const BlockGrid<2> grid(cube.box(), 3);
  CHECK(grid.nb == 3);
  CHECK(grid.count() == 9);
  CHECK(grid.collar_count() == 8);
  int collar = 0;
  for (int64_t i = 0; i < grid.count(); ++i) collar += grid.is_collar(i);
  CHECK(collar == 8);

  // block boxes are the centered level-1 subcubes: centers on 3Z^2
  for (int64_t i = 0; i < grid.count(); ++i) {
    const Box<2> bb = grid.block_box(i);
    CHECK(bb.side == 3);
    const double cx = bb.lo[0] + 1.5, cy = bb.lo[1] + 1.5;
    CHECK(int64_t(cx) % 3 == 0);
    CHECK(int64_t(cy) % 3 == 0);
    CHECK(cx == double(int64_t(cx)));
  }
}

TEST_CASE("collar counts match direct enumeration brute force", "[geometry]") {
  // counts frozen from (nb^d - (nb-2)^d)
  const TriadicCube<2> c4{4, {0, 0}};
  CHECK(BlockGrid<2>(c4.box(), 3).collar_count() == 27 * 27 - 25 * 25);
  CHECK(BlockGrid<2>(c4.box(), 9).collar_count() == 9 * 9 - 7 * 7);
  const TriadicCube<3> c3{3, {0, 0, 0}};
  CHECK(BlockGrid<3>(c3.box(), 3).collar_count() == 9 * 9 * 9 - 7 * 7 * 7);
}

TEST_CASE("point-to-block mapping is consistent with block boxes", "[geometry]") {
  const TriadicCube<2> cube{3, {0, 0}};
  const BlockGrid<2> grid(cube.box(), 3);
  for (double x : {-13.5, -13.4999, -0.1, 0.0, 4.3, 13.49}) {
    for (double y : {-13.5, -7.7, 0.0, 9.1, 13.49}) {
      const Vec<2> p{x, y};
      const int64_t idx = grid.index_of_point(p);
      CHECK(grid.block_box(idx).contains(p));
    }
  }
}

TEST_CASE("lattice grid enumerates the integers in a box", "[geometry]") {
  const TriadicCube<2> cube{2, {9, 0}};  // box [4.5,13.5) x [-4.5,4.5)
  const LatticeGrid<2> lat(cube.box());
  CHECK(lat.n == 9);
  CHECK(lat.count() == 81);
  CHECK(lat.first[0] == 5);
  CHECK(lat.first[1] == -4);
  for (int64_t i = 0; i < lat.count(); ++i) {
    const IVec<2> p = lat.point(i);
    CHECK(lat.index(p) == i);
    CHECK(cube.box().contains({double(p[0]), double(p[1])}));
  }
}

TEST_CASE("integer-cornered boxes also get exactly side lattice points", "[geometry]") {
  Box<2> b;
  b.lo = {-6.0, 2.0};
  b.side = 12;
  const LatticeGrid<2> lat(b);
  CHECK(lat.count() == 144);
  CHECK(lat.first[0] == -6);
  CHECK(lat.first[1] == 2);
}
