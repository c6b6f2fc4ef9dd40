#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "perchom/cloud.hpp"

using namespace perchom;

namespace {

Box<2> unit_origin_box(int64_t side) {
  Box<2> b;
  b.lo = {0.0, 0.0};
  b.side = side;
  return b;
}

}  // namespace

TEST_CASE("same seed gives bit-identical clouds", "[cloud]") {
  const auto a = sample_poisson<2>(TriadicCube<2>{3, {0, 0}}.box(), 4.0, 7);
  const auto b = sample_poisson<2>(TriadicCube<2>{3, {0, 0}}.box(), 4.0, 7);
  REQUIRE(a.pts.size() == b.pts.size());
  for (size_t i = 0; i < a.pts.size(); ++i) REQUIRE(a.pts[i] == b.pts[i]);
}

TEST_CASE("clouds agree on overlapping regions across box sizes", "[cloud]") {
  const TriadicCube<2> small{2, {0, 0}};
  const auto inner = sample_poisson<2>(small.box(), 4.0, 19);
  const auto outer = sample_poisson<2>(TriadicCube<2>{3, {0, 0}}.box(), 4.0, 19);
  std::vector<Vec<2>> restricted;
  for (const auto& x : outer.pts)
    if (small.box().contains(x)) restricted.push_back(x);
  REQUIRE(restricted.size() == inner.pts.size());
  for (size_t i = 0; i < restricted.size(); ++i) REQUIRE(restricted[i] == inner.pts[i]);
}

TEST_CASE("vanishing intensity gives an empty cloud", "[cloud]") {
  const auto c = sample_poisson<2>(unit_origin_box(3), 1e-12, 5);
  CHECK(c.pts.empty());
}

TEST_CASE("invalid parameters are rejected", "[cloud]") {
  CHECK_THROWS(sample_poisson<2>(unit_origin_box(3), 0.0, 1));
  CHECK_THROWS(sample_poisson<2>(unit_origin_box(0), 1.0, 1));
  const auto c = sample_poisson<2>(unit_origin_box(3), 1.0, 1);
  CHECK_THROWS(resample_cube<2>(c, {0, 0}, 2));  // cube sticks out of the box
}

TEST_CASE("empirical intensity matches lambda", "[cloud]") {
  // spec example scale: lambda=4, box [0,81)^2, 100 seeds
  const double lambda = 4.0;
  const Box<2> box = unit_origin_box(81);
  double total = 0;
  const int N = 100;
  for (int s = 0; s < N; ++s) total += double(sample_poisson<2>(box, lambda, 1000 + s).pts.size());
  const double per_volume = total / (N * box.volume());
  const double se = std::sqrt(lambda / (N * box.volume()));
  CHECK(std::abs(per_volume - lambda) <= 4 * se);
}

TEST_CASE("resampling is local, exact, and distributionally correct", "[cloud]") {
  const auto base = sample_poisson<2>(TriadicCube<2>{2, {0, 0}}.box(), 4.0, 31);
  const IVec<2> zeta{1, -2};
  Box<2> cube;
  cube.side = 1;
  cube.lo = {0.5, -2.5};

  SECTION("same seed reproduces the cloud") {
    const auto same = resample_cube<2>(base, zeta, 31);
    REQUIRE(same.pts.size() == base.pts.size());
    // outside points keep their order; inside points are re-emitted at the
    // end, so compare as sets of coordinates
    auto sorted = [](std::vector<Vec<2>> v) {
      std::sort(v.begin(), v.end());
      return v;
    };
    CHECK(sorted(same.pts) == sorted(base.pts));
  }

  SECTION("points outside the cube are unchanged") {
    const auto re = resample_cube<2>(base, zeta, 77);
    std::vector<Vec<2>> out_base, out_re;
    for (const auto& x : base.pts)
      if (!cube.contains(x)) out_base.push_back(x);
    for (const auto& x : re.pts)
      if (!cube.contains(x)) out_re.push_back(x);
    REQUIRE(out_base.size() == out_re.size());
    for (size_t i = 0; i < out_base.size(); ++i) CHECK(out_base[i] == out_re[i]);
  }

  SECTION("resampled counts follow Poisson(lambda)") {
    // chi-square against Poisson(4) over bins {<=1, 2, 3, 4, 5, 6, >=7}
    const int N = 1000;
    int obs[7] = {0, 0, 0, 0, 0, 0, 0};
    for (int s = 0; s < N; ++s) {
      const auto re = resample_cube<2>(base, zeta, 10000 + s);
      int k = 0;
      for (const auto& x : re.pts) k += cube.contains(x);
      obs[k <= 1 ? 0 : (k >= 7 ? 6 : k - 1)]++;
    }
    const double lambda = 4.0;
    double pmf[8];
    double cum = 0;
    for (int k = 0; k < 8; ++k) {
      pmf[k] = std::exp(-lambda) * std::pow(lambda, k) / std::tgamma(k + 1.0);
      cum += pmf[k];
    }
    const double expect[7] = {N * (pmf[0] + pmf[1]), N * pmf[2], N * pmf[3],
                              N * pmf[4],            N * pmf[5], N * pmf[6],
                              N * (1.0 - cum + pmf[7])};
    double chi2 = 0;
    for (int b = 0; b < 7; ++b)
      chi2 += (obs[b] - expect[b]) * (obs[b] - expect[b]) / expect[b];
    // 1% critical value, chi-square with 6 degrees of freedom
    CHECK(chi2 < 16.812);
  }
}

TEST_CASE("triadic decomposition partitions the parent", "[cloud]") {
  const TriadicCube<2> parent{2, {9, -9}};
  CHECK(triadic_decompose<2>(parent, 2).size() == 1);
  const auto kids = triadic_decompose<2>(parent, 1);
  REQUIRE(kids.size() == 9);
  // children tile the parent: every probe point lies in exactly one child
  Stream s(3, StreamId::test, 0, 0);
  const Box<2> pb = parent.box();
  for (int t = 0; t < 200; ++t) {
    const Vec<2> x{pb.lo[0] + 9 * s.unit(), pb.lo[1] + 9 * s.unit()};
    int hits = 0;
    for (const auto& k : kids) hits += k.box().contains(x);
    REQUIRE(hits == 1);
  }
  CHECK_THROWS(triadic_decompose<2>(parent, 3));
}

TEST_CASE("cell index returns every point within distance 1", "[cloud]") {
  const auto cloud = sample_poisson<2>(TriadicCube<2>{2, {0, 0}}.box(), 3.0, 55);
  const CellIndex<2> index(cloud.box, cloud.pts);
  for (size_t p = 0; p < cloud.pts.size(); ++p) {
    std::vector<uint32_t> got;
    index.near(cloud.pts[p], [&](uint32_t q) {
      if (q != p && dist2<2>(cloud.pts[p], cloud.pts[q]) <= 1.0) got.push_back(q);
    });
    std::sort(got.begin(), got.end());
    std::vector<uint32_t> want;
    for (size_t q = 0; q < cloud.pts.size(); ++q)
      if (q != p && dist2<2>(cloud.pts[p], cloud.pts[q]) <= 1.0) want.push_back(uint32_t(q));
    REQUIRE(got == want);
  }
}

TEST_CASE("pcld files round-trip bit-exactly", "[cloud]") {
  const auto cloud = sample_poisson<3>(TriadicCube<3>{1, {0, 0, 0}}.box(), 2.0, 99);
  const std::string path = "/tmp/perchom_test_cloud.pcld";
  write_pcld<3>(cloud, path);
  const auto back = read_pcld<3>(path);
  std::remove(path.c_str());
  CHECK(back.lambda == cloud.lambda);
  CHECK(back.seed == cloud.seed);
  CHECK(back.box.lo == cloud.box.lo);
  CHECK(back.box.side == cloud.box.side);
  REQUIRE(back.pts.size() == cloud.pts.size());
  for (size_t i = 0; i < back.pts.size(); ++i) REQUIRE(back.pts[i] == cloud.pts[i]);
}
