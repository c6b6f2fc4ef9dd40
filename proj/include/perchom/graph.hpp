#pragma once

// Unit-distance graph on a point cloud (edge iff |x-y| <= 1, squared-distance
// test) in CSR form, plus connected components via union-find.

#include <algorithm>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "perchom/cloud.hpp"
#include "perchom/geometry.hpp"

namespace perchom {

template <int D>
struct Graph {
  std::vector<Vec<D>> pts;
  std::vector<int64_t> xadj;  // size n+1
  std::vector<uint32_t> adj;  // both directions, sorted per vertex

  int64_t n() const { return int64_t(pts.size()); }
  int64_t degree(int64_t v) const { return xadj[v + 1] - xadj[v]; }
  int64_t edge_count() const { return int64_t(adj.size()) / 2; }

  auto neighbors(int64_t v) const {
    struct Range {
      const uint32_t* b;
      const uint32_t* e;
      const uint32_t* begin() const { return b; }
      const uint32_t* end() const { return e; }
    };
    return Range{adj.data() + xadj[v], adj.data() + xadj[v + 1]};
  }
};

template <int D>
Graph<D> build_unit_graph(const Box<D>& box, std::type_identity_t<std::vector<Vec<D>>> pts) {
  Graph<D> g;
  g.pts = std::move(pts);
  const int64_t n = g.n();
  const CellIndex<D> index(box, g.pts);
  std::vector<std::pair<uint32_t, uint32_t>> edges;
  for (int64_t p = 0; p < n; ++p) {
    index.near(g.pts[p], [&](uint32_t q) {
      if (int64_t(q) > p && dist2<D>(g.pts[p], g.pts[q]) <= 1.0)
        edges.emplace_back(uint32_t(p), q);
    });
  }
  g.xadj.assign(n + 1, 0);
  for (const auto& [a, b] : edges) {
    ++g.xadj[a + 1];
    ++g.xadj[b + 1];
  }
  for (int64_t v = 0; v < n; ++v) g.xadj[v + 1] += g.xadj[v];
  g.adj.resize(edges.size() * 2);
  std::vector<int64_t> cursor(g.xadj.begin(), g.xadj.end() - 1);
  for (const auto& [a, b] : edges) {
    g.adj[cursor[a]++] = b;
    g.adj[cursor[b]++] = a;
  }
  for (int64_t v = 0; v < n; ++v)
    std::sort(g.adj.begin() + g.xadj[v], g.adj.begin() + g.xadj[v + 1]);
  return g;
}

template <int D>
Graph<D> build_unit_graph(const PointCloud<D>& cloud) {
  return build_unit_graph<D>(cloud.box, cloud.pts);
}

struct Components {
  std::vector<int32_t> label;       // dense ids in order of first appearance
  std::vector<int64_t> size;        // by label
  std::vector<int64_t> any_member;  // lowest vertex per label

  int32_t count() const { return int32_t(size.size()); }

  // label of a largest component (ties: smallest label)
  int32_t largest() const {
    int32_t best = 0;
    for (int32_t c = 1; c < count(); ++c)
      if (size[c] > size[best]) best = c;
    return best;
  }
};

template <int D>
Components connected_components(const Graph<D>& g) {
  const int64_t n = g.n();
  std::vector<uint32_t> parent(n);
  for (int64_t v = 0; v < n; ++v) parent[v] = uint32_t(v);
  auto find = [&](uint32_t v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  };
  for (int64_t v = 0; v < n; ++v)
    for (uint32_t w : g.neighbors(v)) {
      const uint32_t a = find(uint32_t(v)), b = find(w);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  Components comps;
  comps.label.assign(n, -1);
  for (int64_t v = 0; v < n; ++v) {
    const uint32_t root = find(uint32_t(v));
    if (comps.label[root] < 0) {
      comps.label[root] = comps.count();
      comps.size.push_back(0);
      comps.any_member.push_back(v);
    }
    comps.label[v] = comps.label[root];
    ++comps.size[comps.label[v]];
  }
  return comps;
}

}  // namespace perchom
