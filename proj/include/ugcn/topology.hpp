#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ugcn/errors.hpp"
#include "ugcn/tensor.hpp"

namespace ugcn {

// Joint tree: parents[root] == -1, every other entry a valid joint index.
struct SkeletonTopology {
  std::vector<int> parents;
  int root = -1;
  std::vector<std::string> names;  // optional, empty or size N
  std::vector<int> depths;         // root has depth 0
  std::string name;

  std::size_t joint_count() const { return parents.size(); }

  // parents-before-children order (root first, then by depth)
  std::vector<std::size_t> topological_order() const {
    std::vector<std::size_t> order(parents.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [this](auto a, auto b) {
      return depths[a] < depths[b];
    });
    return order;
  }
};

inline SkeletonTopology build_topology(
    const std::vector<int>& parents,
    const std::vector<std::string>& names = {}) {
  if (parents.empty()) throw NoRoot("empty parent list");
  const int n = static_cast<int>(parents.size());
  SkeletonTopology topo;
  topo.parents = parents;
  for (int k = 0; k < n; ++k) {
    const int p = parents[static_cast<std::size_t>(k)];
    if (p == -1) {
      if (topo.root >= 0)
        throw MultipleRoots("joints " + std::to_string(topo.root) + " and " +
                            std::to_string(k));
      topo.root = k;
    } else if (p < 0 || p >= n) {
      throw IndexOutOfRange("joint " + std::to_string(k) + " has parent " +
                            std::to_string(p));
    } else if (p == k) {
      throw CycleDetected("joint " + std::to_string(k) + " is its own parent");
    }
  }
  if (topo.root < 0) throw NoRoot("no joint has parent -1");
  // walk each joint to the root; a walk longer than N is a cycle
  topo.depths.assign(static_cast<std::size_t>(n), -1);
  topo.depths[static_cast<std::size_t>(topo.root)] = 0;
  for (int k = 0; k < n; ++k) {
    int cur = k, steps = 0;
    while (parents[static_cast<std::size_t>(cur)] != -1) {
      cur = parents[static_cast<std::size_t>(cur)];
      if (++steps > n)
        throw CycleDetected("joint " + std::to_string(k) +
                            " never reaches the root");
    }
    topo.depths[static_cast<std::size_t>(k)] = steps;
  }
  if (!names.empty()) {
    if (names.size() != parents.size())
      throw IndexOutOfRange("names list has " + std::to_string(names.size()) +
                            " entries for " + std::to_string(n) + " joints");
    topo.names = names;
  }
  return topo;
}

// The three column-normalized N x N matrices driving spatial graph
// convolution: self-loops, edges toward the root (centripetal) and edges away
// from it (centrifugal). `raw` keeps the unnormalized A + I.
struct PartitionedAdjacency {
  std::size_t n = 0;
  std::array<Tensor, 3> parts;  // identity, centripetal, centrifugal
  Tensor raw;                   // A + I, unnormalized

  static constexpr const char* part_names[3] = {"identity", "centripetal",
                                                "centrifugal"};
};

inline PartitionedAdjacency spatial_adjacency(const SkeletonTopology& topo) {
  const std::size_t n = topo.joint_count();
  PartitionedAdjacency adj;
  adj.n = n;
  for (auto& p : adj.parts) p = Tensor({n, n});
  adj.raw = Tensor({n, n});

  // Convolution computes Y = W X A per time slice, so column j of each
  // subset gathers the sources feeding target joint j. A non-self edge
  // (i, j) is centripetal iff depth(j) > depth(i): the deeper endpoint sits
  // in the column and its parent in the row.
  for (std::size_t k = 0; k < n; ++k) {
    adj.parts[0].at(k, k) = 1.0;
    adj.raw.at(k, k) = 1.0;
    const int p = topo.parents[k];
    if (p < 0) continue;
    const auto pu = static_cast<std::size_t>(p);
    adj.raw.at(k, pu) = 1.0;
    adj.raw.at(pu, k) = 1.0;
    adj.parts[1].at(pu, k) = 1.0;  // target k pulls from its parent
    adj.parts[2].at(k, pu) = 1.0;  // target pu pulls from its child
  }

  // column normalization per subset
  for (auto& part : adj.parts) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += part.at(i, j);
      if (s > 0.0)
        for (std::size_t i = 0; i < n; ++i) part.at(i, j) /= s;
    }
  }
  return adj;
}

// Deterministic row-major listing of all three normalized parts.
inline std::string graph_dump(const PartitionedAdjacency& adj) {
  std::string out;
  char buf[64];
  for (int p = 0; p < 3; ++p) {
    out += "# ";
    out += PartitionedAdjacency::part_names[p];
    out += "\n";
    for (std::size_t i = 0; i < adj.n; ++i) {
      for (std::size_t j = 0; j < adj.n; ++j) {
        std::snprintf(buf, sizeof buf, "%.9g", adj.parts[p].at(i, j));
        if (j) out += " ";
        out += buf;
      }
      out += "\n";
    }
  }
  return out;
}

// Topology descriptor file: whitespace-separated key/value lines.
//   name <label>
//   root <index>
//   parents <i0> <i1> ...
//   names <n0> <n1> ...        (optional)
inline SkeletonTopology read_topology_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open topology file " + path);
  std::string line, name;
  std::vector<int> parents;
  std::vector<std::string> names;
  int root = -1;
  bool have_root = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "name") {
      ls >> name;
    } else if (key == "root") {
      ls >> root;
      have_root = true;
    } else if (key == "parents") {
      int v;
      while (ls >> v) parents.push_back(v);
    } else if (key == "names") {
      std::string s;
      while (ls >> s) names.push_back(s);
    } else {
      throw FormatError("unknown topology key '" + key + "' in " + path);
    }
  }
  if (parents.empty()) throw FormatError("topology file lacks parents: " + path);
  SkeletonTopology topo = build_topology(parents, names);
  topo.name = name;
  if (have_root && root != topo.root)
    throw FormatError("declared root " + std::to_string(root) +
                      " does not match parents (root " +
                      std::to_string(topo.root) + ")");
  return topo;
}

// 17-joint Human3.6M-convention tree (documented convention, not ground
// truth): hip root, right/left legs, spine-thorax-neck-head, left/right arms.
inline SkeletonTopology h36m17_topology() {
  return build_topology(
      {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15},
      {"hip", "rhip", "rknee", "rankle", "lhip", "lknee", "lankle", "spine",
       "thorax", "neck", "head", "lshoulder", "lelbow", "lwrist", "rshoulder",
       "relbow", "rwrist"});
}

}  // namespace ugcn
