#include "ppfactor/cluster.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ppf {

namespace {

void check_distances(const Eigen::MatrixXd& d) {
  if (d.rows() != d.cols()) throw std::invalid_argument("distance matrix must be square");
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    if (d(i, i) != 0.0) throw std::invalid_argument("distance matrix needs a zero diagonal");
    for (Eigen::Index j = i + 1; j < d.cols(); ++j) {
      if (!std::isfinite(d(i, j)) || d(i, j) < 0.0) throw std::invalid_argument("distances must be finite and >= 0");
      if (std::abs(d(i, j) - d(j, i)) > 1e-12) throw std::invalid_argument("distance matrix is not symmetric");
    }
  }
}

struct UnionFind {
  explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
  std::vector<int> parent;
};

// Replays merges [0, count) and labels leaves by component.
ClusterAssignment replay(const Dendrogram& dendrogram, std::size_t count) {
  const int d = dendrogram.leaves;
  UnionFind uf(2 * d);
  for (std::size_t k = 0; k < count; ++k) {
    const auto& m = dendrogram.merges[k];
    const int id = d + static_cast<int>(k);
    uf.unite(m.a, id);
    uf.unite(m.b, id);
  }
  ClusterAssignment out;
  out.labels.assign(static_cast<std::size_t>(d), -1);
  std::vector<int> label_of_root(static_cast<std::size_t>(2 * d), -1);
  for (int i = 0; i < d; ++i) {
    const int root = uf.find(i);
    if (label_of_root[root] < 0) label_of_root[root] = out.clusters++;
    out.labels[i] = label_of_root[root];
  }
  return out;
}

std::vector<std::vector<int>> members(const ClusterAssignment& assignment) {
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(assignment.clusters));
  for (std::size_t i = 0; i < assignment.labels.size(); ++i) {
    groups[static_cast<std::size_t>(assignment.labels[i])].push_back(static_cast<int>(i));
  }
  return groups;
}

}  // namespace

Dendrogram complete_linkage(const Eigen::MatrixXd& distances) {
  check_distances(distances);
  const int d = static_cast<int>(distances.rows());
  Dendrogram out;
  out.leaves = d;
  if (d < 2) return out;

  // dist is indexed by slot; slot s currently holds cluster id[s].
  Eigen::MatrixXd dist = distances;
  std::vector<int> id(static_cast<std::size_t>(d));
  std::iota(id.begin(), id.end(), 0);
  std::vector<char> active(static_cast<std::size_t>(d), 1);

  for (int step = 0; step < d - 1; ++step) {
    double best = std::numeric_limits<double>::infinity();
    int bi = -1, bj = -1;
    std::pair<int, int> best_ids{std::numeric_limits<int>::max(), std::numeric_limits<int>::max()};
    for (int i = 0; i < d; ++i) {
      if (!active[i]) continue;
      for (int j = i + 1; j < d; ++j) {
        if (!active[j]) continue;
        const double v = dist(i, j);
        const std::pair<int, int> ids{std::min(id[i], id[j]), std::max(id[i], id[j])};
        if (v < best || (v == best && ids < best_ids)) {
          best = v;
          bi = i;
          bj = j;
          best_ids = ids;
        }
      }
    }
    out.merges.push_back(Merge{best_ids.first, best_ids.second, best});
    for (int k = 0; k < d; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      const double v = std::max(dist(bi, k), dist(bj, k));
      dist(bi, k) = v;
      dist(k, bi) = v;
    }
    active[bj] = 0;
    id[bi] = d + step;
  }
  return out;
}

std::vector<int> ClusterAssignment::sizes() const {
  std::vector<int> out(static_cast<std::size_t>(clusters), 0);
  for (int l : labels) ++out[static_cast<std::size_t>(l)];
  return out;
}

ClusterAssignment cut_at_height(const Dendrogram& dendrogram, double height) {
  std::size_t count = 0;
  for (const auto& m : dendrogram.merges) {
    if (m.height < height) ++count;
  }
  // Complete-linkage heights are nondecreasing, so the qualifying merges form a prefix.
  for (std::size_t k = 0; k < count; ++k) {
    if (!(dendrogram.merges[k].height < height)) throw std::invalid_argument("dendrogram merge heights are not monotone");
  }
  return replay(dendrogram, count);
}

ClusterAssignment cut_into(const Dendrogram& dendrogram, int k) {
  if (k < 1 || k > dendrogram.leaves) throw std::invalid_argument("cluster count must be in [1, d]");
  return replay(dendrogram, static_cast<std::size_t>(dendrogram.leaves - k));
}

double davies_bouldin(const ClusterAssignment& assignment, const Eigen::MatrixXd& distances) {
  if (assignment.clusters < 2) throw std::invalid_argument("Davies-Bouldin needs at least two clusters");
  const auto groups = members(assignment);
  std::vector<int> medoid(groups.size());
  std::vector<double> scatter(groups.size(), 0.0);
  for (std::size_t c = 0; c < groups.size(); ++c) {
    const auto& g = groups[c];
    if (g.empty()) throw std::invalid_argument("empty cluster");
    double best = std::numeric_limits<double>::infinity();
    for (int candidate : g) {
      double total = 0.0;
      for (int other : g) total += distances(candidate, other);
      if (total < best) {
        best = total;
        medoid[c] = candidate;
      }
    }
    // Mean distance of the non-medoid members to the medoid.
    scatter[c] = g.size() > 1 ? best / static_cast<double>(g.size() - 1) : 0.0;
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    double worst = 0.0;
    for (std::size_t e = 0; e < groups.size(); ++e) {
      if (e == c) continue;
      const double sep = distances(medoid[c], medoid[e]);
      if (sep <= 0.0) return std::numeric_limits<double>::infinity();
      worst = std::max(worst, (scatter[c] + scatter[e]) / sep);
    }
    sum += worst;
  }
  return sum / static_cast<double>(groups.size());
}

double dunn(const ClusterAssignment& assignment, const Eigen::MatrixXd& distances) {
  if (assignment.clusters < 2) throw std::invalid_argument("Dunn index needs at least two clusters");
  const auto n = static_cast<Eigen::Index>(assignment.labels.size());
  double min_between = std::numeric_limits<double>::infinity();
  double max_diameter = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (assignment.labels[i] == assignment.labels[j]) {
        max_diameter = std::max(max_diameter, distances(i, j));
      } else {
        min_between = std::min(min_between, distances(i, j));
      }
    }
  }
  if (max_diameter == 0.0) return std::numeric_limits<double>::infinity();
  return min_between / max_diameter;
}

std::string dendrogram_to_json(const Dendrogram& dendrogram) {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& m : dendrogram.merges) merges.push_back({{"a", m.a}, {"b", m.b}, {"height", m.height}});
  return merges.dump() + "\n";
}

}  // namespace ppf
