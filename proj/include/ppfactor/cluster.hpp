#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace ppf {

struct Merge {
  int a = 0;  // smaller cluster id
  int b = 0;
  double height = 0.0;
};

/// Leaves are 0..d-1; merge k creates cluster d + k.
struct Dendrogram {
  int leaves = 0;
  std::vector<Merge> merges;
};

/// Agglomerative complete linkage. Among pairs at the minimal linkage
/// distance, the lexicographically smallest (a, b) cluster-id pair merges first.
Dendrogram complete_linkage(const Eigen::MatrixXd& distances);

struct ClusterAssignment {
  std::vector<int> labels;  // per unit, contiguous from 0 in order of first appearance
  int clusters = 0;

  std::vector<int> sizes() const;
};

/// Connected components of merges with height strictly below `height`.
ClusterAssignment cut_at_height(const Dendrogram& dendrogram, double height);

/// Exactly k clusters (undoes the last k - 1 merges).
ClusterAssignment cut_into(const Dendrogram& dendrogram, int k);

/// Medoid-based Davies-Bouldin index; +infinity if two medoids coincide.
double davies_bouldin(const ClusterAssignment& assignment, const Eigen::MatrixXd& distances);

/// Smallest between-cluster distance over largest cluster diameter;
/// +infinity if every cluster is a singleton.
double dunn(const ClusterAssignment& assignment, const Eigen::MatrixXd& distances);

std::string dendrogram_to_json(const Dendrogram& dendrogram);

}  // namespace ppf
