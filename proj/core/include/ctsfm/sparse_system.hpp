#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace ctsfm {

/// Sizes, offsets and diagnostic labels of the variable blocks in a system.
class BlockLayout {
 public:
  int add_block(int dim, std::string label);

  int num_blocks() const { return static_cast<int>(dims_.size()); }
  int dim(int block) const { return dims_[block]; }
  int offset(int block) const { return offsets_[block]; }
  int total_dim() const { return total_; }
  const std::string& label(int block) const { return labels_[block]; }

 private:
  std::vector<int> dims_;
  std::vector<int> offsets_;
  std::vector<std::string> labels_;
  int total_ = 0;
};

/// Symmetric block-sparse information matrix A plus right-hand side b of
/// A dx = b. Only the lower triangle (row >= column) is stored.
class SparseBlockSystem {
 public:
  explicit SparseBlockSystem(BlockLayout layout);

  const BlockLayout& layout() const { return layout_; }

  /// Accumulates into A(i, j) (and implicitly A(j, i)). `block` is dim(i) x dim(j).
  void add_block(int i, int j, const Eigen::Ref<const Eigen::MatrixXd>& block);
  void add_rhs(int i, const Eigen::Ref<const Eigen::VectorXd>& v);

  bool has_block(int i, int j) const;
  /// A(i, j) as a dense block; zero if absent.
  Eigen::MatrixXd block(int i, int j) const;
  std::size_t num_stored_blocks() const;

  const Eigen::VectorXd& rhs() const { return rhs_; }
  Eigen::MatrixXd to_dense() const;

  /// Lower-triangle column storage: columns()[j] maps row i >= j to A(i, j).
  const std::vector<std::map<int, Eigen::MatrixXd>>& columns() const { return columns_; }

 private:
  BlockLayout layout_;
  std::vector<std::map<int, Eigen::MatrixXd>> columns_;
  Eigen::VectorXd rhs_;
};

/// Greedy minimum-degree elimination order over a block adjacency graph.
/// Ties break toward the lower block index, so the order is deterministic.
std::vector<int> minimum_degree_ordering(const std::vector<std::vector<int>>& adjacency);

struct CholeskyStats {
  std::size_t factor_blocks = 0;  // stored blocks of L, including fill
  std::size_t fill_blocks = 0;    // blocks of L absent from A
};

/// Solves A dx = b with a block Cholesky factorization under a
/// minimum-degree ordering. Throws kRankDeficient naming the block whose
/// pivot vanishes.
Eigen::VectorXd solve_normal_equations(const SparseBlockSystem& system,
                                       CholeskyStats* stats = nullptr);

}  // namespace ctsfm
