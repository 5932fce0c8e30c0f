#include <gtest/gtest.h>

#include <Eigen/Cholesky>
#include <random>
#include <string>

#include "ctsfm/errors.hpp"
#include "ctsfm/sparse_system.hpp"

namespace ctsfm {
namespace {

// Random SPD system with a random block pattern.
SparseBlockSystem random_system(std::mt19937_64& rng, int blocks, double density) {
  std::uniform_int_distribution<int> dim_pick(0, 1);
  BlockLayout layout;
  for (int i = 0; i < blocks; ++i) {
    layout.add_block(dim_pick(rng) ? 12 : 3, "block " + std::to_string(i));
  }
  SparseBlockSystem sys(layout);
  // A = sum of J^T J over random pairwise factors, plus a small ridge.
  std::uniform_int_distribution<int> pick(0, blocks - 1);
  const int factors = static_cast<int>(density * blocks * blocks) + blocks;
  for (int f = 0; f < factors; ++f) {
    const int a = f < blocks ? f : pick(rng);
    const int b = pick(rng);
    const Eigen::MatrixXd ja = Eigen::MatrixXd::Random(4, layout.dim(a));
    const Eigen::MatrixXd jb = Eigen::MatrixXd::Random(4, layout.dim(b));
    sys.add_block(a, a, ja.transpose() * ja);
    if (a != b) {
      sys.add_block(b, b, jb.transpose() * jb);
      sys.add_block(a, b, ja.transpose() * jb);
    }
  }
  for (int i = 0; i < blocks; ++i) {
    sys.add_block(i, i, 1e-2 * Eigen::MatrixXd::Identity(layout.dim(i), layout.dim(i)));
    sys.add_rhs(i, Eigen::VectorXd::Random(layout.dim(i)));
  }
  return sys;
}

TEST(SparseBlockSystem, ZeroRhsGivesZeroStep) {
  BlockLayout layout;
  layout.add_block(12, "x0");
  layout.add_block(3, "l0");
  SparseBlockSystem sys(layout);
  sys.add_block(0, 0, Eigen::MatrixXd::Identity(12, 12) * 2.0);
  sys.add_block(1, 1, Eigen::MatrixXd::Identity(3, 3));
  sys.add_block(1, 0, Eigen::MatrixXd::Constant(3, 12, 0.1));
  const Eigen::VectorXd x = solve_normal_equations(sys);
  EXPECT_TRUE(x.isZero(0.0));
}

TEST(SparseBlockSystem, SymmetricStorage) {
  BlockLayout layout;
  layout.add_block(2, "a");
  layout.add_block(3, "b");
  SparseBlockSystem sys(layout);
  Eigen::MatrixXd m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  sys.add_block(0, 1, m);
  EXPECT_TRUE(sys.has_block(1, 0));
  EXPECT_EQ(sys.block(1, 0), m.transpose());
  EXPECT_EQ(sys.block(0, 1), m);
  const Eigen::MatrixXd dense = sys.to_dense();
  EXPECT_EQ(dense, dense.transpose());
}

TEST(SolveNormalEquations, MatchesDenseSolver) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 40; ++trial) {
    const int blocks = 2 + trial % 30;
    const SparseBlockSystem sys = random_system(rng, blocks, 0.05);
    CholeskyStats stats;
    const Eigen::VectorXd x = solve_normal_equations(sys, &stats);
    const Eigen::VectorXd oracle = sys.to_dense().ldlt().solve(sys.rhs());
    ASSERT_LT((x - oracle).norm() / oracle.norm(), 1e-8) << trial;
    ASSERT_GE(stats.factor_blocks, static_cast<std::size_t>(blocks));
  }
}

TEST(SolveNormalEquations, BlockTridiagonalHasNoFill) {
  BlockLayout layout;
  for (int i = 0; i < 20; ++i) layout.add_block(12, "x" + std::to_string(i));
  SparseBlockSystem sys(layout);
  for (int i = 0; i < 20; ++i) {
    sys.add_block(i, i, 4.0 * Eigen::MatrixXd::Identity(12, 12));
    if (i > 0) sys.add_block(i, i - 1, -Eigen::MatrixXd::Identity(12, 12));
    sys.add_rhs(i, Eigen::VectorXd::Ones(12));
  }
  CholeskyStats stats;
  const Eigen::VectorXd x = solve_normal_equations(sys, &stats);
  EXPECT_EQ(stats.fill_blocks, 0u);
  EXPECT_LT((sys.to_dense() * x - sys.rhs()).norm(), 1e-12);
}

TEST(SolveNormalEquations, RankDeficiencyNamesBlock) {
  BlockLayout layout;
  layout.add_block(3, "landmark 0");
  layout.add_block(3, "landmark 7");
  SparseBlockSystem sys(layout);
  sys.add_block(0, 0, Eigen::MatrixXd::Identity(3, 3));
  Eigen::MatrixXd singular = Eigen::MatrixXd::Identity(3, 3);
  singular(2, 2) = 0.0;
  sys.add_block(1, 1, singular);
  try {
    solve_normal_equations(sys);
    FAIL() << "expected rank deficiency";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRankDeficient);
    EXPECT_NE(std::string(e.what()).find("landmark 7"), std::string::npos) << e.what();
  }
}

TEST(MinimumDegree, EliminatesHubLast) {
  // Star graph: hub 0 connected to every leaf.
  std::vector<std::vector<int>> adj(6);
  for (int i = 1; i < 6; ++i) adj[0].push_back(i);
  const std::vector<int> order = minimum_degree_ordering(adj);
  ASSERT_EQ(order.size(), 6u);
  EXPECT_EQ(order.back() == 0 || order[order.size() - 2] == 0, true);
  EXPECT_EQ(order, minimum_degree_ordering(adj));
}

}  // namespace
}  // namespace ctsfm
