#include "ctsfm/sparse_system.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "ctsfm/errors.hpp"

namespace ctsfm {

namespace {

// A pivot whose squared value falls below this fraction of the original
// diagonal entry is treated as zero.
constexpr double kPivotTolerance = 1e-13;

[[noreturn]] void rank_deficient(const BlockLayout& layout, int block) {
  fail(ErrorCode::kRankDeficient,
       "solve_normal_equations: rank deficiency at block " + std::to_string(block) +
           " (" + layout.label(block) + "); missing gauge prior or unobserved variable?");
}

}  // namespace

int BlockLayout::add_block(int dim, std::string label) {
  dims_.push_back(dim);
  offsets_.push_back(total_);
  labels_.push_back(std::move(label));
  total_ += dim;
  return static_cast<int>(dims_.size()) - 1;
}

SparseBlockSystem::SparseBlockSystem(BlockLayout layout)
    : layout_(std::move(layout)),
      columns_(layout_.num_blocks()),
      rhs_(Eigen::VectorXd::Zero(layout_.total_dim())) {}

void SparseBlockSystem::add_block(int i, int j, const Eigen::Ref<const Eigen::MatrixXd>& block) {
  if (i < j) {
    add_block(j, i, block.transpose());
    return;
  }
  auto& column = columns_[j];
  auto it = column.find(i);
  if (it == column.end()) {
    if (i == j) {
      // Diagonal blocks accumulate symmetric parts only.
      column.emplace(i, 0.5 * (block + block.transpose()));
    } else {
      column.emplace(i, block);
    }
  } else if (i == j) {
    it->second += 0.5 * (block + block.transpose());
  } else {
    it->second += block;
  }
}

void SparseBlockSystem::add_rhs(int i, const Eigen::Ref<const Eigen::VectorXd>& v) {
  rhs_.segment(layout_.offset(i), layout_.dim(i)) += v;
}

bool SparseBlockSystem::has_block(int i, int j) const {
  if (i < j) std::swap(i, j);
  return columns_[j].count(i) > 0;
}

Eigen::MatrixXd SparseBlockSystem::block(int i, int j) const {
  if (i < j) return block(j, i).transpose();
  const auto it = columns_[j].find(i);
  if (it == columns_[j].end()) {
    return Eigen::MatrixXd::Zero(layout_.dim(i), layout_.dim(j));
  }
  return it->second;
}

std::size_t SparseBlockSystem::num_stored_blocks() const {
  std::size_t n = 0;
  for (const auto& c : columns_) n += c.size();
  return n;
}

Eigen::MatrixXd SparseBlockSystem::to_dense() const {
  const int n = layout_.total_dim();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < layout_.num_blocks(); ++j) {
    for (const auto& [i, m] : columns_[j]) {
      a.block(layout_.offset(i), layout_.offset(j), m.rows(), m.cols()) = m;
      if (i != j) {
        a.block(layout_.offset(j), layout_.offset(i), m.cols(), m.rows()) = m.transpose();
      }
    }
  }
  return a;
}

std::vector<int> minimum_degree_ordering(const std::vector<std::vector<int>>& adjacency) {
  const int n = static_cast<int>(adjacency.size());
  std::vector<std::set<int>> graph(n);
  for (int v = 0; v < n; ++v) {
    for (int u : adjacency[v]) {
      if (u != v) {
        graph[v].insert(u);
        graph[u].insert(v);
      }
    }
  }
  std::vector<bool> eliminated(n, false);
  std::vector<int> order;
  order.reserve(n);
  for (int step = 0; step < n; ++step) {
    int best = -1;
    std::size_t best_degree = 0;
    for (int v = 0; v < n; ++v) {
      if (eliminated[v]) continue;
      if (best < 0 || graph[v].size() < best_degree) {
        best = v;
        best_degree = graph[v].size();
      }
    }
    eliminated[best] = true;
    order.push_back(best);
    const std::vector<int> neighbors(graph[best].begin(), graph[best].end());
    for (int u : neighbors) {
      graph[u].erase(best);
      for (int w : neighbors) {
        if (w != u) graph[u].insert(w);
      }
    }
    graph[best].clear();
  }
  return order;
}

Eigen::VectorXd solve_normal_equations(const SparseBlockSystem& system,
                                       CholeskyStats* stats) {
  const BlockLayout& layout = system.layout();
  const int n = layout.num_blocks();
  if (n == 0) return Eigen::VectorXd();

  std::vector<std::vector<int>> adjacency(n);
  for (int j = 0; j < n; ++j) {
    for (const auto& entry : system.columns()[j]) {
      if (entry.first != j) adjacency[j].push_back(entry.first);
    }
  }
  const std::vector<int> order = minimum_degree_ordering(adjacency);
  std::vector<int> position(n);
  for (int k = 0; k < n; ++k) position[order[k]] = k;

  // Working storage in elimination order: diagonal blocks plus strictly lower
  // columns keyed by the permuted row.
  std::vector<Eigen::MatrixXd> diag(n);
  std::vector<std::map<int, Eigen::MatrixXd>> lower(n);
  std::size_t original_blocks = 0;
  for (int j = 0; j < n; ++j) {
    for (const auto& [i, m] : system.columns()[j]) {
      const int pi = position[i];
      const int pj = position[j];
      if (i == j) {
        diag[pj] = m;
      } else if (pi > pj) {
        lower[pj].emplace(pi, m);
        ++original_blocks;
      } else {
        lower[pi].emplace(pj, m.transpose());
        ++original_blocks;
      }
    }
  }
  for (int k = 0; k < n; ++k) {
    if (diag[k].size() == 0) {
      const int d = layout.dim(order[k]);
      diag[k] = Eigen::MatrixXd::Zero(d, d);
    }
  }
  std::vector<Eigen::VectorXd> original_diagonal(n);
  for (int k = 0; k < n; ++k) original_diagonal[k] = diag[k].diagonal();

  std::vector<Eigen::MatrixXd> factor(n);
  for (int k = 0; k < n; ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(diag[k]);
    if (llt.info() != Eigen::Success) rank_deficient(layout, order[k]);
    factor[k] = llt.matrixL();
    for (int d = 0; d < factor[k].rows(); ++d) {
      const double pivot = factor[k](d, d) * factor[k](d, d);
      const double scale = std::max(original_diagonal[k](d), 0.0);
      if (!(pivot > kPivotTolerance * scale) || !std::isfinite(pivot)) {
        rank_deficient(layout, order[k]);
      }
    }
    auto& column = lower[k];
    for (auto& [i, m] : column) {
      // m <- m * L_kk^-T
      m = factor[k].triangularView<Eigen::Lower>().solve(m.transpose()).transpose();
    }
    for (auto it_i = column.begin(); it_i != column.end(); ++it_i) {
      const int i = it_i->first;
      const Eigen::MatrixXd& li = it_i->second;
      diag[i].noalias() -= li * li.transpose();
      for (auto it_j = column.begin(); it_j != it_i; ++it_j) {
        const int j = it_j->first;  // j < i
        auto& target_column = lower[j];
        auto target = target_column.find(i);
        if (target == target_column.end()) {
          target = target_column.emplace(i, Eigen::MatrixXd::Zero(li.rows(), it_j->second.rows())).first;
        }
        target->second.noalias() -= li * it_j->second.transpose();
      }
    }
  }

  if (stats != nullptr) {
    std::size_t total = 0;
    for (const auto& c : lower) total += c.size();
    stats->factor_blocks = total + static_cast<std::size_t>(n);
    stats->fill_blocks = total - original_blocks;
  }

  // Forward substitution L y = P b, then L^T x = y.
  std::vector<Eigen::VectorXd> y(n);
  for (int k = 0; k < n; ++k) {
    const int b = order[k];
    y[k] = system.rhs().segment(layout.offset(b), layout.dim(b));
  }
  for (int k = 0; k < n; ++k) {
    y[k] = factor[k].triangularView<Eigen::Lower>().solve(y[k]);
    for (const auto& [i, m] : lower[k]) y[i].noalias() -= m * y[k];
  }
  for (int k = n - 1; k >= 0; --k) {
    for (const auto& [i, m] : lower[k]) y[k].noalias() -= m.transpose() * y[i];
    y[k] = factor[k].transpose().triangularView<Eigen::Upper>().solve(y[k]);
  }
  Eigen::VectorXd x(layout.total_dim());
  for (int k = 0; k < n; ++k) {
    const int b = order[k];
    x.segment(layout.offset(b), layout.dim(b)) = y[k];
  }
  return x;
}

}  // namespace ctsfm
