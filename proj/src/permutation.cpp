#include "padst/permutation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace padst {

namespace {

void check_square_payload(int n, std::size_t len) {
  if (n <= 0) throw std::invalid_argument("permutation size must be positive");
  if (len != static_cast<std::size_t>(n) * static_cast<std::size_t>(n)) {
    throw std::invalid_argument("permutation matrix payload has wrong length");
  }
}

std::vector<int> invert_map(const std::vector<int>& map) {
  std::vector<int> inv(map.size(), -1);
  for (std::size_t i = 0; i < map.size(); ++i) {
    const int v = map[i];
    if (v < 0 || v >= static_cast<int>(map.size()) || inv[static_cast<std::size_t>(v)] != -1) {
      throw std::invalid_argument("index map is not a permutation");
    }
    inv[static_cast<std::size_t>(v)] = static_cast<int>(i);
  }
  return inv;
}

}  // namespace

SoftPermutation SoftPermutation::uniform(int n) {
  if (n <= 0) throw std::invalid_argument("permutation size must be positive");
  SoftPermutation p;
  p.n_ = n;
  p.m_.assign(static_cast<std::size_t>(n) * n, 1.0 / static_cast<double>(n));
  return p;
}

SoftPermutation SoftPermutation::from_matrix(int n, std::vector<double> row_major) {
  check_square_payload(n, row_major.size());
  SoftPermutation p;
  p.n_ = n;
  p.m_ = std::move(row_major);
  return p;
}

SoftPermutation SoftPermutation::from_index_map(std::vector<int> index_map) {
  SoftPermutation p;
  p.n_ = static_cast<int>(index_map.size());
  if (p.n_ <= 0) throw std::invalid_argument("permutation size must be positive");
  p.inverse_map_ = invert_map(index_map);
  p.index_map_ = std::move(index_map);
  p.hardened_ = true;
  return p;
}

SoftPermutation SoftPermutation::identity_hard(int n) {
  std::vector<int> id(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) id[static_cast<std::size_t>(i)] = i;
  return from_index_map(std::move(id));
}

const std::vector<double>& SoftPermutation::matrix() const {
  if (hardened_) throw std::logic_error("hardened permutation has no soft matrix");
  return m_;
}

std::vector<double>& SoftPermutation::mutable_matrix() {
  if (hardened_) throw std::logic_error("hardened permutation is frozen");
  return m_;
}

double SoftPermutation::at(int i, int j) const {
  if (hardened_) return index_map_[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0;
  return m_[static_cast<std::size_t>(i) * n_ + j];
}

const std::vector<int>& SoftPermutation::index_map() const {
  if (!hardened_) throw std::logic_error("soft permutation has no index map");
  return index_map_;
}

std::vector<double> SoftPermutation::apply(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != n_) throw std::invalid_argument("apply: length mismatch");
  std::vector<double> y(static_cast<std::size_t>(n_));
  if (hardened_) {
    for (int i = 0; i < n_; ++i) y[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(index_map_[static_cast<std::size_t>(i)])];
    return y;
  }
  for (int i = 0; i < n_; ++i) {
    double acc = 0.0;
    const double* row = m_.data() + static_cast<std::size_t>(i) * n_;
    for (int j = 0; j < n_; ++j) acc += row[j] * x[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

std::vector<double> SoftPermutation::apply_transposed(std::span<const double> v) const {
  if (static_cast<int>(v.size()) != n_) {
    throw std::invalid_argument("apply_transposed: length mismatch");
  }
  std::vector<double> y(static_cast<std::size_t>(n_), 0.0);
  if (hardened_) {
    // (P^T v)_j picks the row whose one lands in column j.
    for (int j = 0; j < n_; ++j) y[static_cast<std::size_t>(j)] = v[static_cast<std::size_t>(inverse_map_[static_cast<std::size_t>(j)])];
    return y;
  }
  for (int i = 0; i < n_; ++i) {
    const double vi = v[static_cast<std::size_t>(i)];
    const double* row = m_.data() + static_cast<std::size_t>(i) * n_;
    for (int j = 0; j < n_; ++j) y[static_cast<std::size_t>(j)] += row[j] * vi;
  }
  return y;
}

std::vector<double> SoftPermutation::dense() const {
  if (!hardened_) return m_;
  std::vector<double> d(static_cast<std::size_t>(n_) * n_, 0.0);
  for (int i = 0; i < n_; ++i) {
    d[static_cast<std::size_t>(i) * n_ + index_map_[static_cast<std::size_t>(i)]] = 1.0;
  }
  return d;
}

ProjectResult project_birkhoff(int n, std::vector<double> matrix, int max_iters, double tol) {
  check_square_payload(n, matrix.size());

  for (double& v : matrix) {
    if (v < 0.0) v = 0.0;
  }
  for (int i = 0; i < n; ++i) {
    double* row = matrix.data() + static_cast<std::size_t>(i) * n;
    bool all_zero = true;
    for (int j = 0; j < n; ++j) {
      if (row[j] != 0.0) {
        all_zero = false;
        break;
      }
    }
    if (all_zero) {
      for (int j = 0; j < n; ++j) row[j] = 1e-12;
    }
  }

  auto max_deviation = [&]() {
    double dev = 0.0;
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += matrix[static_cast<std::size_t>(i) * n + j];
      dev = std::max(dev, std::abs(s - 1.0));
    }
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += matrix[static_cast<std::size_t>(i) * n + j];
      dev = std::max(dev, std::abs(s - 1.0));
    }
    return dev;
  };

  ProjectResult res;
  double dev = max_deviation();
  int it = 0;
  // Inputs already on the polytope return untouched: the fixed-point cases
  // (hard permutations included) stay bitwise stable.
  while (dev > tol && it < max_iters) {
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      double* row = matrix.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) s += row[j];
      if (s > 0.0) {
        for (int j = 0; j < n; ++j) row[j] /= s;
      }
    }
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += matrix[static_cast<std::size_t>(i) * n + j];
      if (s > 0.0) {
        for (int i = 0; i < n; ++i) matrix[static_cast<std::size_t>(i) * n + j] /= s;
      }
    }
    ++it;
    dev = max_deviation();
  }

  res.converged = dev <= tol;
  res.max_deviation = dev;
  res.iterations = it;
  res.perm = SoftPermutation::from_matrix(n, std::move(matrix));
  return res;
}

PermPenaltyValue perm_penalty(const SoftPermutation& p) {
  const int n = p.size();
  PermPenaltyValue out;
  out.row_terms.assign(static_cast<std::size_t>(n), 0.0);
  out.col_terms.assign(static_cast<std::size_t>(n), 0.0);

  std::vector<double> col_l1(static_cast<std::size_t>(n), 0.0);
  std::vector<double> col_l2sq(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double l1 = 0.0, l2sq = 0.0;
    for (int j = 0; j < n; ++j) {
      const double v = p.at(i, j);
      const double a = std::abs(v);
      l1 += a;
      l2sq += v * v;
      col_l1[static_cast<std::size_t>(j)] += a;
      col_l2sq[static_cast<std::size_t>(j)] += v * v;
    }
    out.row_terms[static_cast<std::size_t>(i)] = l1 - std::sqrt(l2sq);
  }
  for (int j = 0; j < n; ++j) {
    out.col_terms[static_cast<std::size_t>(j)] = col_l1[static_cast<std::size_t>(j)] - std::sqrt(col_l2sq[static_cast<std::size_t>(j)]);
  }
  for (int i = 0; i < n; ++i) out.value += out.row_terms[static_cast<std::size_t>(i)];
  for (int j = 0; j < n; ++j) out.value += out.col_terms[static_cast<std::size_t>(j)];
  return out;
}

std::vector<double> perm_penalty_grad(const SoftPermutation& p) {
  const int n = p.size();
  std::vector<double> row_l2(static_cast<std::size_t>(n), 0.0);
  std::vector<double> col_l2(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double v = p.at(i, j);
      row_l2[static_cast<std::size_t>(i)] += v * v;
      col_l2[static_cast<std::size_t>(j)] += v * v;
    }
  }
  for (int i = 0; i < n; ++i) {
    if (row_l2[static_cast<std::size_t>(i)] == 0.0) throw std::domain_error("perm_penalty_grad: zero row");
    row_l2[static_cast<std::size_t>(i)] = std::sqrt(row_l2[static_cast<std::size_t>(i)]);
  }
  for (int j = 0; j < n; ++j) {
    if (col_l2[static_cast<std::size_t>(j)] == 0.0) throw std::domain_error("perm_penalty_grad: zero column");
    col_l2[static_cast<std::size_t>(j)] = std::sqrt(col_l2[static_cast<std::size_t>(j)]);
  }
  std::vector<double> g(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double v = p.at(i, j);
      g[static_cast<std::size_t>(i) * n + j] =
          (1.0 - v / row_l2[static_cast<std::size_t>(i)]) + (1.0 - v / col_l2[static_cast<std::size_t>(j)]);
    }
  }
  return g;
}

std::vector<int> solve_max_assignment(int n, std::span<const double> score) {
  if (static_cast<std::size_t>(n) * n != score.size()) {
    throw std::invalid_argument("solve_max_assignment: score shape mismatch");
  }
  // Shortest augmenting path assignment on cost = -score, 1-based working
  // arrays. Column scans ascend and improvements are strict, so equal-cost
  // alternatives resolve to the lowest column index.
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
  auto cost = [&](int i, int j) { return -score[static_cast<std::size_t>(i - 1) * n + (j - 1)]; };

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, INF);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = INF;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0, j) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) {
    if (p[static_cast<std::size_t>(j)] > 0) row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)]) - 1] = j - 1;
  }
  return row_to_col;
}

SoftPermutation harden(const SoftPermutation& p) {
  if (p.hardened()) return p;
  std::vector<int> map = solve_max_assignment(p.size(), p.matrix());
  return SoftPermutation::from_index_map(std::move(map));
}

double identity_distance(const SoftPermutation& p) {
  if (!p.hardened()) throw std::invalid_argument("identity_distance: permutation not hardened");
  const std::vector<int>& map = p.index_map();
  int displaced = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map[i] != static_cast<int>(i)) ++displaced;
  }
  return 1.0 - std::sqrt(static_cast<double>(displaced) / static_cast<double>(map.size()));
}

const std::vector<int>& extract_index_map(const SoftPermutation& p) {
  if (!p.hardened()) throw std::invalid_argument("extract_index_map: permutation not hardened");
  return p.index_map();
}

std::vector<double> apply_reindex(std::span<const int> index_map, std::span<const double> x) {
  if (index_map.size() != x.size()) throw std::invalid_argument("apply_reindex: length mismatch");
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[static_cast<std::size_t>(index_map[i])];
  return y;
}

}  // namespace padst
