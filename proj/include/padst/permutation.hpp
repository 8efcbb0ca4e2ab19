#pragma once

#include <span>
#include <vector>

namespace padst {

// A point of the Birkhoff polytope, optionally collapsed to a vertex.
// Hardened permutations drop the dense matrix and keep only the index map
// ell with (Px)_i = x[ell[i]].
class SoftPermutation {
public:
  SoftPermutation() = default;

  static SoftPermutation uniform(int n);
  static SoftPermutation from_matrix(int n, std::vector<double> row_major);
  static SoftPermutation from_index_map(std::vector<int> index_map);
  static SoftPermutation identity_hard(int n);

  int size() const { return n_; }
  bool hardened() const { return hardened_; }

  const std::vector<double>& matrix() const;
  std::vector<double>& mutable_matrix();
  double at(int i, int j) const;

  const std::vector<int>& index_map() const;

  // P x: dense product when soft, gather when hardened.
  std::vector<double> apply(std::span<const double> x) const;

  // P^T v: column-indexed accumulation when soft, scatter when hardened.
  std::vector<double> apply_transposed(std::span<const double> v) const;

  // Dense matrix view regardless of state (hardened expands to 0/1).
  std::vector<double> dense() const;

private:
  int n_ = 0;
  bool hardened_ = false;
  std::vector<double> m_;
  std::vector<int> index_map_;
  std::vector<int> inverse_map_;
};

struct ProjectResult {
  SoftPermutation perm;
  bool converged = false;
  double max_deviation = 0.0;
  int iterations = 0;
};

// Clamp negatives, lift all-zero rows by 1e-12, then alternate row and
// column normalization until every row and column sum is within tol of one
// or max_iters passes elapse. Non-convergence is reported, not thrown.
ProjectResult project_birkhoff(int n, std::vector<double> matrix, int max_iters = 200,
                               double tol = 1e-8);

struct PermPenaltyValue {
  double value = 0.0;
  std::vector<double> row_terms;
  std::vector<double> col_terms;
};

// Sum over rows and columns of (l1 - l2) norms; zero exactly on permutation
// matrices, positive elsewhere on the Birkhoff polytope.
PermPenaltyValue perm_penalty(const SoftPermutation& p);

// d penalty / d M[i,j] = (1 - M[i,j]/||row_i||_2) + (1 - M[i,j]/||col_j||_2).
std::vector<double> perm_penalty_grad(const SoftPermutation& p);

// Maximum-weight assignment on the soft matrix; ties resolve to the lowest
// column index. Idempotent on hardened input.
SoftPermutation harden(const SoftPermutation& p);

// Row assignment maximizing sum_i score[i*n + pi(i)]; exposed so tests can
// cross-check against brute force.
std::vector<int> solve_max_assignment(int n, std::span<const double> score);

// 1 - ||P - I||_F / sqrt(2N) for hardened perms: 1 at identity, toward 0 as
// more indices displace.
double identity_distance(const SoftPermutation& p);

const std::vector<int>& extract_index_map(const SoftPermutation& p);

std::vector<double> apply_reindex(std::span<const int> index_map, std::span<const double> x);

}  // namespace padst
