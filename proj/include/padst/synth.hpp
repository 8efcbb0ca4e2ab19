#pragma once

#include <cstdint>

#include "padst/dst.hpp"

namespace padst {

// Regression targets y = D (Pi x): a hidden random permutation Pi followed
// by a banded-diagonal map D at the requested density. Solvable by a
// diagonal layer exactly when its permutation discovers Pi.
struct PermutedDiagTask {
  Dataset data;
  std::vector<int> hidden_perm;        // Pi as an index map
  std::vector<int> teacher_offsets;    // band of D
};

PermutedDiagTask make_permuted_diag(int d0, int n_samples, double density, std::uint64_t seed);

// Targets from a random two-layer dense ReLU teacher.
Dataset make_dense_teacher(int d0, int hidden, int out_dim, int n_samples, std::uint64_t seed);

}  // namespace padst
