#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "padst/permutation.hpp"
#include "padst/rng.hpp"

using namespace padst;

namespace {

// Oracle: exhaustive search over all n! assignments.
double brute_force_best(int n, const std::vector<double>& score, std::vector<int>* argmax) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1e300;
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += score[static_cast<std::size_t>(i) * n + perm[i]];
    if (total > best) {
      best = total;
      if (argmax) *argmax = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<double> random_positive(int n, Rng& rng) {
  std::vector<double> m(static_cast<std::size_t>(n) * n);
  for (double& v : m) v = std::exp(rng.normal());
  return m;
}

double row_col_deviation(int n, const std::vector<double>& m) {
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    double rs = 0.0, cs = 0.0;
    for (int j = 0; j < n; ++j) {
      rs += m[static_cast<std::size_t>(i) * n + j];
      cs += m[static_cast<std::size_t>(j) * n + i];
    }
    worst = std::max({worst, std::abs(rs - 1.0), std::abs(cs - 1.0)});
  }
  return worst;
}

}  // namespace

TEST_CASE("projection leaves doubly stochastic inputs untouched") {
  // Hard permutation matrix: exact fixed point, zero iterations.
  SoftPermutation hard = SoftPermutation::from_index_map({2, 0, 1});
  ProjectResult r = project_birkhoff(3, hard.dense());
  CHECK(r.converged);
  CHECK(r.iterations == 0);
  CHECK(r.perm.matrix() == hard.dense());  // bitwise

  std::vector<double> uniform(16, 0.25);
  ProjectResult u = project_birkhoff(4, uniform);
  CHECK(u.converged);
  CHECK(u.iterations == 0);
  CHECK(u.perm.matrix() == uniform);
}

TEST_CASE("projection normalizes arbitrary positive matrices") {
  Rng rng(3);
  for (int n : {2, 5, 16}) {
    ProjectResult r = project_birkhoff(n, random_positive(n, rng));
    CHECK(r.converged);
    CHECK(r.max_deviation <= 1e-8);
    CHECK(row_col_deviation(n, r.perm.matrix()) <= 1e-7);
    for (double v : r.perm.matrix()) CHECK(v > 0.0);
  }
}

TEST_CASE("projection clamps negatives and lifts zero rows") {
  // Zero row lifted, negative clamped; the remaining zero pattern still
  // admits doubly stochastic matrices, so iteration converges.
  std::vector<double> m = {-1.0, 0.5, 0.2, 0.0, 0.0, 0.0, 0.25, 0.5, 0.25};
  ProjectResult r = project_birkhoff(3, m);
  CHECK(r.converged);
  for (double v : r.perm.matrix()) CHECK(v >= 0.0);
  CHECK(r.perm.at(0, 0) == 0.0);  // clamped zeros stay zero
  CHECK(row_col_deviation(3, r.perm.matrix()) <= 1e-7);

  // A zero pattern without total support converges only asymptotically;
  // the cap makes that a reported state, not an exception.
  std::vector<double> hard = {0.0, 0.5, 0.0, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
  ProjectResult slow = project_birkhoff(3, hard);
  CHECK_FALSE(slow.converged);
  CHECK(slow.max_deviation > 1e-8);
  for (double v : slow.perm.matrix()) CHECK(v >= 0.0);
}

TEST_CASE("projection reports non-convergence instead of throwing") {
  Rng rng(4);
  ProjectResult r = project_birkhoff(8, random_positive(8, rng), 1, 1e-14);
  CHECK_FALSE(r.converged);
  CHECK(r.max_deviation > 1e-14);
  CHECK(r.iterations == 1);
}

TEST_CASE("penalty is zero exactly on permutation matrices") {
  Rng rng(7);
  for (int n : {2, 4, 9}) {
    SoftPermutation p = SoftPermutation::from_index_map(rng.permutation(n));
    PermPenaltyValue v = perm_penalty(p);
    CHECK(v.value == 0.0);
    for (double t : v.row_terms) CHECK(t == 0.0);
    for (double t : v.col_terms) CHECK(t == 0.0);
  }
}

TEST_CASE("penalty of the uniform matrix matches the closed form") {
  for (int n : {2, 4, 8, 32}) {
    SoftPermutation p = SoftPermutation::uniform(n);
    double expect = 2.0 * n * (1.0 - 1.0 / std::sqrt(static_cast<double>(n)));
    CHECK(perm_penalty(p).value == doctest::Approx(expect).epsilon(1e-13));
  }
}

TEST_CASE("penalty is strictly positive off the vertex set") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    int n = 3 + static_cast<int>(rng.index(6));
    ProjectResult r = project_birkhoff(n, random_positive(n, rng));
    CHECK(perm_penalty(r.perm).value > 0.0);
  }
}

TEST_CASE("penalty gradient matches central finite differences") {
  Rng rng(13);
  for (int n : {3, 6}) {
    ProjectResult r = project_birkhoff(n, random_positive(n, rng));
    const SoftPermutation& p = r.perm;
    std::vector<double> grad = perm_penalty_grad(p);
    const double h = 1e-7;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        std::vector<double> plus = p.matrix(), minus = p.matrix();
        plus[static_cast<std::size_t>(i) * n + j] += h;
        minus[static_cast<std::size_t>(i) * n + j] -= h;
        double fd = (perm_penalty(SoftPermutation::from_matrix(n, plus)).value -
                     perm_penalty(SoftPermutation::from_matrix(n, minus)).value) /
                    (2.0 * h);
        CHECK(grad[static_cast<std::size_t>(i) * n + j] == doctest::Approx(fd).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("penalty gradient rejects matrices with a zero row") {
  std::vector<double> m(9, 0.0);
  m[0] = m[4] = m[8] = 1.0;
  m[0] = 0.0;  // row 0 all zero
  CHECK_THROWS_AS(perm_penalty_grad(SoftPermutation::from_matrix(3, m)), std::domain_error);
}

TEST_CASE("assignment solver matches brute force on random instances") {
  Rng rng(17);
  for (int trial = 0; trial < 60; ++trial) {
    int n = 2 + static_cast<int>(rng.index(5));  // up to 6
    std::vector<double> score(static_cast<std::size_t>(n) * n);
    for (double& v : score) v = rng.normal();
    std::vector<int> got = solve_max_assignment(n, score);
    double got_total = 0.0;
    std::vector<int> seen(n, 0);
    for (int i = 0; i < n; ++i) {
      got_total += score[static_cast<std::size_t>(i) * n + got[i]];
      seen[got[i]] += 1;
    }
    for (int s : seen) CHECK(s == 1);  // a permutation
    std::vector<int> best;
    CHECK(got_total == doctest::Approx(brute_force_best(n, score, &best)).epsilon(1e-12));
  }
}

TEST_CASE("assignment ties resolve to the lowest column") {
  // All-equal scores admit every permutation; the solver must pick identity.
  for (int n : {2, 4, 7}) {
    std::vector<double> flat(static_cast<std::size_t>(n) * n, 1.0);
    std::vector<int> got = solve_max_assignment(n, flat);
    for (int i = 0; i < n; ++i) CHECK(got[i] == i);
  }
}

TEST_CASE("hardening the uniform matrix yields the identity") {
  SoftPermutation h = harden(SoftPermutation::uniform(5));
  CHECK(h.hardened());
  for (int i = 0; i < 5; ++i) CHECK(h.index_map()[i] == i);
}

TEST_CASE("hardening picks the dominant assignment and is idempotent") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 3 + static_cast<int>(rng.index(4));
    // Plant a dominant permutation under diffuse noise.
    std::vector<int> planted = rng.permutation(n);
    std::vector<double> m(static_cast<std::size_t>(n) * n);
    for (double& v : m) v = 0.05 + 0.01 * rng.uniform();
    for (int i = 0; i < n; ++i) m[static_cast<std::size_t>(i) * n + planted[i]] = 1.0;
    ProjectResult r = project_birkhoff(n, m);
    SoftPermutation h = harden(r.perm);
    CHECK(h.hardened());
    CHECK(h.index_map() == planted);
    SoftPermutation again = harden(h);
    CHECK(again.index_map() == planted);  // idempotent
  }
}

TEST_CASE("hardened permutations drop the dense matrix") {
  SoftPermutation h = SoftPermutation::from_index_map({1, 2, 0});
  CHECK_THROWS_AS((void)h.matrix(), std::logic_error);
  SoftPermutation s = SoftPermutation::uniform(3);
  CHECK_THROWS_AS((void)s.index_map(), std::logic_error);
  CHECK_THROWS_AS((void)identity_distance(s), std::invalid_argument);
}

TEST_CASE("identity distance tracks displaced indices") {
  CHECK(identity_distance(SoftPermutation::identity_hard(6)) == 1.0);
  // One transposition on n=4 displaces two indices.
  SoftPermutation swap01 = SoftPermutation::from_index_map({1, 0, 2, 3});
  CHECK(identity_distance(swap01) == doctest::Approx(1.0 - std::sqrt(0.5)).epsilon(1e-15));
  // Full derangement: every index displaced.
  SoftPermutation rev = SoftPermutation::from_index_map({3, 2, 1, 0});
  CHECK(identity_distance(rev) == doctest::Approx(0.0).epsilon(1e-15));
  // Frobenius form agrees: 1 - ||P - I||_F / sqrt(2N).
  std::vector<double> d = swap01.dense();
  double fro = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double diff = d[static_cast<std::size_t>(i) * 4 + j] - (i == j ? 1.0 : 0.0);
      fro += diff * diff;
    }
  CHECK(identity_distance(swap01) ==
        doctest::Approx(1.0 - std::sqrt(fro) / std::sqrt(8.0)).epsilon(1e-15));
}

TEST_CASE("apply and apply_transposed match the dense product") {
  Rng rng(23);
  for (int n : {3, 8}) {
    ProjectResult r = project_birkhoff(n, random_positive(n, rng));
    const SoftPermutation& p = r.perm;
    std::vector<double> x(n);
    for (double& v : x) v = rng.normal();
    std::vector<double> d = p.dense();
    std::vector<double> want(n, 0.0), want_t(n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        want[i] += d[static_cast<std::size_t>(i) * n + j] * x[j];
        want_t[j] += d[static_cast<std::size_t>(i) * n + j] * x[i];
      }
    std::vector<double> got = p.apply(x);
    std::vector<double> got_t = p.apply_transposed(x);
    for (int i = 0; i < n; ++i) {
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
      CHECK(got_t[i] == doctest::Approx(want_t[i]).epsilon(1e-13));
    }
  }
}

TEST_CASE("hardened apply is an exact gather and inverts cleanly") {
  Rng rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    int n = 4 + static_cast<int>(rng.index(12));
    SoftPermutation p = SoftPermutation::from_index_map(rng.permutation(n));
    std::vector<double> x(n);
    for (double& v : x) v = rng.normal();
    std::vector<double> y = p.apply(x);
    for (int i = 0; i < n; ++i) CHECK(y[i] == x[p.index_map()[i]]);  // bitwise
    std::vector<double> back = p.apply_transposed(y);
    CHECK(back == x);  // P^T P = I, pure data movement
    CHECK(apply_reindex(p.index_map(), x) == y);
  }
}

TEST_CASE("extract_index_map requires a hardened permutation") {
  SoftPermutation p = SoftPermutation::from_index_map({1, 0});
  CHECK(extract_index_map(p) == std::vector<int>{1, 0});
  CHECK_THROWS_AS(extract_index_map(SoftPermutation::uniform(2)), std::logic_error);
}

TEST_CASE("from_matrix validates shape and from_index_map validates bijection") {
  CHECK_THROWS_AS(SoftPermutation::from_matrix(3, std::vector<double>(8, 0.1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(SoftPermutation::from_index_map({0, 0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(SoftPermutation::from_index_map({0, 3, 1}), std::invalid_argument);
}
