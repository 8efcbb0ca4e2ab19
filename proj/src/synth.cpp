#include "padst/synth.hpp"

#include <cmath>

#include "padst/patterns.hpp"

namespace padst {

PermutedDiagTask make_permuted_diag(int d0, int n_samples, double density, std::uint64_t seed) {
  if (d0 <= 0 || n_samples <= 0) throw std::invalid_argument("make_permuted_diag: bad shape");
  Rng rng(seed);
  Rng perm_rng = rng.fork(1);
  Rng weight_rng = rng.fork(2);
  Rng input_rng = rng.fork(3);

  PermutedDiagTask task;
  task.hidden_perm = perm_rng.permutation(d0);

  const DensityMapping dm = map_density(density, d0);
  task.teacher_offsets.resize(static_cast<std::size_t>(dm.k));
  for (int i = 0; i < dm.k; ++i) task.teacher_offsets[static_cast<std::size_t>(i)] = i;

  // D as a wrapped band: rows reach K consecutive (mod d0) permuted inputs.
  const double scale = 1.0 / std::sqrt(static_cast<double>(dm.k));
  std::vector<double> diag_values(static_cast<std::size_t>(dm.k) * d0);
  for (double& v : diag_values) v = scale * weight_rng.normal();

  task.data.inputs.resize(static_cast<std::size_t>(n_samples));
  task.data.targets.resize(static_cast<std::size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) {
    std::vector<double> x(static_cast<std::size_t>(d0));
    for (double& v : x) v = input_rng.normal();

    std::vector<double> permuted(static_cast<std::size_t>(d0));
    for (int i = 0; i < d0; ++i) permuted[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(task.hidden_perm[static_cast<std::size_t>(i)])];

    std::vector<double> y(static_cast<std::size_t>(d0), 0.0);
    for (int o = 0; o < dm.k; ++o) {
      for (int r = 0; r < d0; ++r) {
        y[static_cast<std::size_t>(r)] += diag_values[static_cast<std::size_t>(o) * d0 + r] *
                                          permuted[static_cast<std::size_t>((r + o) % d0)];
      }
    }
    task.data.inputs[static_cast<std::size_t>(s)] = std::move(x);
    task.data.targets[static_cast<std::size_t>(s)] = std::move(y);
  }
  return task;
}

Dataset make_dense_teacher(int d0, int hidden, int out_dim, int n_samples, std::uint64_t seed) {
  if (d0 <= 0 || hidden <= 0 || out_dim <= 0 || n_samples <= 0) {
    throw std::invalid_argument("make_dense_teacher: bad shape");
  }
  Rng rng(seed);
  Rng weight_rng = rng.fork(1);
  Rng input_rng = rng.fork(2);

  std::vector<double> w1(static_cast<std::size_t>(hidden) * d0);
  std::vector<double> w2(static_cast<std::size_t>(out_dim) * hidden);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d0));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (double& v : w1) v = s1 * weight_rng.normal();
  for (double& v : w2) v = s2 * weight_rng.normal();

  Dataset data;
  data.inputs.resize(static_cast<std::size_t>(n_samples));
  data.targets.resize(static_cast<std::size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) {
    std::vector<double> x(static_cast<std::size_t>(d0));
    for (double& v : x) v = input_rng.normal();

    std::vector<double> h(static_cast<std::size_t>(hidden), 0.0);
    for (int i = 0; i < hidden; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d0; ++j) acc += w1[static_cast<std::size_t>(i) * d0 + j] * x[static_cast<std::size_t>(j)];
      h[static_cast<std::size_t>(i)] = acc > 0.0 ? acc : 0.0;
    }
    std::vector<double> y(static_cast<std::size_t>(out_dim), 0.0);
    for (int i = 0; i < out_dim; ++i) {
      double acc = 0.0;
      for (int j = 0; j < hidden; ++j) acc += w2[static_cast<std::size_t>(i) * hidden + j] * h[static_cast<std::size_t>(j)];
      y[static_cast<std::size_t>(i)] = acc;
    }
    data.inputs[static_cast<std::size_t>(s)] = std::move(x);
    data.targets[static_cast<std::size_t>(s)] = std::move(y);
  }
  return data;
}

}  // namespace padst
