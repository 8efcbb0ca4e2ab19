#include "padst/expressivity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace padst {

namespace {

bool dense_like(Family f) {
  return f == Family::Dense || f == Family::Unstructured || f == Family::NMFree;
}

bool axis_family(Family f) {
  return f == Family::DiagK || f == Family::Banded || f == Family::BlockB;
}

void validate_spec(const NetworkSpec& spec) {
  if (spec.d0 <= 0) throw std::invalid_argument("spec: d0 must be positive");
  if (spec.layers.empty()) throw std::invalid_argument("spec: needs at least one layer");
  for (const LayerSpec& l : spec.layers) {
    if (l.width <= 0) throw std::invalid_argument("spec: layer width must be positive");
    switch (l.family) {
      case Family::DiagK:
        if (l.param <= 0) throw std::invalid_argument("spec: diagonal count must be positive");
        break;
      case Family::Banded:
        if (l.param < 0) throw std::invalid_argument("spec: band half-width must be non-negative");
        break;
      case Family::BlockB:
        if (l.param <= 0) throw std::invalid_argument("spec: block size must be positive");
        break;
      case Family::NMTied:
        if (l.alpha_num <= 0 || l.alpha_den <= 0 || l.alpha_num > l.alpha_den) {
          throw std::invalid_argument("spec: tied N:M needs 0 < N <= M");
        }
        break;
      default:
        break;
    }
  }
}

int layer_n_in(const NetworkSpec& spec, std::size_t l) {
  return l == 0 ? spec.d0 : spec.layers[l - 1].width;
}

}  // namespace

const char* family_name(Family f) {
  switch (f) {
    case Family::Dense: return "dense";
    case Family::Unstructured: return "unstructured";
    case Family::DiagK: return "diag";
    case Family::Banded: return "banded";
    case Family::BlockB: return "block";
    case Family::NMFree: return "nm_free";
    case Family::NMTied: return "nm_tied";
  }
  return "unknown";
}

RStruct r_struct(const LayerSpec& layer, int n_in) {
  if (n_in <= 0) throw std::invalid_argument("r_struct: n_in must be positive");
  long long raw;
  switch (layer.family) {
    case Family::Dense:
    case Family::Unstructured:
    case Family::NMFree:
      raw = n_in;
      break;
    case Family::DiagK:
      raw = layer.param;
      break;
    case Family::Banded:
      raw = 2LL * layer.param + 1;
      break;
    case Family::BlockB:
      raw = layer.param;
      break;
    case Family::NMTied:
      raw = layer.alpha_num * n_in / layer.alpha_den;
      if (raw < 1) raw = 1;
      break;
    default:
      throw std::invalid_argument("r_struct: unknown family");
  }
  RStruct out;
  out.clamped = raw > n_in;
  out.value = static_cast<int>(out.clamped ? n_in : raw);
  return out;
}

std::vector<int> span_budget(const NetworkSpec& spec) {
  validate_spec(spec);
  const std::size_t L = spec.layers.size();
  std::vector<int> u(L + 1, 0);

  const LayerSpec& first = spec.layers[0];
  if (dense_like(first.family)) {
    u[0] = spec.d0;
  } else if (first.mixing) {
    u[0] = 0;
  } else if (axis_family(first.family)) {
    u[0] = std::min(spec.d0, r_struct(first, layer_n_in(spec, 0)).value);
  } else {
    u[0] = spec.d0;  // tied N:M without mixing holds the input budget
  }

  for (std::size_t l = 0; l < L; ++l) {
    const LayerSpec& layer = spec.layers[l];
    const int r = r_struct(layer, layer_n_in(spec, l)).value;
    if (dense_like(layer.family)) {
      u[l + 1] = spec.d0;
    } else if (layer.mixing) {
      u[l + 1] = std::min(spec.d0, u[l] + r);
    } else if (axis_family(layer.family)) {
      u[l + 1] = std::min(u[l], std::min(spec.d0, r));
    } else {
      u[l + 1] = u[l];
    }
  }
  return u;
}

BigInt binom_sum(int n, int k) {
  if (n < 0 || k < 0 || k > n) throw std::domain_error("binom_sum: need 0 <= k <= n");
  BigInt total = 1;  // C(n, 0)
  BigInt c = 1;
  for (int j = 1; j <= k; ++j) {
    c = c * (n - j + 1) / j;  // exact: product of j consecutive integers divides by j!
    total += c;
  }
  return total;
}

BoundReport nlr_lower_bound(const NetworkSpec& spec) {
  BoundReport rep;
  rep.u_sequence = span_budget(spec);
  rep.total = 1;

  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& layer = spec.layers[l];
    const int n_in = layer_n_in(spec, l);
    const RStruct r = r_struct(layer, n_in);

    LayerBound lb;
    lb.index = static_cast<int>(l) + 1;
    lb.family = layer.family;
    lb.n = layer.width;
    lb.n_in = n_in;
    lb.r = r.value;
    lb.r_clamped = r.clamped;
    lb.u = rep.u_sequence[l + 1];

    if (layer.family == Family::NMTied && !layer.mixing) {
      const long long k_raw = layer.alpha_num * rep.u_sequence[l] / layer.alpha_den;
      lb.k = static_cast<int>(std::min<long long>(layer.width, k_raw));
    } else {
      lb.k = std::min(layer.width, rep.u_sequence[l + 1]);
    }
    if (lb.k < 0) lb.k = 0;

    lb.factor = binom_sum(lb.n, lb.k);
    lb.log10_factor = log10_of(lb.factor);
    rep.total *= lb.factor;
    rep.layers.push_back(std::move(lb));
  }

  rep.log10_total = log10_of(rep.total);

  bool all_mixing = true;
  for (const LayerSpec& layer : spec.layers) {
    if (dense_like(layer.family) || !layer.mixing) {
      all_mixing = false;
      break;
    }
  }
  if (all_mixing) {
    const DepthOverhead d = depth_overhead(spec);
    rep.l_overhead = d.units;
    rep.l_overhead_layers = d.layers;
    rep.period = d.period;
  }
  return rep;
}

DepthOverhead depth_overhead(const NetworkSpec& spec) {
  validate_spec(spec);
  for (const LayerSpec& layer : spec.layers) {
    if (!layer.mixing || dense_like(layer.family)) {
      throw std::invalid_argument("depth_overhead: every layer must be a mixing structured layer");
    }
  }

  DepthOverhead out;

  // Tied N:M with one alpha follows the closed form ceil(M/N).
  bool all_tied_same = spec.layers[0].family == Family::NMTied;
  for (const LayerSpec& layer : spec.layers) {
    if (layer.family != Family::NMTied || layer.alpha_num != spec.layers[0].alpha_num ||
        layer.alpha_den != spec.layers[0].alpha_den) {
      all_tied_same = false;
      break;
    }
  }
  if (all_tied_same) {
    const long long t =
        (spec.layers[0].alpha_den + spec.layers[0].alpha_num - 1) / spec.layers[0].alpha_num;
    out.units = t;
    out.layers = t;
    out.period = 1;
    return out;
  }

  // Per-layer fresh-direction gains, then the smallest period of that
  // sequence; the pattern extends periodically past the written layers.
  const std::size_t L = spec.layers.size();
  std::vector<int> gain(L);
  for (std::size_t l = 0; l < L; ++l) {
    gain[l] = r_struct(spec.layers[l], layer_n_in(spec, l)).value;
  }
  int period = static_cast<int>(L);
  for (int p = 1; p <= static_cast<int>(L); ++p) {
    bool ok = true;
    for (std::size_t l = 0; l < L; ++l) {
      if (gain[l] != gain[l % static_cast<std::size_t>(p)]) {
        ok = false;
        break;
      }
    }
    if (ok) {
      period = p;
      break;
    }
  }
  out.period = period;

  long long per_period_gain = 0;
  for (int l = 0; l < period; ++l) per_period_gain += gain[static_cast<std::size_t>(l)];
  if (per_period_gain <= 0) return out;  // stalled

  long long u = 0;
  long long layer_count = 0;
  while (u < spec.d0) {
    u = std::min<long long>(spec.d0, u + gain[static_cast<std::size_t>(layer_count % period)]);
    ++layer_count;
  }
  out.layers = layer_count;
  out.units = (layer_count + period - 1) / period;
  return out;
}

namespace {

// One accumulated half-space sign * (g . x + h) >= margin.
struct SignedAffine {
  std::vector<double> g;
  double h = 0.0;
  int sign = 1;
};

// max t subject to sign_i (g_i . x + h_i) >= t, |x_j| <= R, t >= -1.
// Solved by vertex enumeration over (x, t): dimensions here are at most 4,
// so every (d+1)-subset of tight constraints is checked directly.
double margin_lp(const std::vector<SignedAffine>& cons, int d, double box_radius) {
  const int dim = d + 1;
  struct Row {
    std::vector<double> a;
    double b;
  };
  std::vector<Row> rows;
  rows.reserve(cons.size() + 2 * static_cast<std::size_t>(d) + 1);
  for (const SignedAffine& c : cons) {
    Row r;
    r.a.assign(static_cast<std::size_t>(dim), 0.0);
    for (int j = 0; j < d; ++j) r.a[static_cast<std::size_t>(j)] = -c.sign * c.g[static_cast<std::size_t>(j)];
    r.a[static_cast<std::size_t>(d)] = 1.0;
    r.b = c.sign * c.h;
    rows.push_back(std::move(r));
  }
  for (int j = 0; j < d; ++j) {
    Row hi;
    hi.a.assign(static_cast<std::size_t>(dim), 0.0);
    hi.a[static_cast<std::size_t>(j)] = 1.0;
    hi.b = box_radius;
    rows.push_back(std::move(hi));
    Row lo;
    lo.a.assign(static_cast<std::size_t>(dim), 0.0);
    lo.a[static_cast<std::size_t>(j)] = -1.0;
    lo.b = box_radius;
    rows.push_back(std::move(lo));
  }
  {
    Row floor_t;
    floor_t.a.assign(static_cast<std::size_t>(dim), 0.0);
    floor_t.a[static_cast<std::size_t>(d)] = -1.0;
    floor_t.b = 1.0;
    rows.push_back(std::move(floor_t));
  }

  const int m = static_cast<int>(rows.size());
  double best = -std::numeric_limits<double>::infinity();

  std::vector<int> pick(static_cast<std::size_t>(dim));
  std::vector<double> mat(static_cast<std::size_t>(dim) * (dim + 1));
  std::vector<double> y(static_cast<std::size_t>(dim));

  // Iterate all dim-subsets of rows.
  for (int i = 0; i < dim; ++i) pick[static_cast<std::size_t>(i)] = i;
  while (true) {
    // Solve the square system for the candidate vertex.
    for (int i = 0; i < dim; ++i) {
      const Row& r = rows[static_cast<std::size_t>(pick[static_cast<std::size_t>(i)])];
      for (int j = 0; j < dim; ++j) mat[static_cast<std::size_t>(i) * (dim + 1) + j] = r.a[static_cast<std::size_t>(j)];
      mat[static_cast<std::size_t>(i) * (dim + 1) + dim] = r.b;
    }
    bool singular = false;
    for (int c = 0; c < dim && !singular; ++c) {
      int piv = c;
      for (int r2 = c + 1; r2 < dim; ++r2) {
        if (std::abs(mat[static_cast<std::size_t>(r2) * (dim + 1) + c]) >
            std::abs(mat[static_cast<std::size_t>(piv) * (dim + 1) + c])) {
          piv = r2;
        }
      }
      if (std::abs(mat[static_cast<std::size_t>(piv) * (dim + 1) + c]) < 1e-11) {
        singular = true;
        break;
      }
      if (piv != c) {
        for (int j = c; j <= dim; ++j) {
          std::swap(mat[static_cast<std::size_t>(c) * (dim + 1) + j], mat[static_cast<std::size_t>(piv) * (dim + 1) + j]);
        }
      }
      for (int r2 = c + 1; r2 < dim; ++r2) {
        const double f = mat[static_cast<std::size_t>(r2) * (dim + 1) + c] / mat[static_cast<std::size_t>(c) * (dim + 1) + c];
        for (int j = c; j <= dim; ++j) {
          mat[static_cast<std::size_t>(r2) * (dim + 1) + j] -= f * mat[static_cast<std::size_t>(c) * (dim + 1) + j];
        }
      }
    }
    if (!singular) {
      for (int i = dim - 1; i >= 0; --i) {
        double s = mat[static_cast<std::size_t>(i) * (dim + 1) + dim];
        for (int j = i + 1; j < dim; ++j) s -= mat[static_cast<std::size_t>(i) * (dim + 1) + j] * y[static_cast<std::size_t>(j)];
        y[static_cast<std::size_t>(i)] = s / mat[static_cast<std::size_t>(i) * (dim + 1) + i];
      }
      const double t = y[static_cast<std::size_t>(d)];
      if (t > best) {
        double scale = 1.0;
        for (int j = 0; j < dim; ++j) scale = std::max(scale, std::abs(y[static_cast<std::size_t>(j)]));
        bool feasible = true;
        for (const Row& r : rows) {
          double lhs = 0.0;
          for (int j = 0; j < dim; ++j) lhs += r.a[static_cast<std::size_t>(j)] * y[static_cast<std::size_t>(j)];
          if (lhs > r.b + 1e-8 * scale) {
            feasible = false;
            break;
          }
        }
        if (feasible) best = t;
      }
    }

    // Next subset.
    int i = dim - 1;
    while (i >= 0 && pick[static_cast<std::size_t>(i)] == m - dim + i) --i;
    if (i < 0) break;
    ++pick[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < dim; ++j) pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
  }
  return best;
}

struct RegionWork {
  const std::vector<DenseAffineLayer>* net;
  int d = 0;
  double radius = 10.0;
};

void count_rec(const RegionWork& work, std::size_t layer_idx, std::vector<SignedAffine>& cons,
               const std::vector<double>& m_map, const std::vector<double>& c_map,
               long long& regions, long long& degenerate) {
  const DenseAffineLayer& layer = (*work.net)[layer_idx];
  const int d = work.d;
  const int n = layer.out_dim;

  // Affine image of this layer in input coordinates: G = W * M, e = W * c + b.
  std::vector<double> G(static_cast<std::size_t>(n) * d, 0.0);
  std::vector<double> e(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < layer.in_dim; ++k) {
      const double w = layer.w[static_cast<std::size_t>(i) * layer.in_dim + k];
      if (w == 0.0) continue;
      for (int j = 0; j < d; ++j) {
        G[static_cast<std::size_t>(i) * d + j] += w * m_map[static_cast<std::size_t>(k) * d + j];
      }
      e[static_cast<std::size_t>(i)] += w * c_map[static_cast<std::size_t>(k)];
    }
    e[static_cast<std::size_t>(i)] += layer.b[static_cast<std::size_t>(i)];
  }

  const bool last = layer_idx + 1 == work.net->size();
  const std::size_t base = cons.size();

  for (unsigned sigma = 0; sigma < (1u << n); ++sigma) {
    cons.resize(base);
    for (int i = 0; i < n; ++i) {
      SignedAffine c;
      c.g.assign(G.begin() + static_cast<long>(i) * d, G.begin() + static_cast<long>(i + 1) * d);
      c.h = e[static_cast<std::size_t>(i)];
      c.sign = (sigma >> i) & 1u ? 1 : -1;
      cons.push_back(std::move(c));
    }
    const double margin = margin_lp(cons, d, work.radius);
    if (margin < -1e-9) continue;

    if (last) {
      ++regions;
      if (margin <= 1e-9) ++degenerate;
    } else {
      std::vector<double> m_next(static_cast<std::size_t>(n) * d, 0.0);
      std::vector<double> c_next(static_cast<std::size_t>(n), 0.0);
      for (int i = 0; i < n; ++i) {
        if (((sigma >> i) & 1u) == 0) continue;  // ReLU zeroes the negative side
        for (int j = 0; j < d; ++j) {
          m_next[static_cast<std::size_t>(i) * d + j] = G[static_cast<std::size_t>(i) * d + j];
        }
        c_next[static_cast<std::size_t>(i)] = e[static_cast<std::size_t>(i)];
      }
      count_rec(work, layer_idx + 1, cons, m_next, c_next, regions, degenerate);
    }
  }
  cons.resize(base);
}

}  // namespace

RegionCount count_regions_exact(const std::vector<DenseAffineLayer>& relu_layers, int threads,
                                double box_radius) {
  if (relu_layers.empty()) throw std::invalid_argument("count_regions_exact: no layers");
  const int d = relu_layers[0].in_dim;
  if (d < 1 || d > 3) throw std::invalid_argument("count_regions_exact: input dimension capped at 3");
  long long total_neurons = 0;
  int prev = d;
  for (const DenseAffineLayer& l : relu_layers) {
    if (l.in_dim != prev) throw std::invalid_argument("count_regions_exact: layer dims do not chain");
    if (l.out_dim <= 0) throw std::invalid_argument("count_regions_exact: empty layer");
    if (l.w.size() != static_cast<std::size_t>(l.out_dim) * l.in_dim ||
        l.b.size() != static_cast<std::size_t>(l.out_dim)) {
      throw std::invalid_argument("count_regions_exact: payload shape mismatch");
    }
    total_neurons += l.out_dim;
    prev = l.out_dim;
  }
  if (total_neurons > 10) {
    throw std::invalid_argument("count_regions_exact: neuron budget capped at 10");
  }

  RegionWork work{&relu_layers, d, box_radius};

  std::vector<double> m0(static_cast<std::size_t>(d) * d, 0.0);
  for (int j = 0; j < d; ++j) m0[static_cast<std::size_t>(j) * d + j] = 1.0;
  std::vector<double> c0(static_cast<std::size_t>(d), 0.0);

  if (threads <= 1 || relu_layers[0].out_dim < 2) {
    long long regions = 0, degenerate = 0;
    std::vector<SignedAffine> cons;
    count_rec(work, 0, cons, m0, c0, regions, degenerate);
    return {regions, degenerate};
  }

  // Parallel over the first layer's sign space: fix the top bit(s) by
  // appending the corresponding constraints up front in each worker.
  // Chunking at the recursion root keeps the counts associative.
  const int n0 = relu_layers[0].out_dim;
  const unsigned total = 1u << n0;
  const int n_workers = std::min<int>(threads, 8);
  std::vector<long long> regs(static_cast<std::size_t>(n_workers), 0);
  std::vector<long long> degs(static_cast<std::size_t>(n_workers), 0);
  std::vector<std::thread> pool;
  for (int wn = 0; wn < n_workers; ++wn) {
    pool.emplace_back([&, wn]() {
      // Each worker re-runs the first layer loop over its slice by cloning
      // count_rec's body through a restricted recursion: simplest is to
      // enumerate sigma here and reuse margin_lp directly.
      const DenseAffineLayer& layer = relu_layers[0];
      std::vector<double> G(static_cast<std::size_t>(layer.out_dim) * d);
      std::vector<double> e(layer.b);
      for (int i = 0; i < layer.out_dim; ++i) {
        for (int j = 0; j < d; ++j) {
          G[static_cast<std::size_t>(i) * d + j] = layer.w[static_cast<std::size_t>(i) * d + j];
        }
      }
      for (unsigned sigma = static_cast<unsigned>(wn); sigma < total; sigma += static_cast<unsigned>(n_workers)) {
        std::vector<SignedAffine> cons;
        for (int i = 0; i < layer.out_dim; ++i) {
          SignedAffine c;
          c.g.assign(G.begin() + static_cast<long>(i) * d, G.begin() + static_cast<long>(i + 1) * d);
          c.h = e[static_cast<std::size_t>(i)];
          c.sign = (sigma >> i) & 1u ? 1 : -1;
          cons.push_back(std::move(c));
        }
        const double margin = margin_lp(cons, d, box_radius);
        if (margin < -1e-9) continue;
        if (relu_layers.size() == 1) {
          ++regs[static_cast<std::size_t>(wn)];
          if (margin <= 1e-9) ++degs[static_cast<std::size_t>(wn)];
          continue;
        }
        std::vector<double> m_next(static_cast<std::size_t>(layer.out_dim) * d, 0.0);
        std::vector<double> c_next(static_cast<std::size_t>(layer.out_dim), 0.0);
        for (int i = 0; i < layer.out_dim; ++i) {
          if (((sigma >> i) & 1u) == 0) continue;
          for (int j = 0; j < d; ++j) {
            m_next[static_cast<std::size_t>(i) * d + j] = G[static_cast<std::size_t>(i) * d + j];
          }
          c_next[static_cast<std::size_t>(i)] = e[static_cast<std::size_t>(i)];
        }
        count_rec(work, 1, cons, m_next, c_next, regs[static_cast<std::size_t>(wn)],
                  degs[static_cast<std::size_t>(wn)]);
      }
    });
  }
  for (std::thread& t : pool) t.join();

  RegionCount out;
  for (int wn = 0; wn < n_workers; ++wn) {
    out.regions += regs[static_cast<std::size_t>(wn)];
    out.degenerate += degs[static_cast<std::size_t>(wn)];
  }
  return out;
}

}  // namespace padst
