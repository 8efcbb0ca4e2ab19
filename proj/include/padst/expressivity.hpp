#pragma once

#include <optional>
#include <string>
#include <vector>

#include "padst/bigint.hpp"

namespace padst {

// Families the bound calculator knows. Banded appears here only: the
// runtime kernels realize bands as wrapped diagonal sets.
enum class Family { Dense, Unstructured, DiagK, Banded, BlockB, NMFree, NMTied };

const char* family_name(Family f);

struct LayerSpec {
  int width = 0;
  Family family = Family::Dense;
  int param = 0;             // K for DiagK, half-width b for Banded, block size for BlockB
  long long alpha_num = 0;   // N and M for the tied N:M row
  long long alpha_den = 1;
  bool mixing = false;       // permutation in front of the layer
};

struct NetworkSpec {
  int d0 = 0;
  std::vector<LayerSpec> layers;
};

// Rank of the admissible per-row direction set: K, 2b+1, B, floor(alpha *
// n_in), or n_in for the free families. Clamped to n_in; `clamped` reports
// when the cap bound.
struct RStruct {
  int value = 0;
  bool clamped = false;
};
RStruct r_struct(const LayerSpec& layer, int n_in);

// u_0..u_L: reachable input-space directions after each layer. Mixing
// layers accumulate min(d0, u + r); non-mixing axis layers freeze at
// min(d0, r); tied N:M without mixing holds u while its k shrinks by alpha;
// dense-like layers hold the full budget.
std::vector<int> span_budget(const NetworkSpec& spec);

struct LayerBound {
  int index = 0;      // 1-based
  Family family = Family::Dense;
  int n = 0;          // layer width
  int n_in = 0;
  int r = 0;          // r_struct, clamped
  bool r_clamped = false;
  int u = 0;          // span budget after this layer
  int k = 0;          // effective hyperplane dimension
  BigInt factor;      // sum_{j<=k} C(n, j)
  double log10_factor = 0.0;
};

struct BoundReport {
  std::vector<LayerBound> layers;
  std::vector<int> u_sequence;  // u_0..u_L
  BigInt total;
  double log10_total = 0.0;
  // First period count at which the span reaches d0 (periodic specs measure
  // in periods, uniform ones in layers); absent when the spec never mixes
  // up to full span.
  std::optional<long long> l_overhead;
  std::optional<long long> l_overhead_layers;
  int period = 1;
  // Eq. choice for the effective dimension: u after the layer for mixing
  // rows, the frozen/held budget otherwise.
  std::string h_rule = "k = min(n, u_after) except tied N:M without mixing: k = min(n, floor(alpha*u_before))";
};

// Product over layers of the binomial prefix sums; exact integers.
BoundReport nlr_lower_bound(const NetworkSpec& spec);

struct DepthOverhead {
  std::optional<long long> units;  // periods (layers when period == 1)
  std::optional<long long> layers;
  int period = 1;
};

// Smallest prefix after which the span budget saturates at d0, extending the
// layer pattern periodically past the spec if needed. Tied N:M mixing specs
// report ceil(M/N). Requires every layer mixing; stalls report empty.
DepthOverhead depth_overhead(const NetworkSpec& spec);

// Exact sum_{j=0}^{k} C(n, j); domain error outside 0 <= k <= n.
BigInt binom_sum(int n, int k);

// One ReLU layer for the exact counter: z = W x + b, row-major W.
struct DenseAffineLayer {
  int out_dim = 0;
  int in_dim = 0;
  std::vector<double> w;
  std::vector<double> b;
};

struct RegionCount {
  long long regions = 0;
  long long degenerate = 0;  // counted regions whose feasibility margin was below tolerance
};

// Exact activation-region count over the box [-radius, radius]^d by sign
// enumeration with exact-feasibility LPs (vertex enumeration; the instance
// sizes are capped). Intended as an oracle: d <= 3 and at most 10 neurons.
RegionCount count_regions_exact(const std::vector<DenseAffineLayer>& relu_layers, int threads = 1,
                                double box_radius = 10.0);

}  // namespace padst
