#include "padst/patterns.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "padst/rng.hpp"

namespace padst {

namespace {

long long round_half_away(double v) {
  return static_cast<long long>(v >= 0 ? std::floor(v + 0.5) : std::ceil(v - 0.5));
}

// Smallest-denominator fraction equal to `x` within `eps`, by walking the
// Stern-Brocot tree. Densities are plain decimals in practice (0.05, 0.25),
// so this terminates almost immediately.
std::pair<long long, long long> to_fraction(double x, double eps = 1e-12) {
  long long lo_n = 0, lo_d = 1, hi_n = 1, hi_d = 0;
  for (int iter = 0; iter < 1 << 20; ++iter) {
    const long long mid_n = lo_n + hi_n;
    const long long mid_d = lo_d + hi_d;
    const double mid = static_cast<double>(mid_n) / static_cast<double>(mid_d);
    if (std::abs(mid - x) <= eps) return {mid_n, mid_d};
    if (mid < x) {
      lo_n = mid_n;
      lo_d = mid_d;
    } else {
      hi_n = mid_n;
      hi_d = mid_d;
    }
  }
  throw std::domain_error("map_density: density has no small rational form");
}

void check_shape(int rows, int cols) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("mask shape must be positive");
}

long long diag_nominal_count(const DiagonalK& d, int rows, int cols) {
  if (d.wrap) {
    return static_cast<long long>(d.offsets.size()) * std::min(rows, cols);
  }
  long long total = 0;
  for (int o : d.offsets) {
    const int lo = std::max(0, -o);
    const int hi = std::min(rows - 1, cols - 1 - o);
    if (hi >= lo) total += hi - lo + 1;
  }
  return total;
}

}  // namespace

const char* pattern_kind_name(PatternKind kind) {
  switch (kind) {
    case PatternKind::DiagonalK: return "diagonal";
    case PatternKind::BlockB: return "block";
    case PatternKind::NM: return "nm";
    case PatternKind::Unstructured: return "unstructured";
  }
  return "unknown";
}

int diag_wrap_modulus(int rows, int cols) { return rows <= cols ? cols : rows; }

int diag_canonical_offset(int offset, int rows, int cols) {
  const int w = diag_wrap_modulus(rows, cols);
  return ((offset % w) + w) % w;
}

std::vector<Pos> diag_positions(int canonical_offset, int rows, int cols) {
  std::vector<Pos> out;
  const int n = std::min(rows, cols);
  out.reserve(static_cast<std::size_t>(n));
  if (rows <= cols) {
    for (int r = 0; r < rows; ++r) out.push_back({r, (r + canonical_offset) % cols});
  } else {
    for (int c = 0; c < cols; ++c) {
      out.push_back({((c - canonical_offset) % rows + rows) % rows, c});
    }
  }
  return out;
}

Mask Mask::make(int rows, int cols, std::vector<Pos> active, StructurePattern descriptor) {
  check_shape(rows, cols);
  std::sort(active.begin(), active.end());
  for (std::size_t i = 0; i < active.size(); ++i) {
    const Pos& p = active[i];
    if (p.row < 0 || p.row >= rows || p.col < 0 || p.col >= cols) {
      throw std::invalid_argument("Mask: position out of range");
    }
    if (i > 0 && active[i - 1] == p) throw std::invalid_argument("Mask: duplicate position");
  }
  Mask m;
  m.rows = rows;
  m.cols = cols;
  m.active = std::move(active);
  m.descriptor = std::move(descriptor);
  return m;
}

DensityMapping map_density(double density, int n_in) {
  if (!(density > 0.0) || density > 1.0) {
    throw std::domain_error("map_density: density must lie in (0, 1]");
  }
  if (n_in <= 0) throw std::domain_error("map_density: n_in must be positive");

  DensityMapping m;
  m.density = density;
  m.n_in = n_in;

  const double raw = density * static_cast<double>(n_in);
  const long long k = round_half_away(raw);
  if (k <= 0) throw std::domain_error("map_density: derived diagonal count is zero");
  if (k > n_in) throw std::domain_error("map_density: derived diagonal count exceeds n_in");
  m.k = static_cast<int>(k);
  m.block = static_cast<int>(k);

  // Nearest odd width; at the midpoint between two odds take the larger.
  const long long lower_odd = (k % 2 != 0) ? k : k - 1;
  long long band;
  if (raw <= static_cast<double>(lower_odd)) {
    band = lower_odd;
  } else if (raw >= static_cast<double>(lower_odd + 2)) {
    band = lower_odd + 2;
  } else {
    band = (raw - static_cast<double>(lower_odd) < static_cast<double>(lower_odd + 2) - raw)
               ? lower_odd
               : lower_odd + 2;
  }
  if (band < 1) band = 1;
  m.band_width = static_cast<int>(band);

  auto [num, den] = to_fraction(density);
  m.alpha_num = num;
  m.alpha_den = den;
  return m;
}

Mask generate_mask(const StructurePattern& pattern, int rows, int cols, std::uint64_t seed) {
  check_shape(rows, cols);
  std::vector<Pos> active;

  switch (pattern.kind()) {
    case PatternKind::DiagonalK: {
      const DiagonalK& d = pattern.diagonal();
      if (d.offsets.empty()) throw std::invalid_argument("diagonal pattern has no offsets");
      const int bound = std::max(rows, cols) - 1;
      std::set<int> seen_canonical;
      for (int o : d.offsets) {
        if (o < -bound || o > bound) throw std::invalid_argument("diagonal offset out of range");
        if (d.wrap) {
          if (!seen_canonical.insert(diag_canonical_offset(o, rows, cols)).second) {
            throw std::invalid_argument("diagonal offsets coincide under wrap");
          }
          for (const Pos& p : diag_positions(diag_canonical_offset(o, rows, cols), rows, cols)) {
            active.push_back(p);
          }
        } else {
          if (!seen_canonical.insert(o).second) {
            throw std::invalid_argument("duplicate diagonal offset");
          }
          const int lo = std::max(0, -o);
          const int hi = std::min(rows - 1, cols - 1 - o);
          for (int r = lo; r <= hi; ++r) active.push_back({r, r + o});
        }
      }
      break;
    }
    case PatternKind::BlockB: {
      const BlockB& b = pattern.block();
      if (b.block_size <= 0) throw std::invalid_argument("block size must be positive");
      if (rows % b.block_size != 0 || cols % b.block_size != 0) {
        throw std::invalid_argument("block size must divide both dimensions");
      }
      const int grid_rows = rows / b.block_size;
      const int grid_cols = cols / b.block_size;
      std::set<std::pair<int, int>> seen;
      for (const auto& [br, bc] : b.active_blocks) {
        if (br < 0 || br >= grid_rows || bc < 0 || bc >= grid_cols) {
          throw std::invalid_argument("active block out of range");
        }
        if (!seen.insert({br, bc}).second) throw std::invalid_argument("duplicate active block");
        for (int r = br * b.block_size; r < (br + 1) * b.block_size; ++r) {
          for (int c = bc * b.block_size; c < (bc + 1) * b.block_size; ++c) {
            active.push_back({r, c});
          }
        }
      }
      break;
    }
    case PatternKind::NM: {
      const NM& nm = pattern.nm();
      if (nm.m_group <= 0 || nm.n_keep <= 0 || nm.n_keep > nm.m_group) {
        throw std::invalid_argument("nm pattern requires 0 < n_keep <= m_group");
      }
      if (cols % nm.m_group != 0) {
        throw std::invalid_argument("group size must divide the column count");
      }
      Rng rng(seed);
      const int groups = cols / nm.m_group;
      for (int r = 0; r < rows; ++r) {
        for (int g = 0; g < groups; ++g) {
          for (int pick : rng.sample_without_replacement(nm.m_group, nm.n_keep)) {
            active.push_back({r, g * nm.m_group + pick});
          }
        }
      }
      break;
    }
    case PatternKind::Unstructured: {
      const Unstructured& u = pattern.unstructured();
      const long long total = static_cast<long long>(rows) * cols;
      if (u.nnz < 0 || u.nnz > total) throw std::invalid_argument("nnz out of range");
      Rng rng(seed);
      // Partial Fisher-Yates over the flat index space.
      std::vector<long long> pool(static_cast<std::size_t>(total));
      std::iota(pool.begin(), pool.end(), 0LL);
      for (long long i = 0; i < u.nnz; ++i) {
        const long long j = i + rng.index(static_cast<int>(total - i));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
        const long long flat = pool[static_cast<std::size_t>(i)];
        active.push_back({static_cast<int>(flat / cols), static_cast<int>(flat % cols)});
      }
      break;
    }
  }

  return Mask::make(rows, cols, std::move(active), pattern);
}

bool validate_mask(const Mask& mask) {
  if (mask.rows <= 0 || mask.cols <= 0) return false;
  for (std::size_t i = 0; i < mask.active.size(); ++i) {
    const Pos& p = mask.active[i];
    if (p.row < 0 || p.row >= mask.rows || p.col < 0 || p.col >= mask.cols) return false;
    if (i > 0 && !(mask.active[i - 1] < p)) return false;
  }

  switch (mask.descriptor.kind()) {
    case PatternKind::DiagonalK: {
      const DiagonalK& d = mask.descriptor.diagonal();
      if (static_cast<long long>(mask.active.size()) != diag_nominal_count(d, mask.rows, mask.cols)) {
        return false;
      }
      std::set<int> canonical;
      for (int o : d.offsets) {
        if (d.wrap) {
          if (!canonical.insert(diag_canonical_offset(o, mask.rows, mask.cols)).second) return false;
        } else {
          if (!canonical.insert(o).second) return false;
        }
      }
      for (const Pos& p : mask.active) {
        int key;
        if (d.wrap) {
          key = mask.rows <= mask.cols
                    ? ((p.col - p.row) % mask.cols + mask.cols) % mask.cols
                    : ((p.col - p.row) % mask.rows + mask.rows) % mask.rows;
        } else {
          key = p.col - p.row;
        }
        if (!canonical.count(key)) return false;
      }
      return true;
    }
    case PatternKind::BlockB: {
      const BlockB& b = mask.descriptor.block();
      if (b.block_size <= 0) return false;
      if (mask.rows % b.block_size != 0 || mask.cols % b.block_size != 0) return false;
      const long long expect =
          static_cast<long long>(b.active_blocks.size()) * b.block_size * b.block_size;
      if (static_cast<long long>(mask.active.size()) != expect) return false;
      std::set<std::pair<int, int>> blocks(b.active_blocks.begin(), b.active_blocks.end());
      if (blocks.size() != b.active_blocks.size()) return false;
      for (const Pos& p : mask.active) {
        if (!blocks.count({p.row / b.block_size, p.col / b.block_size})) return false;
      }
      return true;
    }
    case PatternKind::NM: {
      const NM& nm = mask.descriptor.nm();
      if (nm.m_group <= 0 || nm.n_keep <= 0 || nm.n_keep > nm.m_group) return false;
      if (mask.cols % nm.m_group != 0) return false;
      const int groups = mask.cols / nm.m_group;
      std::vector<int> count(static_cast<std::size_t>(mask.rows) * groups, 0);
      for (const Pos& p : mask.active) {
        ++count[static_cast<std::size_t>(p.row) * groups + p.col / nm.m_group];
      }
      for (int c : count) {
        if (c != nm.n_keep) return false;
      }
      return true;
    }
    case PatternKind::Unstructured: {
      return static_cast<long long>(mask.active.size()) == mask.descriptor.unstructured().nnz;
    }
  }
  return false;
}

StructurePattern pattern_from_density(PatternKind family, double density, int rows, int cols,
                                      std::uint64_t seed) {
  check_shape(rows, cols);
  const DensityMapping dm = map_density(density, cols);
  Rng rng(seed);

  switch (family) {
    case PatternKind::DiagonalK: {
      const int w = diag_wrap_modulus(rows, cols);
      if (dm.k > w) throw std::domain_error("pattern_from_density: too many diagonals");
      std::vector<int> offsets = rng.sample_without_replacement(w, dm.k);
      // Symmetric normal form: canonical values past rows-1 wrap negative.
      for (int& o : offsets) {
        if (rows <= cols && o > rows - 1) o -= cols;
        if (rows > cols && o > cols - 1) o -= rows;
      }
      std::sort(offsets.begin(), offsets.end());
      return {DiagonalK{std::move(offsets), true}};
    }
    case PatternKind::BlockB: {
      const int bs = dm.block;
      if (rows % bs != 0 || cols % bs != 0) {
        throw std::domain_error("pattern_from_density: block size does not divide shape");
      }
      const int grid_cols = cols / bs;
      std::vector<std::pair<int, int>> blocks;
      for (int br = 0; br < rows / bs; ++br) blocks.emplace_back(br, rng.index(grid_cols));
      return {BlockB{bs, std::move(blocks)}};
    }
    case PatternKind::NM: {
      if (dm.alpha_den > cols || cols % static_cast<int>(dm.alpha_den) != 0) {
        throw std::domain_error("pattern_from_density: alpha group does not divide columns");
      }
      return {NM{static_cast<int>(dm.alpha_num), static_cast<int>(dm.alpha_den)}};
    }
    case PatternKind::Unstructured: {
      const long long total = static_cast<long long>(rows) * cols;
      return {Unstructured{round_half_away(density * static_cast<double>(total))}};
    }
  }
  throw std::invalid_argument("pattern_from_density: unknown family");
}

SparseLayer::SparseLayer(Mask mask) : mask_(std::move(mask)) {
  values_.assign(mask_.active.size(), 0.0);
  build_csr();
}

SparseLayer::SparseLayer(Mask mask, std::vector<double> values) : mask_(std::move(mask)) {
  if (values.size() != mask_.active.size()) {
    throw std::invalid_argument("SparseLayer: values length does not match mask");
  }
  values_ = std::move(values);
  build_csr();
}

void SparseLayer::build_csr() {
  row_ptr_.assign(static_cast<std::size_t>(mask_.rows) + 1, 0);
  col_idx_.resize(mask_.active.size());
  for (const Pos& p : mask_.active) ++row_ptr_[static_cast<std::size_t>(p.row) + 1];
  for (int r = 0; r < mask_.rows; ++r) {
    row_ptr_[static_cast<std::size_t>(r) + 1] += row_ptr_[static_cast<std::size_t>(r)];
  }
  // Mask positions are (row, col) sorted, so a straight copy keeps each
  // row's columns ascending: the accumulation-order contract.
  for (std::size_t i = 0; i < mask_.active.size(); ++i) {
    col_idx_[i] = mask_.active[i].col;
  }
}

std::vector<double> SparseLayer::matvec(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != mask_.cols) {
    throw std::invalid_argument("matvec: input length mismatch");
  }
  std::vector<double> y(static_cast<std::size_t>(mask_.rows), 0.0);
  for (int r = 0; r < mask_.rows; ++r) {
    double acc = 0.0;
    for (int i = row_ptr_[static_cast<std::size_t>(r)]; i < row_ptr_[static_cast<std::size_t>(r) + 1]; ++i) {
      acc += values_[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(col_idx_[static_cast<std::size_t>(i)])];
    }
    y[static_cast<std::size_t>(r)] = acc;
  }
  return y;
}

std::vector<double> SparseLayer::matvec_transposed(std::span<const double> g) const {
  if (static_cast<int>(g.size()) != mask_.rows) {
    throw std::invalid_argument("matvec_transposed: input length mismatch");
  }
  std::vector<double> y(static_cast<std::size_t>(mask_.cols), 0.0);
  for (int r = 0; r < mask_.rows; ++r) {
    const double gr = g[static_cast<std::size_t>(r)];
    for (int i = row_ptr_[static_cast<std::size_t>(r)]; i < row_ptr_[static_cast<std::size_t>(r) + 1]; ++i) {
      y[static_cast<std::size_t>(col_idx_[static_cast<std::size_t>(i)])] += values_[static_cast<std::size_t>(i)] * gr;
    }
  }
  return y;
}

std::vector<double> SparseLayer::matvec_gather(std::span<const double> x,
                                               std::span<const int> index_map) const {
  if (static_cast<int>(index_map.size()) != mask_.cols) {
    throw std::invalid_argument("matvec_gather: index map length mismatch");
  }
  std::vector<double> y(static_cast<std::size_t>(mask_.rows), 0.0);
  for (int r = 0; r < mask_.rows; ++r) {
    double acc = 0.0;
    for (int i = row_ptr_[static_cast<std::size_t>(r)]; i < row_ptr_[static_cast<std::size_t>(r) + 1]; ++i) {
      acc += values_[static_cast<std::size_t>(i)] *
             x[static_cast<std::size_t>(index_map[static_cast<std::size_t>(col_idx_[static_cast<std::size_t>(i)])])];
    }
    y[static_cast<std::size_t>(r)] = acc;
  }
  return y;
}

std::vector<double> SparseLayer::to_dense() const {
  std::vector<double> d(static_cast<std::size_t>(mask_.rows) * mask_.cols, 0.0);
  for (std::size_t i = 0; i < mask_.active.size(); ++i) {
    const Pos& p = mask_.active[i];
    d[static_cast<std::size_t>(p.row) * mask_.cols + p.col] = values_[i];
  }
  return d;
}

void SparseLayer::remap(Mask new_mask) {
  if (new_mask.rows != mask_.rows || new_mask.cols != mask_.cols) {
    throw std::invalid_argument("remap: shape change not allowed");
  }
  std::vector<double> new_values(new_mask.active.size(), 0.0);
  // Both position lists are sorted; one merge pass carries survivors.
  std::size_t i = 0, j = 0;
  while (i < mask_.active.size() && j < new_mask.active.size()) {
    if (mask_.active[i] < new_mask.active[j]) {
      ++i;
    } else if (new_mask.active[j] < mask_.active[i]) {
      ++j;
    } else {
      new_values[j] = values_[i];
      ++i;
      ++j;
    }
  }
  mask_ = std::move(new_mask);
  values_ = std::move(new_values);
  build_csr();
}

}  // namespace padst
