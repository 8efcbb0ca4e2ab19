#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace padst {

struct Pos {
  int row = 0;
  int col = 0;
  auto operator<=>(const Pos&) const = default;
};

// Wrapped diagonals: offset o places (r, (r+o) mod C) when R <= C and
// ((c-o) mod R, c) when R > C, so every diagonal carries exactly min(R,C)
// entries and transposition maps offset o to -o.
struct DiagonalK {
  std::vector<int> offsets;
  bool wrap = true;
};

// Square tiles of side block_size; active_blocks lists (block_row, block_col).
struct BlockB {
  int block_size = 1;
  std::vector<std::pair<int, int>> active_blocks;
};

// n_keep active entries per contiguous group of m_group columns, every row.
struct NM {
  int n_keep = 1;
  int m_group = 1;
};

// Free support with a fixed entry budget.
struct Unstructured {
  long long nnz = 0;
};

enum class PatternKind { DiagonalK, BlockB, NM, Unstructured };

struct StructurePattern {
  std::variant<DiagonalK, BlockB, NM, Unstructured> params;

  PatternKind kind() const {
    return static_cast<PatternKind>(params.index());
  }
  const DiagonalK& diagonal() const { return std::get<DiagonalK>(params); }
  const BlockB& block() const { return std::get<BlockB>(params); }
  const NM& nm() const { return std::get<NM>(params); }
  const Unstructured& unstructured() const { return std::get<Unstructured>(params); }
};

const char* pattern_kind_name(PatternKind kind);

// Active-position set plus the descriptor it was generated from. Positions
// are sorted (row, col) and unique; construction enforces both.
struct Mask {
  int rows = 0;
  int cols = 0;
  std::vector<Pos> active;
  StructurePattern descriptor;

  static Mask make(int rows, int cols, std::vector<Pos> active, StructurePattern descriptor);
};

// Density translation shared by all families: k and block are
// round-half-away-from-zero(density * n_in), band_width is the nearest odd
// (ties upward), alpha is density as a reduced fraction.
struct DensityMapping {
  double density = 0.0;
  int n_in = 0;
  int k = 0;
  int block = 0;
  int band_width = 0;
  long long alpha_num = 0;
  long long alpha_den = 1;
};

DensityMapping map_density(double density, int n_in);

Mask generate_mask(const StructurePattern& pattern, int rows, int cols, std::uint64_t seed);

// True when every active position conforms to the descriptor and the count
// matches the descriptor's nominal entry budget.
bool validate_mask(const Mask& mask);

// Convenience: instantiate a concrete pattern for (family, density, shape).
// Diagonal picks k distinct random offsets, block one random active block
// per block row, nm uses the alpha fraction, unstructured a uniform draw.
StructurePattern pattern_from_density(PatternKind family, double density, int rows, int cols,
                                      std::uint64_t seed);

// CSR storage over a structured mask. Row entries are kept in ascending
// column order; matvec accumulates in exactly that order, which the
// re-indexed inference path relies on for bitwise reproducibility.
class SparseLayer {
public:
  SparseLayer() = default;
  explicit SparseLayer(Mask mask);
  SparseLayer(Mask mask, std::vector<double> values);

  int rows() const { return mask_.rows; }
  int cols() const { return mask_.cols; }
  std::size_t nnz() const { return mask_.active.size(); }
  const Mask& mask() const { return mask_; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  std::span<const int> row_ptr() const { return row_ptr_; }
  std::span<const int> col_idx() const { return col_idx_; }

  // y = W x.
  std::vector<double> matvec(std::span<const double> x) const;

  // y = W^T g, same storage, scatter along rows.
  std::vector<double> matvec_transposed(std::span<const double> g) const;

  // y[r] = sum_i W[r,i] * x[index_map[i]]; the permuted product without a
  // materialized intermediate, same accumulation order as matvec.
  std::vector<double> matvec_gather(std::span<const double> x, std::span<const int> index_map) const;

  // Row-major dense copy; test and serialization use only.
  std::vector<double> to_dense() const;

  // Replace the mask, carrying values on surviving positions and zero-filling
  // grown ones. Shape must be unchanged.
  void remap(Mask new_mask);

private:
  void build_csr();

  Mask mask_;
  std::vector<double> values_;
  std::vector<int> row_ptr_;
  std::vector<int> col_idx_;
};

// Wrapped-diagonal helpers shared by generation, validation and prune/grow.
// Canonical offsets live in [0, wrap_modulus); the descriptor keeps the
// symmetric form (negative below the main diagonal).
int diag_wrap_modulus(int rows, int cols);
int diag_canonical_offset(int offset, int rows, int cols);
std::vector<Pos> diag_positions(int canonical_offset, int rows, int cols);

}  // namespace padst
