#pragma once

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "padst/patterns.hpp"
#include "padst/permutation.hpp"

namespace padst {

// Which side of the sparse product the permutation sits on.
//   Column: z = W (P x) + b
//   Row:    z = P (W x) + b
enum class PermSide { Column, Row };

struct PALayer {
  SparseLayer weights;
  SoftPermutation perm;
  std::optional<std::vector<double>> bias;
  PermSide side = PermSide::Column;

  int in_dim() const { return weights.cols(); }
  int out_dim() const { return weights.rows(); }
  void check() const;
};

struct SmallNet {
  std::vector<PALayer> layers;

  int input_dim() const { return layers.front().in_dim(); }
  int output_dim() const { return layers.back().out_dim(); }
  void check() const;
};

struct NonFiniteError : std::runtime_error {
  explicit NonFiniteError(int layer_idx)
      : std::runtime_error("non-finite activation in layer " + std::to_string(layer_idx)),
        layer(layer_idx) {}
  int layer;
};

// Per-layer records for reverse mode: the layer input x, the intermediate
// mid (P x on the column side, W x on the row side) and the pre-activation z.
struct LayerTape {
  std::vector<double> input;
  std::vector<double> mid;
  std::vector<double> pre_act;
};

struct Tape {
  std::vector<LayerTape> layers;
  std::vector<double> output;
};

struct LayerGrads {
  std::vector<double> d_values;  // active weight positions only, mask order
  std::vector<double> d_perm;    // dense n*n, empty when hardened
  std::vector<double> d_bias;    // empty when the layer has no bias
  std::vector<double> probe_grads;  // aligned with the probe position list
};

struct GradientBundle {
  std::vector<LayerGrads> layers;
  std::vector<double> d_input;

  static GradientBundle zeros_like(const SmallNet& net,
                                   const std::vector<std::vector<Pos>>* probes = nullptr);
};

// ReLU between layers, none after the last. Throws NonFiniteError with the
// offending layer index if an activation leaves the finite range.
Tape forward_train(const SmallNet& net, std::span<const double> x);

// Multiplication-free permutation handling: requires every perm hardened,
// reads inputs through the index maps and never materializes the permuted
// vector. Bitwise equal to forward_train on the same hardened net.
std::vector<double> forward_inference(const SmallNet& net, std::span<const double> x);

// Reverse pass for one sample, accumulating into `into` (zeros_like layout).
// `probes` optionally lists inactive weight positions per layer whose
// gradients are wanted for growth scoring; nothing dense is formed for the
// weight side either way.
void backward_accumulate(const SmallNet& net, const Tape& tape, std::span<const double> d_output,
                         GradientBundle& into,
                         const std::vector<std::vector<Pos>>* probes = nullptr);

GradientBundle backward(const SmallNet& net, const Tape& tape, std::span<const double> d_output,
                        const std::vector<std::vector<Pos>>* probes = nullptr);

// Operator applying the transposed layer map: g -> P^T (W^T g) on the column
// side, W^T (P^T g) on the row side. Hardened perms go through index maps.
class LayerTransposeOp {
public:
  explicit LayerTransposeOp(const PALayer& layer) : layer_(&layer) {}
  std::vector<double> apply(std::span<const double> g) const;

private:
  const PALayer* layer_;
};

LayerTransposeOp transpose_layer(const PALayer& layer);

}  // namespace padst
