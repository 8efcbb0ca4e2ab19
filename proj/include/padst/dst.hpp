#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "padst/netcore.hpp"
#include "padst/rng.hpp"

namespace padst {

struct TrainConfig {
  double lr = 0.05;
  double lr_perm = -1.0;  // negative means: use lr
  double lambda_perm = 0.1;
  int epochs = 100;
  int batch_size = 32;
  int dst_interval = 10;
  double prune_fraction_initial = 0.3;
  double harden_threshold = 0.22;
  std::uint64_t seed = 0;
  double momentum = 0.0;
  bool set_style_random_growth = false;  // unstructured growth draws random positions
  int sinkhorn_max_iters = 200;
  double sinkhorn_tol = 1e-8;

  double effective_lr_perm() const { return lr_perm < 0.0 ? lr : lr_perm; }
};

struct Dataset {
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> targets;

  std::size_t size() const { return inputs.size(); }
};

struct LayerTrainState {
  bool hardened = false;
  int hardened_epoch = -1;   // -1 while soft
  long long hardened_step = -1;
  std::vector<double> penalty_history;  // one entry per step, stops at hardening
};

struct DSTState {
  long long step = 0;
  std::vector<LayerTrainState> layers;
};

struct EpochRecord {
  int epoch = 0;
  double task_loss = 0.0;
  double total_penalty = 0.0;
  std::vector<double> layer_penalty;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<int> hardened_epoch;               // -1 where never hardened
  std::vector<double> final_identity_distance;   // NaN where still soft
  double initial_task_loss = 0.0;
  double final_task_loss = 0.0;
  long long total_steps = 0;
};

struct DivergenceError : std::runtime_error {
  DivergenceError(long long at_step, const std::string& what)
      : std::runtime_error(what), step(at_step) {}
  long long step;
};

// Cosine decay from `initial` to zero across the run.
double prune_fraction_schedule(long long step, long long total_steps, double initial);

// True once the layer's most recent penalty is at or below the threshold,
// or the layer is already hardened.
bool harden_check(const DSTState& state, int layer_idx, double threshold);

// Inactive structure units a grow step may claim, flattened to positions.
// Diagonal: every position of every inactive wrapped diagonal. Block: every
// inactive tile. NM: in-group inactive slots. Unstructured: the complement.
std::vector<Pos> grow_candidates(const SparseLayer& layer);

// One magnitude-prune / gradient-grow update at the layer's structure-unit
// granularity. `probe_positions`/`probe_grads` carry gradients for the
// candidate units (grow_candidates order). Active entry count is conserved
// exactly; fractions that round to zero units leave the mask untouched.
void prune_grow(PALayer& layer, const std::vector<Pos>& probe_positions,
                const std::vector<double>& probe_grads, double fraction, Rng* grow_rng = nullptr,
                bool random_growth = false);

// Observer runs after every optimizer step (post mask update on update
// steps); used by tests to audit budget conservation and hardening.
using StepObserver = std::function<void(const SmallNet&, const DSTState&, long long step)>;

// SGD on task loss + lambda * permutation penalty, Birkhoff projection after
// every permutation step, prune/grow every dst_interval steps, hardening
// when a layer's penalty reaches the threshold. Throws DivergenceError on
// non-finite loss.
TrainReport train(SmallNet& net, const Dataset& data, const TrainConfig& cfg,
                  DSTState* state_out = nullptr, const StepObserver& observer = {});

// Mean over samples of 0.5 * squared error; the gradient pairs with it.
double task_loss(const SmallNet& net, const Dataset& data);

}  // namespace padst
