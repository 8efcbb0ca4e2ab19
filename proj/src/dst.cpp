#include "padst/dst.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace padst {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Canonical unit key of an active position: wrapped-diagonal class, block
// id, or flat index, depending on the family.
long long diag_key(const Mask& m, Pos p) {
  const int w = diag_wrap_modulus(m.rows, m.cols);
  return ((p.col - p.row) % w + w) % w;
}

int symmetric_offset(int canonical, int rows, int cols) {
  if (rows <= cols) return canonical > rows - 1 ? canonical - cols : canonical;
  return canonical > cols - 1 ? canonical - rows : canonical;
}

struct UnitizedCandidates {
  std::vector<long long> unit_keys;     // ascending
  std::vector<Pos> positions;           // grouped by unit, unit order
  std::vector<int> unit_of_position;    // index into unit_keys
};

UnitizedCandidates candidate_units(const SparseLayer& layer) {
  const Mask& m = layer.mask();
  UnitizedCandidates out;

  switch (m.descriptor.kind()) {
    case PatternKind::DiagonalK: {
      const DiagonalK& d = m.descriptor.diagonal();
      if (!d.wrap) throw std::invalid_argument("prune/grow supports wrapped diagonals only");
      std::set<long long> active;
      for (int o : d.offsets) active.insert(diag_canonical_offset(o, m.rows, m.cols));
      const int w = diag_wrap_modulus(m.rows, m.cols);
      for (int k = 0; k < w; ++k) {
        if (active.count(k)) continue;
        out.unit_keys.push_back(k);
        for (const Pos& p : diag_positions(k, m.rows, m.cols)) {
          out.positions.push_back(p);
          out.unit_of_position.push_back(static_cast<int>(out.unit_keys.size()) - 1);
        }
      }
      break;
    }
    case PatternKind::BlockB: {
      const BlockB& b = m.descriptor.block();
      const int grid_rows = m.rows / b.block_size;
      const int grid_cols = m.cols / b.block_size;
      std::set<long long> active;
      for (const auto& [br, bc] : b.active_blocks) {
        active.insert(static_cast<long long>(br) * grid_cols + bc);
      }
      for (long long id = 0; id < static_cast<long long>(grid_rows) * grid_cols; ++id) {
        if (active.count(id)) continue;
        out.unit_keys.push_back(id);
        const int br = static_cast<int>(id / grid_cols);
        const int bc = static_cast<int>(id % grid_cols);
        for (int r = br * b.block_size; r < (br + 1) * b.block_size; ++r) {
          for (int c = bc * b.block_size; c < (bc + 1) * b.block_size; ++c) {
            out.positions.push_back({r, c});
            out.unit_of_position.push_back(static_cast<int>(out.unit_keys.size()) - 1);
          }
        }
      }
      break;
    }
    case PatternKind::NM: {
      const NM& nm = m.descriptor.nm();
      const int groups = m.cols / nm.m_group;
      std::set<Pos> active(m.active.begin(), m.active.end());
      for (int r = 0; r < m.rows; ++r) {
        for (int g = 0; g < groups; ++g) {
          out.unit_keys.push_back(static_cast<long long>(r) * groups + g);
          for (int c = g * nm.m_group; c < (g + 1) * nm.m_group; ++c) {
            if (active.count({r, c})) continue;
            out.positions.push_back({r, c});
            out.unit_of_position.push_back(static_cast<int>(out.unit_keys.size()) - 1);
          }
        }
      }
      break;
    }
    case PatternKind::Unstructured: {
      std::set<Pos> active(m.active.begin(), m.active.end());
      for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
          if (active.count({r, c})) continue;
          out.unit_keys.push_back(static_cast<long long>(r) * m.cols + c);
          out.positions.push_back({r, c});
          out.unit_of_position.push_back(static_cast<int>(out.unit_keys.size()) - 1);
        }
      }
      break;
    }
  }
  return out;
}

long long units_to_move(double fraction, std::size_t active_units, std::size_t candidate_units_n) {
  if (!(fraction > 0.0)) return 0;
  const long long m = static_cast<long long>(
      std::ceil(fraction * static_cast<double>(active_units) - 1e-12));
  return std::min<long long>(m, static_cast<long long>(candidate_units_n));
}

}  // namespace

double prune_fraction_schedule(long long step, long long total_steps, double initial) {
  if (total_steps <= 0) throw std::invalid_argument("schedule: total_steps must be positive");
  if (step < 0 || step > total_steps) throw std::invalid_argument("schedule: step out of range");
  return initial / 2.0 * (1.0 + std::cos(kPi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

bool harden_check(const DSTState& state, int layer_idx, double threshold) {
  const LayerTrainState& ls = state.layers.at(static_cast<std::size_t>(layer_idx));
  if (ls.hardened) return true;
  if (ls.penalty_history.empty()) return false;
  return ls.penalty_history.back() <= threshold;
}

std::vector<Pos> grow_candidates(const SparseLayer& layer) {
  return candidate_units(layer).positions;
}

void prune_grow(PALayer& layer, const std::vector<Pos>& probe_positions,
                const std::vector<double>& probe_grads, double fraction, Rng* grow_rng,
                bool random_growth) {
  SparseLayer& w = layer.weights;
  const Mask& mask = w.mask();
  if (probe_positions.size() != probe_grads.size()) {
    throw std::invalid_argument("prune_grow: probe positions and grads disagree");
  }

  const UnitizedCandidates cand = candidate_units(w);
  if (cand.positions != probe_positions) {
    throw std::invalid_argument("prune_grow: probes do not match current grow candidates");
  }

  switch (mask.descriptor.kind()) {
    case PatternKind::DiagonalK: {
      const DiagonalK& d = mask.descriptor.diagonal();
      // Unit scores: l2 norm per active diagonal, summed |grad| per
      // candidate diagonal.
      std::map<long long, double> active_norm_sq;
      for (int o : d.offsets) active_norm_sq[diag_canonical_offset(o, mask.rows, mask.cols)] = 0.0;
      const std::span<const double> values = w.values();
      for (std::size_t i = 0; i < mask.active.size(); ++i) {
        active_norm_sq[diag_key(mask, mask.active[i])] += values[i] * values[i];
      }

      const long long m = units_to_move(fraction, active_norm_sq.size(), cand.unit_keys.size());
      if (m == 0) return;

      std::vector<std::pair<double, long long>> prune_order;
      prune_order.reserve(active_norm_sq.size());
      for (const auto& [key, nsq] : active_norm_sq) prune_order.push_back({nsq, key});
      std::sort(prune_order.begin(), prune_order.end());

      std::vector<double> grow_score(cand.unit_keys.size(), 0.0);
      for (std::size_t i = 0; i < probe_positions.size(); ++i) {
        grow_score[static_cast<std::size_t>(cand.unit_of_position[i])] += std::abs(probe_grads[i]);
      }
      std::vector<std::pair<double, long long>> grow_order;
      for (std::size_t u = 0; u < cand.unit_keys.size(); ++u) {
        grow_order.push_back({-grow_score[u], cand.unit_keys[u]});
      }
      std::sort(grow_order.begin(), grow_order.end());

      std::set<long long> keys;
      for (const auto& [key, nsq] : active_norm_sq) keys.insert(key);
      for (long long i = 0; i < m; ++i) keys.erase(prune_order[static_cast<std::size_t>(i)].second);
      for (long long i = 0; i < m; ++i) keys.insert(grow_order[static_cast<std::size_t>(i)].second);

      std::vector<int> offsets;
      std::vector<Pos> positions;
      for (long long key : keys) {
        offsets.push_back(symmetric_offset(static_cast<int>(key), mask.rows, mask.cols));
        for (const Pos& p : diag_positions(static_cast<int>(key), mask.rows, mask.cols)) {
          positions.push_back(p);
        }
      }
      std::sort(offsets.begin(), offsets.end());
      w.remap(Mask::make(mask.rows, mask.cols, std::move(positions),
                         {DiagonalK{std::move(offsets), true}}));
      break;
    }
    case PatternKind::BlockB: {
      const BlockB& b = mask.descriptor.block();
      const int grid_cols = mask.cols / b.block_size;
      std::map<long long, double> active_norm_sq;
      for (const auto& [br, bc] : b.active_blocks) {
        active_norm_sq[static_cast<long long>(br) * grid_cols + bc] = 0.0;
      }
      const std::span<const double> values = w.values();
      for (std::size_t i = 0; i < mask.active.size(); ++i) {
        const Pos& p = mask.active[i];
        active_norm_sq[static_cast<long long>(p.row / b.block_size) * grid_cols + p.col / b.block_size] +=
            values[i] * values[i];
      }

      const long long m = units_to_move(fraction, active_norm_sq.size(), cand.unit_keys.size());
      if (m == 0) return;

      std::vector<std::pair<double, long long>> prune_order;
      for (const auto& [key, nsq] : active_norm_sq) prune_order.push_back({nsq, key});
      std::sort(prune_order.begin(), prune_order.end());

      std::vector<double> grow_score(cand.unit_keys.size(), 0.0);
      for (std::size_t i = 0; i < probe_positions.size(); ++i) {
        grow_score[static_cast<std::size_t>(cand.unit_of_position[i])] += std::abs(probe_grads[i]);
      }
      std::vector<std::pair<double, long long>> grow_order;
      for (std::size_t u = 0; u < cand.unit_keys.size(); ++u) {
        grow_order.push_back({-grow_score[u], cand.unit_keys[u]});
      }
      std::sort(grow_order.begin(), grow_order.end());

      std::set<long long> keys;
      for (const auto& [key, nsq] : active_norm_sq) keys.insert(key);
      for (long long i = 0; i < m; ++i) keys.erase(prune_order[static_cast<std::size_t>(i)].second);
      for (long long i = 0; i < m; ++i) keys.insert(grow_order[static_cast<std::size_t>(i)].second);

      std::vector<std::pair<int, int>> blocks;
      std::vector<Pos> positions;
      for (long long key : keys) {
        const int br = static_cast<int>(key / grid_cols);
        const int bc = static_cast<int>(key % grid_cols);
        blocks.emplace_back(br, bc);
        for (int r = br * b.block_size; r < (br + 1) * b.block_size; ++r) {
          for (int c = bc * b.block_size; c < (bc + 1) * b.block_size; ++c) {
            positions.push_back({r, c});
          }
        }
      }
      w.remap(Mask::make(mask.rows, mask.cols, std::move(positions),
                         {BlockB{b.block_size, std::move(blocks)}}));
      break;
    }
    case PatternKind::NM: {
      if (!(fraction > 0.0)) return;
      const NM& nm = mask.descriptor.nm();
      const int groups = mask.cols / nm.m_group;

      // Worst active |w| per (row, group), with its position.
      struct Slot {
        double mag = 0.0;
        Pos pos;
        bool present = false;
      };
      std::vector<Slot> worst_active(static_cast<std::size_t>(mask.rows) * groups);
      const std::span<const double> values = w.values();
      for (std::size_t i = 0; i < mask.active.size(); ++i) {
        const Pos& p = mask.active[i];
        Slot& s = worst_active[static_cast<std::size_t>(p.row) * groups + p.col / nm.m_group];
        const double mag = std::abs(values[i]);
        if (!s.present || mag < s.mag || (mag == s.mag && p < s.pos)) {
          s = {mag, p, true};
        }
      }

      // Best inactive |grad| per (row, group).
      std::vector<Slot> best_grow(static_cast<std::size_t>(mask.rows) * groups);
      for (std::size_t i = 0; i < probe_positions.size(); ++i) {
        const Pos& p = probe_positions[i];
        Slot& s = best_grow[static_cast<std::size_t>(p.row) * groups + p.col / nm.m_group];
        const double mag = std::abs(probe_grads[i]);
        if (!s.present || mag > s.mag || (mag == s.mag && p < s.pos)) {
          s = {mag, p, true};
        }
      }

      std::set<Pos> positions(mask.active.begin(), mask.active.end());
      for (std::size_t u = 0; u < worst_active.size(); ++u) {
        const Slot& out_slot = worst_active[u];
        const Slot& in_slot = best_grow[u];
        if (!out_slot.present || !in_slot.present) continue;
        if (in_slot.mag > out_slot.mag) {
          positions.erase(out_slot.pos);
          positions.insert(in_slot.pos);
        }
      }
      w.remap(Mask::make(mask.rows, mask.cols,
                         std::vector<Pos>(positions.begin(), positions.end()), mask.descriptor));
      break;
    }
    case PatternKind::Unstructured: {
      const long long m = units_to_move(fraction, mask.active.size(), cand.positions.size());
      if (m == 0) return;

      const std::span<const double> values = w.values();
      std::vector<std::pair<double, Pos>> prune_order;
      prune_order.reserve(mask.active.size());
      for (std::size_t i = 0; i < mask.active.size(); ++i) {
        prune_order.push_back({std::abs(values[i]), mask.active[i]});
      }
      std::sort(prune_order.begin(), prune_order.end());

      std::set<Pos> positions(mask.active.begin(), mask.active.end());
      for (long long i = 0; i < m; ++i) positions.erase(prune_order[static_cast<std::size_t>(i)].second);

      if (random_growth) {
        if (!grow_rng) throw std::invalid_argument("prune_grow: random growth needs an rng");
        std::vector<int> picks = grow_rng->sample_without_replacement(
            static_cast<int>(cand.positions.size()), static_cast<int>(m));
        for (int idx : picks) positions.insert(cand.positions[static_cast<std::size_t>(idx)]);
      } else {
        std::vector<std::pair<double, Pos>> grow_order;
        grow_order.reserve(cand.positions.size());
        for (std::size_t i = 0; i < cand.positions.size(); ++i) {
          grow_order.push_back({-std::abs(probe_grads[i]), cand.positions[i]});
        }
        std::sort(grow_order.begin(), grow_order.end());
        for (long long i = 0; i < m; ++i) positions.insert(grow_order[static_cast<std::size_t>(i)].second);
      }

      w.remap(Mask::make(mask.rows, mask.cols,
                         std::vector<Pos>(positions.begin(), positions.end()), mask.descriptor));
      break;
    }
  }
}

double task_loss(const SmallNet& net, const Dataset& data) {
  double total = 0.0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const Tape tape = forward_train(net, data.inputs[s]);
    double err = 0.0;
    for (std::size_t i = 0; i < tape.output.size(); ++i) {
      const double d = tape.output[i] - data.targets[s][i];
      err += d * d;
    }
    total += 0.5 * err;
  }
  return total / static_cast<double>(data.size());
}

TrainReport train(SmallNet& net, const Dataset& data, const TrainConfig& cfg, DSTState* state_out,
                  const StepObserver& observer) {
  net.check();
  if (data.size() == 0) throw std::invalid_argument("train: dataset is empty");
  if (data.targets.size() != data.inputs.size()) {
    throw std::invalid_argument("train: inputs and targets disagree");
  }
  if (cfg.batch_size <= 0) throw std::invalid_argument("train: batch_size must be positive");
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be non-negative");
  if (cfg.dst_interval <= 0) throw std::invalid_argument("train: dst_interval must be positive");
  for (std::size_t s = 0; s < data.size(); ++s) {
    if (static_cast<int>(data.inputs[s].size()) != net.input_dim() ||
        static_cast<int>(data.targets[s].size()) != net.output_dim()) {
      throw std::invalid_argument("train: sample shape mismatch");
    }
  }

  const std::size_t n_layers = net.layers.size();
  DSTState state;
  state.layers.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (net.layers[l].perm.hardened()) {
      state.layers[l].hardened = true;
      state.layers[l].hardened_epoch = 0;
      state.layers[l].hardened_step = 0;
    }
  }

  const long long steps_per_epoch =
      (static_cast<long long>(data.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const long long total_steps = steps_per_epoch * cfg.epochs;

  TrainReport report;
  report.total_steps = total_steps;
  report.initial_task_loss = task_loss(net, data);

  Rng master(cfg.seed);
  Rng shuffle_rng = master.fork(1);
  Rng grow_rng = master.fork(2);

  // Momentum velocities follow weights and biases; permutation entries take
  // plain projected steps (velocity has no clean meaning across projection).
  std::vector<std::vector<double>> vel_w(n_layers), vel_b(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    vel_w[l].assign(net.layers[l].weights.nnz(), 0.0);
    if (net.layers[l].bias) vel_b[l].assign(net.layers[l].bias->size(), 0.0);
  }

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const double lr_perm = cfg.effective_lr_perm();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);

    for (long long batch_start = 0; batch_start < static_cast<long long>(data.size());
         batch_start += cfg.batch_size) {
      const long long batch_end =
          std::min<long long>(batch_start + cfg.batch_size, static_cast<long long>(data.size()));
      const double batch_n = static_cast<double>(batch_end - batch_start);
      const bool update_step = (state.step + 1) % cfg.dst_interval == 0;

      std::vector<std::vector<Pos>> probes(n_layers);
      if (update_step) {
        for (std::size_t l = 0; l < n_layers; ++l) {
          probes[l] = grow_candidates(net.layers[l].weights);
        }
      }

      GradientBundle bundle = GradientBundle::zeros_like(net, update_step ? &probes : nullptr);
      double batch_loss = 0.0;
      try {
        for (long long s = batch_start; s < batch_end; ++s) {
          const std::vector<double>& x = data.inputs[order[static_cast<std::size_t>(s)]];
          const std::vector<double>& t = data.targets[order[static_cast<std::size_t>(s)]];
          const Tape tape = forward_train(net, x);
          std::vector<double> d_out(tape.output.size());
          double err = 0.0;
          for (std::size_t i = 0; i < tape.output.size(); ++i) {
            const double d = tape.output[i] - t[i];
            err += d * d;
            d_out[i] = d / batch_n;
          }
          batch_loss += 0.5 * err / batch_n;
          backward_accumulate(net, tape, d_out, bundle, update_step ? &probes : nullptr);
        }
      } catch (const NonFiniteError& e) {
        throw DivergenceError(state.step + 1,
                              "training diverged at step " + std::to_string(state.step + 1) + ": " +
                                  e.what());
      }

      double total_penalty = 0.0;
      for (std::size_t l = 0; l < n_layers; ++l) {
        if (!net.layers[l].perm.hardened()) {
          total_penalty += perm_penalty(net.layers[l].perm).value;
        }
      }
      const double loss = batch_loss + cfg.lambda_perm * total_penalty;
      if (!std::isfinite(loss)) {
        throw DivergenceError(state.step + 1,
                              "training diverged at step " + std::to_string(state.step + 1) +
                                  ": non-finite loss");
      }

      // Parameter step.
      for (std::size_t l = 0; l < n_layers; ++l) {
        PALayer& layer = net.layers[l];
        LayerGrads& g = bundle.layers[l];

        std::span<double> values = layer.weights.values();
        if (cfg.momentum > 0.0) {
          for (std::size_t i = 0; i < values.size(); ++i) {
            vel_w[l][i] = cfg.momentum * vel_w[l][i] + g.d_values[i];
            values[i] -= cfg.lr * vel_w[l][i];
          }
        } else {
          for (std::size_t i = 0; i < values.size(); ++i) values[i] -= cfg.lr * g.d_values[i];
        }

        if (layer.bias) {
          std::vector<double>& bias = *layer.bias;
          if (cfg.momentum > 0.0) {
            for (std::size_t i = 0; i < bias.size(); ++i) {
              vel_b[l][i] = cfg.momentum * vel_b[l][i] + g.d_bias[i];
              bias[i] -= cfg.lr * vel_b[l][i];
            }
          } else {
            for (std::size_t i = 0; i < bias.size(); ++i) bias[i] -= cfg.lr * g.d_bias[i];
          }
        }

        if (!layer.perm.hardened()) {
          const int n = layer.perm.size();
          std::vector<double> m = layer.perm.matrix();
          std::vector<double> pen_grad;
          try {
            pen_grad = perm_penalty_grad(layer.perm);
          } catch (const std::domain_error&) {
            // A zero row or column means the step tore the matrix off the
            // polytope interior; only a runaway update does that.
            throw DivergenceError(state.step + 1,
                                  "training diverged at step " + std::to_string(state.step + 1) +
                                      ": permutation relaxation collapsed");
          }
          for (std::size_t i = 0; i < m.size(); ++i) {
            m[i] -= lr_perm * (g.d_perm[i] + cfg.lambda_perm * pen_grad[i]);
          }
          ProjectResult proj = project_birkhoff(n, std::move(m), cfg.sinkhorn_max_iters, cfg.sinkhorn_tol);
          layer.perm = std::move(proj.perm);
        }
      }

      ++state.step;

      // Hardening check on post-projection penalties.
      for (std::size_t l = 0; l < n_layers; ++l) {
        if (state.layers[l].hardened) continue;
        state.layers[l].penalty_history.push_back(perm_penalty(net.layers[l].perm).value);
        if (harden_check(state, static_cast<int>(l), cfg.harden_threshold)) {
          net.layers[l].perm = harden(net.layers[l].perm);
          state.layers[l].hardened = true;
          state.layers[l].hardened_epoch = epoch;
          state.layers[l].hardened_step = state.step;
        }
      }

      if (update_step) {
        const double fraction =
            prune_fraction_schedule(state.step, total_steps, cfg.prune_fraction_initial);
        for (std::size_t l = 0; l < n_layers; ++l) {
          prune_grow(net.layers[l], probes[l], bundle.layers[l].probe_grads, fraction, &grow_rng,
                     cfg.set_style_random_growth);
          // Mask changed: stale velocities would push retired positions.
          std::fill(vel_w[l].begin(), vel_w[l].end(), 0.0);
          vel_w[l].resize(net.layers[l].weights.nnz(), 0.0);
        }
      }

      if (observer) observer(net, state, state.step);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.task_loss = task_loss(net, data);
    rec.layer_penalty.resize(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
      rec.layer_penalty[l] =
          net.layers[l].perm.hardened() ? 0.0 : perm_penalty(net.layers[l].perm).value;
      rec.total_penalty += rec.layer_penalty[l];
    }
    report.epochs.push_back(std::move(rec));
  }

  report.final_task_loss = report.epochs.empty() ? report.initial_task_loss : report.epochs.back().task_loss;
  report.hardened_epoch.resize(n_layers);
  report.final_identity_distance.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    report.hardened_epoch[l] = state.layers[l].hardened ? state.layers[l].hardened_epoch : -1;
    report.final_identity_distance[l] = net.layers[l].perm.hardened()
                                            ? identity_distance(net.layers[l].perm)
                                            : std::numeric_limits<double>::quiet_NaN();
  }

  if (state_out) *state_out = std::move(state);
  return report;
}

}  // namespace padst
