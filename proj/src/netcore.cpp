#include "padst/netcore.hpp"

#include <cmath>

namespace padst {

namespace {

int perm_dim(const PALayer& layer) {
  return layer.side == PermSide::Column ? layer.in_dim() : layer.out_dim();
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void relu_inplace(std::vector<double>& v) {
  for (double& x : v) x = x > 0.0 ? x : 0.0;
}

void add_bias(std::vector<double>& v, const std::optional<std::vector<double>>& bias) {
  if (!bias) return;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += (*bias)[i];
}

}  // namespace

void PALayer::check() const {
  if (perm.size() != perm_dim(*this)) {
    throw std::invalid_argument("permutation dimension does not match the permuted side");
  }
  if (bias && static_cast<int>(bias->size()) != out_dim()) {
    throw std::invalid_argument("bias length does not match layer output");
  }
}

void SmallNet::check() const {
  if (layers.empty()) throw std::invalid_argument("network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].check();
    if (l > 0 && layers[l].in_dim() != layers[l - 1].out_dim()) {
      throw std::invalid_argument("layer dimensions do not chain");
    }
  }
}

GradientBundle GradientBundle::zeros_like(const SmallNet& net,
                                          const std::vector<std::vector<Pos>>* probes) {
  GradientBundle b;
  b.layers.resize(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const PALayer& layer = net.layers[l];
    b.layers[l].d_values.assign(layer.weights.nnz(), 0.0);
    if (!layer.perm.hardened()) {
      const std::size_t n = static_cast<std::size_t>(layer.perm.size());
      b.layers[l].d_perm.assign(n * n, 0.0);
    }
    if (layer.bias) b.layers[l].d_bias.assign(layer.bias->size(), 0.0);
    if (probes) b.layers[l].probe_grads.assign((*probes)[l].size(), 0.0);
  }
  b.d_input.assign(static_cast<std::size_t>(net.input_dim()), 0.0);
  return b;
}

Tape forward_train(const SmallNet& net, std::span<const double> x) {
  net.check();
  if (static_cast<int>(x.size()) != net.input_dim()) {
    throw std::invalid_argument("forward_train: input length mismatch");
  }

  Tape tape;
  tape.layers.resize(net.layers.size());
  std::vector<double> cur(x.begin(), x.end());

  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const PALayer& layer = net.layers[l];
    LayerTape& t = tape.layers[l];
    t.input = cur;

    std::vector<double> z;
    if (layer.side == PermSide::Column) {
      t.mid = layer.perm.apply(t.input);
      z = layer.weights.matvec(t.mid);
    } else {
      t.mid = layer.weights.matvec(t.input);
      z = layer.perm.apply(t.mid);
    }
    add_bias(z, layer.bias);
    if (!all_finite(z)) throw NonFiniteError(static_cast<int>(l));
    t.pre_act = z;

    cur = std::move(z);
    if (l + 1 < net.layers.size()) relu_inplace(cur);
  }

  tape.output = std::move(cur);
  return tape;
}

std::vector<double> forward_inference(const SmallNet& net, std::span<const double> x) {
  net.check();
  if (static_cast<int>(x.size()) != net.input_dim()) {
    throw std::invalid_argument("forward_inference: input length mismatch");
  }
  for (const PALayer& layer : net.layers) {
    if (!layer.perm.hardened()) {
      throw std::logic_error("forward_inference requires every permutation hardened");
    }
  }

  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const PALayer& layer = net.layers[l];
    const std::vector<int>& map = layer.perm.index_map();

    std::vector<double> z;
    if (layer.side == PermSide::Column) {
      z = layer.weights.matvec_gather(cur, map);
    } else {
      const std::vector<double> u = layer.weights.matvec(cur);
      z.resize(u.size());
      for (std::size_t i = 0; i < u.size(); ++i) z[i] = u[static_cast<std::size_t>(map[i])];
    }
    add_bias(z, layer.bias);
    if (!all_finite(z)) throw NonFiniteError(static_cast<int>(l));

    cur = std::move(z);
    if (l + 1 < net.layers.size()) relu_inplace(cur);
  }
  return cur;
}

void backward_accumulate(const SmallNet& net, const Tape& tape, std::span<const double> d_output,
                         GradientBundle& into, const std::vector<std::vector<Pos>>* probes) {
  if (tape.layers.size() != net.layers.size()) {
    throw std::invalid_argument("backward: tape does not match network");
  }
  if (static_cast<int>(d_output.size()) != net.output_dim()) {
    throw std::invalid_argument("backward: output gradient length mismatch");
  }

  std::vector<double> d_cur(d_output.begin(), d_output.end());

  for (int l = static_cast<int>(net.layers.size()) - 1; l >= 0; --l) {
    const PALayer& layer = net.layers[static_cast<std::size_t>(l)];
    const LayerTape& t = tape.layers[static_cast<std::size_t>(l)];
    LayerGrads& g = into.layers[static_cast<std::size_t>(l)];
    const bool last = l == static_cast<int>(net.layers.size()) - 1;

    // ReLU gate: the tape holds pre-activations; the last layer is linear.
    std::vector<double> d_z = std::move(d_cur);
    if (!last) {
      for (std::size_t i = 0; i < d_z.size(); ++i) {
        if (t.pre_act[i] <= 0.0) d_z[i] = 0.0;
      }
    }

    if (!g.d_bias.empty()) {
      for (std::size_t i = 0; i < d_z.size(); ++i) g.d_bias[i] += d_z[i];
    }

    const SparseLayer& w = layer.weights;
    const std::span<const int> row_ptr = w.row_ptr();
    const std::span<const int> col_idx = w.col_idx();

    if (layer.side == PermSide::Column) {
      // z = W a + b with a = P x.
      const std::vector<double>& a = t.mid;
      for (int r = 0; r < w.rows(); ++r) {
        const double dz = d_z[static_cast<std::size_t>(r)];
        if (dz == 0.0) continue;
        for (int i = row_ptr[static_cast<std::size_t>(r)]; i < row_ptr[static_cast<std::size_t>(r) + 1]; ++i) {
          g.d_values[static_cast<std::size_t>(i)] += dz * a[static_cast<std::size_t>(col_idx[static_cast<std::size_t>(i)])];
        }
      }
      if (probes && !(*probes)[static_cast<std::size_t>(l)].empty()) {
        const std::vector<Pos>& ps = (*probes)[static_cast<std::size_t>(l)];
        for (std::size_t i = 0; i < ps.size(); ++i) {
          g.probe_grads[i] += d_z[static_cast<std::size_t>(ps[i].row)] * a[static_cast<std::size_t>(ps[i].col)];
        }
      }

      std::vector<double> d_a = w.matvec_transposed(d_z);
      if (!layer.perm.hardened()) {
        const int n = layer.perm.size();
        for (int i = 0; i < n; ++i) {
          const double dai = d_a[static_cast<std::size_t>(i)];
          if (dai == 0.0) continue;
          double* row = g.d_perm.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) row[j] += dai * t.input[static_cast<std::size_t>(j)];
        }
      }
      d_cur = layer.perm.apply_transposed(d_a);
    } else {
      // z = P u + b with u = W x.
      const std::vector<double>& u = t.mid;
      if (!layer.perm.hardened()) {
        const int n = layer.perm.size();
        for (int i = 0; i < n; ++i) {
          const double dzi = d_z[static_cast<std::size_t>(i)];
          if (dzi == 0.0) continue;
          double* row = g.d_perm.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) row[j] += dzi * u[static_cast<std::size_t>(j)];
        }
      }
      std::vector<double> d_u = layer.perm.apply_transposed(d_z);

      for (int r = 0; r < w.rows(); ++r) {
        const double du = d_u[static_cast<std::size_t>(r)];
        if (du == 0.0) continue;
        for (int i = row_ptr[static_cast<std::size_t>(r)]; i < row_ptr[static_cast<std::size_t>(r) + 1]; ++i) {
          g.d_values[static_cast<std::size_t>(i)] += du * t.input[static_cast<std::size_t>(col_idx[static_cast<std::size_t>(i)])];
        }
      }
      if (probes && !(*probes)[static_cast<std::size_t>(l)].empty()) {
        const std::vector<Pos>& ps = (*probes)[static_cast<std::size_t>(l)];
        for (std::size_t i = 0; i < ps.size(); ++i) {
          g.probe_grads[i] += d_u[static_cast<std::size_t>(ps[i].row)] * t.input[static_cast<std::size_t>(ps[i].col)];
        }
      }
      d_cur = w.matvec_transposed(d_u);
    }
  }

  for (std::size_t i = 0; i < d_cur.size(); ++i) into.d_input[i] += d_cur[i];
}

GradientBundle backward(const SmallNet& net, const Tape& tape, std::span<const double> d_output,
                        const std::vector<std::vector<Pos>>* probes) {
  GradientBundle b = GradientBundle::zeros_like(net, probes);
  backward_accumulate(net, tape, d_output, b, probes);
  return b;
}

std::vector<double> LayerTransposeOp::apply(std::span<const double> g) const {
  const PALayer& layer = *layer_;
  if (layer.side == PermSide::Column) {
    const std::vector<double> t = layer.weights.matvec_transposed(g);
    return layer.perm.apply_transposed(t);
  }
  const std::vector<double> t = layer.perm.apply_transposed(g);
  return layer.weights.matvec_transposed(t);
}

LayerTransposeOp transpose_layer(const PALayer& layer) { return LayerTransposeOp(layer); }

}  // namespace padst
