#include "padst/io.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace padst {

namespace {

[[noreturn]] void schema_error(const std::string& what) {
  throw std::invalid_argument("schema: " + what);
}

void require_keys(const Json& j, std::initializer_list<const char*> required,
                  std::initializer_list<const char*> optional, const char* where) {
  if (!j.is_object()) schema_error(std::string(where) + " must be an object");
  for (const char* k : required) {
    if (!j.contains(k)) schema_error(std::string(where) + " missing key '" + k + "'");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : required) {
      if (it.key() == k) known = true;
    }
    for (const char* k : optional) {
      if (it.key() == k) known = true;
    }
    if (!known) schema_error(std::string(where) + " has unknown key '" + it.key() + "'");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Json pattern_to_json(const StructurePattern& pattern) {
  Json j;
  j["kind"] = pattern_kind_name(pattern.kind());
  switch (pattern.kind()) {
    case PatternKind::DiagonalK: {
      const DiagonalK& d = pattern.diagonal();
      j["offsets"] = d.offsets;
      j["wrap"] = d.wrap;
      break;
    }
    case PatternKind::BlockB: {
      const BlockB& b = pattern.block();
      j["block_size"] = b.block_size;
      Json blocks = Json::array();
      for (const auto& [br, bc] : b.active_blocks) blocks.push_back(Json::array({br, bc}));
      j["active_blocks"] = std::move(blocks);
      break;
    }
    case PatternKind::NM: {
      const NM& nm = pattern.nm();
      j["n_keep"] = nm.n_keep;
      j["m_group"] = nm.m_group;
      break;
    }
    case PatternKind::Unstructured: {
      j["nnz"] = pattern.unstructured().nnz;
      break;
    }
  }
  return j;
}

StructurePattern pattern_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("kind")) schema_error("pattern needs a 'kind'");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "diagonal") {
    require_keys(j, {"kind", "offsets"}, {"wrap"}, "diagonal pattern");
    DiagonalK d;
    d.offsets = j.at("offsets").get<std::vector<int>>();
    d.wrap = j.value("wrap", true);
    return {std::move(d)};
  }
  if (kind == "block") {
    require_keys(j, {"kind", "block_size", "active_blocks"}, {}, "block pattern");
    BlockB b;
    b.block_size = j.at("block_size").get<int>();
    for (const Json& e : j.at("active_blocks")) {
      if (!e.is_array() || e.size() != 2) schema_error("active_blocks entries must be [row, col]");
      b.active_blocks.emplace_back(e[0].get<int>(), e[1].get<int>());
    }
    return {std::move(b)};
  }
  if (kind == "nm") {
    require_keys(j, {"kind", "n_keep", "m_group"}, {}, "nm pattern");
    return {NM{j.at("n_keep").get<int>(), j.at("m_group").get<int>()}};
  }
  if (kind == "unstructured") {
    require_keys(j, {"kind", "nnz"}, {}, "unstructured pattern");
    return {Unstructured{j.at("nnz").get<long long>()}};
  }
  schema_error("unknown pattern kind '" + kind + "'");
}

Json mask_to_json(const Mask& mask) {
  Json j = pattern_to_json(mask.descriptor);
  j["rows"] = mask.rows;
  j["cols"] = mask.cols;
  Json active = Json::array();
  for (const Pos& p : mask.active) active.push_back(Json::array({p.row, p.col}));
  j["active"] = std::move(active);
  return j;
}

Mask mask_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("active")) {
    schema_error("mask needs rows, cols and active");
  }
  Json pattern_part = j;
  pattern_part.erase("rows");
  pattern_part.erase("cols");
  pattern_part.erase("active");
  StructurePattern pattern = pattern_from_json(pattern_part);

  std::vector<Pos> active;
  for (const Json& e : j.at("active")) {
    if (!e.is_array() || e.size() != 2) schema_error("active entries must be [row, col]");
    active.push_back({e[0].get<int>(), e[1].get<int>()});
  }
  Mask m = Mask::make(j.at("rows").get<int>(), j.at("cols").get<int>(), std::move(active),
                      std::move(pattern));
  if (!validate_mask(m)) schema_error("mask does not validate against its descriptor");
  return m;
}

Json perm_to_json(const SoftPermutation& p) {
  Json j;
  j["n"] = p.size();
  j["hardened"] = p.hardened();
  if (p.hardened()) {
    j["index_map"] = p.index_map();
  } else {
    j["m"] = p.matrix();
  }
  return j;
}

SoftPermutation perm_from_json(const Json& j) {
  require_keys(j, {"n", "hardened"}, {"index_map", "m"}, "perm");
  const int n = j.at("n").get<int>();
  if (j.at("hardened").get<bool>()) {
    if (!j.contains("index_map")) schema_error("hardened perm needs index_map");
    std::vector<int> map = j.at("index_map").get<std::vector<int>>();
    if (static_cast<int>(map.size()) != n) schema_error("index_map length mismatch");
    return SoftPermutation::from_index_map(std::move(map));
  }
  if (!j.contains("m")) schema_error("soft perm needs matrix 'm'");
  std::vector<double> m = j.at("m").get<std::vector<double>>();
  return SoftPermutation::from_matrix(n, std::move(m));
}

Json checkpoint_to_json(const SmallNet& net) {
  Json j;
  j["version"] = 1;
  Json layers = Json::array();
  for (const PALayer& layer : net.layers) {
    Json lj;
    lj["rows"] = layer.weights.rows();
    lj["cols"] = layer.weights.cols();
    lj["structure"] = mask_to_json(layer.weights.mask());
    lj["values"] = std::vector<double>(layer.weights.values().begin(), layer.weights.values().end());
    lj["perm"] = perm_to_json(layer.perm);
    lj["perm_side"] = layer.side == PermSide::Column ? "column" : "row";
    if (layer.bias) {
      lj["bias"] = *layer.bias;
    } else {
      lj["bias"] = nullptr;
    }
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

SmallNet checkpoint_from_json(const Json& j) {
  require_keys(j, {"version", "layers"}, {}, "checkpoint");
  const long long version = j.at("version").get<long long>();
  if (version != 1) {
    throw std::invalid_argument("checkpoint version " + std::to_string(version) + " not supported");
  }
  SmallNet net;
  for (const Json& lj : j.at("layers")) {
    require_keys(lj, {"rows", "cols", "structure", "values", "perm", "perm_side", "bias"}, {},
                 "checkpoint layer");
    Mask mask = mask_from_json(lj.at("structure"));
    if (mask.rows != lj.at("rows").get<int>() || mask.cols != lj.at("cols").get<int>()) {
      schema_error("layer rows/cols disagree with structure");
    }
    PALayer layer{
        SparseLayer(std::move(mask), lj.at("values").get<std::vector<double>>()),
        perm_from_json(lj.at("perm")),
        std::nullopt,
        lj.at("perm_side").get<std::string>() == "row" ? PermSide::Row : PermSide::Column,
    };
    if (!lj.at("bias").is_null()) layer.bias = lj.at("bias").get<std::vector<double>>();
    layer.check();
    net.layers.push_back(std::move(layer));
  }
  net.check();
  return net;
}

void save_checkpoint(const SmallNet& net, const std::string& path) {
  write_text_file(path, checkpoint_to_json(net).dump(2) + "\n");
}

SmallNet load_checkpoint(const std::string& path) {
  return checkpoint_from_json(Json::parse(read_text_file(path)));
}

Json spec_to_json(const NetworkSpec& spec) {
  Json j;
  j["version"] = 1;
  j["d0"] = spec.d0;
  Json layers = Json::array();
  for (const LayerSpec& l : spec.layers) {
    Json lj;
    lj["width"] = l.width;
    lj["family"] = family_name(l.family);
    lj["mixing"] = l.mixing;
    switch (l.family) {
      case Family::DiagK: lj["k"] = l.param; break;
      case Family::Banded: lj["b"] = l.param; break;
      case Family::BlockB: lj["block_size"] = l.param; break;
      case Family::NMTied: lj["alpha"] = Json::array({l.alpha_num, l.alpha_den}); break;
      default: break;
    }
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

NetworkSpec spec_from_json(const Json& j) {
  require_keys(j, {"version", "d0", "layers"}, {}, "network spec");
  if (j.at("version").get<long long>() != 1) {
    throw std::invalid_argument("network spec version not supported");
  }
  NetworkSpec spec;
  spec.d0 = j.at("d0").get<int>();
  for (const Json& lj : j.at("layers")) {
    require_keys(lj, {"width", "family"}, {"mixing", "k", "b", "block_size", "alpha"}, "spec layer");
    LayerSpec l;
    l.width = lj.at("width").get<int>();
    l.mixing = lj.value("mixing", false);
    const std::string fam = lj.at("family").get<std::string>();
    if (fam == "dense") {
      l.family = Family::Dense;
    } else if (fam == "unstructured") {
      l.family = Family::Unstructured;
    } else if (fam == "diag") {
      l.family = Family::DiagK;
      if (!lj.contains("k")) schema_error("diag layer needs 'k'");
      l.param = lj.at("k").get<int>();
    } else if (fam == "banded") {
      l.family = Family::Banded;
      if (!lj.contains("b")) schema_error("banded layer needs 'b'");
      l.param = lj.at("b").get<int>();
    } else if (fam == "block") {
      l.family = Family::BlockB;
      if (!lj.contains("block_size")) schema_error("block layer needs 'block_size'");
      l.param = lj.at("block_size").get<int>();
    } else if (fam == "nm_free") {
      l.family = Family::NMFree;
    } else if (fam == "nm_tied") {
      l.family = Family::NMTied;
      if (!lj.contains("alpha")) schema_error("nm_tied layer needs 'alpha'");
      const Json& a = lj.at("alpha");
      if (!a.is_array() || a.size() != 2) schema_error("alpha must be [N, M]");
      l.alpha_num = a[0].get<long long>();
      l.alpha_den = a[1].get<long long>();
    } else {
      schema_error("unknown family '" + fam + "'");
    }
    spec.layers.push_back(l);
  }
  return spec;
}

Json bound_report_to_json(const BoundReport& rep) {
  Json j;
  Json layers = Json::array();
  for (const LayerBound& lb : rep.layers) {
    Json lj;
    lj["layer"] = lb.index;
    lj["family"] = family_name(lb.family);
    lj["n"] = lb.n;
    lj["n_in"] = lb.n_in;
    lj["r_struct"] = lb.r;
    lj["r_clamped"] = lb.r_clamped;
    lj["u"] = lb.u;
    lj["k"] = lb.k;
    lj["factor"] = lb.factor.str();
    lj["log10_factor"] = lb.log10_factor;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  j["u_sequence"] = rep.u_sequence;
  j["total"] = rep.total.str();
  j["log10_total"] = rep.log10_total;
  j["h_rule"] = rep.h_rule;
  if (rep.l_overhead) {
    j["l_overhead"] = *rep.l_overhead;
    j["l_overhead_layers"] = *rep.l_overhead_layers;
    j["period"] = rep.period;
  } else {
    j["l_overhead"] = nullptr;
  }
  return j;
}

std::string bound_report_to_csv(const BoundReport& rep) {
  std::ostringstream out;
  out << "layer,family,n,n_in,r_struct,u,k,factor,log10_factor\n";
  for (const LayerBound& lb : rep.layers) {
    out << lb.index << ',' << family_name(lb.family) << ',' << lb.n << ',' << lb.n_in << ','
        << lb.r << ',' << lb.u << ',' << lb.k << ',' << lb.factor.str() << ','
        << format_double(lb.log10_factor) << '\n';
  }
  out << "total,,,,,,," << rep.total.str() << ',' << format_double(rep.log10_total) << '\n';
  if (rep.l_overhead) {
    out << "l_overhead," << *rep.l_overhead << ",period," << rep.period << ",layers,"
        << *rep.l_overhead_layers << ",,,\n";
  }
  return out.str();
}

Json train_report_to_json(const TrainReport& rep) {
  Json j;
  Json epochs = Json::array();
  for (const EpochRecord& e : rep.epochs) {
    Json ej;
    ej["epoch"] = e.epoch;
    ej["task_loss"] = e.task_loss;
    ej["total_penalty"] = e.total_penalty;
    ej["layer_penalty"] = e.layer_penalty;
    epochs.push_back(std::move(ej));
  }
  j["epochs"] = std::move(epochs);
  j["hardened_epoch"] = rep.hardened_epoch;
  Json dist = Json::array();
  for (double d : rep.final_identity_distance) {
    if (std::isnan(d)) {
      dist.push_back(nullptr);
    } else {
      dist.push_back(d);
    }
  }
  j["final_identity_distance"] = std::move(dist);
  j["initial_task_loss"] = rep.initial_task_loss;
  j["final_task_loss"] = rep.final_task_loss;
  j["total_steps"] = rep.total_steps;
  return j;
}

std::string train_report_to_csv(const TrainReport& rep) {
  const std::size_t n_layers = rep.hardened_epoch.size();
  std::ostringstream out;
  out << "epoch,task_loss,total_penalty";
  for (std::size_t l = 0; l < n_layers; ++l) out << ",penalty_l" << l;
  for (std::size_t l = 0; l < n_layers; ++l) out << ",hardened_l" << l;
  out << '\n';
  for (const EpochRecord& e : rep.epochs) {
    out << e.epoch << ',' << format_double(e.task_loss) << ',' << format_double(e.total_penalty);
    for (std::size_t l = 0; l < n_layers; ++l) out << ',' << format_double(e.layer_penalty[l]);
    for (std::size_t l = 0; l < n_layers; ++l) {
      const bool hard = rep.hardened_epoch[l] >= 0 && rep.hardened_epoch[l] <= e.epoch;
      out << ',' << (hard ? 1 : 0);
    }
    out << '\n';
  }
  return out.str();
}

std::string config_hash_hex(const Json& config) {
  const std::string canonical = config.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

Json make_manifest(const std::string& command, const Json& config, std::uint64_t seed,
                   const std::vector<std::string>& outputs) {
  Json j;
  j["version"] = 1;
  j["command"] = command;
  j["config_hash"] = config_hash_hex(config);
  j["seed"] = seed;
  j["outputs"] = outputs;

  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  j["timestamp"] = buf;
  return j;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace padst
