#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "padst/dst.hpp"
#include "padst/expressivity.hpp"
#include "padst/netcore.hpp"
#include "padst/patterns.hpp"

namespace padst {

using Json = nlohmann::json;

// Shortest round-trip decimal form, locale-independent.
std::string format_double(double v);

Json pattern_to_json(const StructurePattern& pattern);
StructurePattern pattern_from_json(const Json& j);

// Mask schema: descriptor fields plus rows/cols and the explicit active
// set, so free-support families reload exactly.
Json mask_to_json(const Mask& mask);
Mask mask_from_json(const Json& j);

// Hardened perms serialize as integer index maps, soft ones as row-major
// float64 with "hardened": false.
Json perm_to_json(const SoftPermutation& p);
SoftPermutation perm_from_json(const Json& j);

Json checkpoint_to_json(const SmallNet& net);
SmallNet checkpoint_from_json(const Json& j);  // rejects unknown versions

void save_checkpoint(const SmallNet& net, const std::string& path);
SmallNet load_checkpoint(const std::string& path);

Json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const Json& j);

Json bound_report_to_json(const BoundReport& rep);
std::string bound_report_to_csv(const BoundReport& rep);

Json train_report_to_json(const TrainReport& rep);
std::string train_report_to_csv(const TrainReport& rep);

// FNV-1a over the canonical (sorted-key) dump: stable across key order.
std::string config_hash_hex(const Json& config);

Json make_manifest(const std::string& command, const Json& config, std::uint64_t seed,
                   const std::vector<std::string>& outputs);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace padst
