#pragma once

#include <json.hpp>
#include <map>
#include <string>

#include "lact/harness/experiments.hpp"

namespace lact::cli {

// Flat key = value configuration file ('#' comments). Values stay strings
// until typed access; unknown keys are rejected by apply_* functions.
class KvConfig {
 public:
  static KvConfig from_file(const std::string& path);
  static KvConfig from_string(const std::string& text);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  nlohmann::json to_json() const;

 private:
  std::map<std::string, std::string> values_;
};

// Tier assembled from the config: `tier = desk|smoke` selects the baseline,
// explicit keys override individual fields.
harness::TierConfig tier_from_config(const KvConfig& cfg);

world::DataConfig data_config_from(const KvConfig& cfg);

// Resolves an output directory against the LACT_RUN_ROOT env override.
std::string resolve_out_dir(const std::string& out);

// Writes config.json (verbatim echo) and inputs.json (content hashes) into a
// run directory.
void write_run_metadata(const std::string& dir, const KvConfig& cfg,
                        const std::map<std::string, uint64_t>& input_hashes);

}  // namespace lact::cli
