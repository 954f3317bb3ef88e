#include "lact/cli/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace lact::cli {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::from_string(const std::string& text) {
  KvConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
    cfg.values_[key] = value;
  }
  return cfg;
}

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str());
}

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int KvConfig::get_int(const std::string& key, int fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : std::stoi(it->second);
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : std::stod(it->second);
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1" || it->second == "on") return true;
  if (it->second == "false" || it->second == "0" || it->second == "off") return false;
  throw std::runtime_error("config key " + key + ": expected a boolean, got '" + it->second + "'");
}

json KvConfig::to_json() const {
  json j = json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

harness::TierConfig tier_from_config(const KvConfig& cfg) {
  const std::string base = cfg.get_str("tier", "desk");
  harness::TierConfig t;
  if (base == "desk")
    t = harness::desk_tier();
  else if (base == "smoke")
    t = harness::smoke_tier();
  else
    throw std::runtime_error("unknown tier: " + base);

  t.pretrain_episodes = cfg.get_int("data.episodes", t.pretrain_episodes);
  t.manip_frac = cfg.get_double("data.manip_weight", t.manip_frac);
  t.nav_frac = cfg.get_double("data.nav_weight", t.nav_frac);
  t.human_frac = cfg.get_double("data.human_weight", t.human_frac);
  t.long_frac = cfg.get_double("data.long_horizon_frac", t.long_frac);
  t.cf_groups = cfg.get_int("data.cf_groups", t.cf_groups);
  t.ego_cf_groups = cfg.get_int("data.ego_cf_groups", t.ego_cf_groups);
  t.demo_manip_episodes = cfg.get_int("data.demo_manip_episodes", t.demo_manip_episodes);
  t.demo_nav_episodes = cfg.get_int("data.demo_nav_episodes", t.demo_nav_episodes);

  t.lam.dim = cfg.get_int("lam.dim", t.lam.dim);
  t.lam.heads = cfg.get_int("lam.heads", t.lam.heads);
  t.lam.enc_blocks = cfg.get_int("lam.enc_blocks", t.lam.enc_blocks);
  t.lam.dec_blocks = cfg.get_int("lam.dec_blocks", t.lam.dec_blocks);
  t.lam_stage1_steps = cfg.get_int("lam.stage1_steps", t.lam_stage1_steps);
  t.lam_stage2_steps = cfg.get_int("lam.stage2_steps", t.lam_stage2_steps);
  t.lam_batch = cfg.get_int("lam.batch", t.lam_batch);
  t.lam_lr = static_cast<float>(cfg.get_double("lam.lr", t.lam_lr));

  t.policy.dim = cfg.get_int("policy.dim", t.policy.dim);
  t.policy.heads = cfg.get_int("policy.heads", t.policy.heads);
  t.policy.blocks = cfg.get_int("policy.blocks", t.policy.blocks);
  t.policy_steps = cfg.get_int("policy.steps", t.policy_steps);
  t.policy_batch = cfg.get_int("policy.batch", t.policy_batch);
  t.policy_lr = static_cast<float>(cfg.get_double("policy.lr", t.policy_lr));

  t.head_dims.hidden = cfg.get_int("head.hidden", t.head_dims.hidden);
  t.head_dims.head_dim = cfg.get_int("head.head_dim", t.head_dims.head_dim);
  t.ft_steps = cfg.get_int("ft.steps", t.ft_steps);
  t.ft_batch = cfg.get_int("ft.batch", t.ft_batch);
  t.ft_lr = static_cast<float>(cfg.get_double("ft.lr", t.ft_lr));

  t.rollouts = cfg.get_int("eval.rollouts", t.rollouts);
  t.eval_seeds = cfg.get_int("eval.seeds", t.eval_seeds);
  return t;
}

world::DataConfig data_config_from(const KvConfig& cfg) {
  world::DataConfig dc;
  dc.episodes = cfg.get_int("data.episodes", dc.episodes);
  dc.manip_weight = cfg.get_double("data.manip_weight", dc.manip_weight);
  dc.nav_weight = cfg.get_double("data.nav_weight", dc.nav_weight);
  dc.human_weight = cfg.get_double("data.human_weight", dc.human_weight);
  dc.distractor = cfg.get_bool("data.distractor", dc.distractor);
  dc.jitter = cfg.get_bool("data.jitter", dc.jitter);
  dc.long_horizon_frac = cfg.get_double("data.long_horizon_frac", dc.long_horizon_frac);
  dc.cf_groups = cfg.get_int("data.cf_groups", dc.cf_groups);
  dc.ego_cf_groups = cfg.get_int("data.ego_cf_groups", dc.ego_cf_groups);
  dc.episodes_per_shard = cfg.get_int("data.episodes_per_shard", dc.episodes_per_shard);
  return dc;
}

std::string resolve_out_dir(const std::string& out) {
  fs::path p(out);
  if (p.is_absolute()) return out;
  const char* root = std::getenv("LACT_RUN_ROOT");
  if (root && *root) return (fs::path(root) / p).string();
  return out;
}

void write_run_metadata(const std::string& dir, const KvConfig& cfg,
                        const std::map<std::string, uint64_t>& input_hashes) {
  fs::create_directories(dir);
  {
    std::ofstream f(fs::path(dir) / "config.json", std::ios::trunc);
    f << cfg.to_json().dump(2) << "\n";
  }
  {
    json j = json::object();
    char buf[32];
    for (const auto& [name, hash] : input_hashes) {
      std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
      j[name] = buf;
    }
    std::ofstream f(fs::path(dir) / "inputs.json", std::ios::trunc);
    f << j.dump(2) << "\n";
  }
}

}  // namespace lact::cli
