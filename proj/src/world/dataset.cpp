#include "lact/world/dataset.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "lact/world/expert.hpp"
#include "lact/world/render.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lact::world {

namespace {

void write_bytes(std::ofstream& f, const void* p, size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void write_pod(std::ofstream& f, T v) {
  write_bytes(f, &v, sizeof(v));
}

template <class T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void serialize_episode(std::ofstream& f, const EpisodeRecord& ep) {
  const uint32_t n_frames = static_cast<uint32_t>(ep.frames.size());
  const uint32_t adim = static_cast<uint32_t>(action_dim(ep.embodiment));
  const uint32_t pdim = static_cast<uint32_t>(proprio_dim(ep.embodiment));
  const uint64_t payload = 8 + 1 + 1 + 4 + 4 + 4 + ep.instruction.size() + 4 + 4 + 4 +
                           static_cast<uint64_t>(n_frames) * kImageSize * kImageSize * 3 +
                           static_cast<uint64_t>(n_frames - 1) * adim * 4 +
                           static_cast<uint64_t>(n_frames) * pdim * 4;
  write_pod<uint64_t>(f, payload);
  write_pod<int64_t>(f, ep.episode_id);
  write_pod<uint8_t>(f, static_cast<uint8_t>(ep.embodiment));
  write_pod<uint8_t>(f, ep.success ? 1 : 0);
  write_pod<int32_t>(f, ep.counterfactual_group);
  write_pod<int32_t>(f, ep.ego_counterfactual_group);
  write_pod<uint32_t>(f, static_cast<uint32_t>(ep.instruction.size()));
  write_bytes(f, ep.instruction.data(), ep.instruction.size());
  write_pod<uint32_t>(f, n_frames);
  write_pod<uint32_t>(f, adim);
  write_pod<uint32_t>(f, pdim);
  for (const auto& img : ep.frames) write_bytes(f, img.px.data(), img.px.size());
  for (const auto& a : ep.actions) write_bytes(f, a.data(), a.size() * 4);
  for (const auto& p : ep.proprio) write_bytes(f, p.data(), p.size() * 4);
}

EpisodeRecord deserialize_episode(std::ifstream& f) {
  const uint64_t payload = read_pod<uint64_t>(f);
  (void)payload;
  EpisodeRecord ep;
  ep.episode_id = read_pod<int64_t>(f);
  ep.embodiment = static_cast<Embodiment>(read_pod<uint8_t>(f));
  ep.success = read_pod<uint8_t>(f) != 0;
  ep.counterfactual_group = read_pod<int32_t>(f);
  ep.ego_counterfactual_group = read_pod<int32_t>(f);
  const uint32_t ilen = read_pod<uint32_t>(f);
  ep.instruction.resize(ilen);
  f.read(ep.instruction.data(), ilen);
  const uint32_t n_frames = read_pod<uint32_t>(f);
  const uint32_t adim = read_pod<uint32_t>(f);
  const uint32_t pdim = read_pod<uint32_t>(f);
  ep.frames.resize(n_frames);
  for (auto& img : ep.frames) f.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
  ep.actions.assign(n_frames - 1, std::vector<float>(adim));
  for (auto& a : ep.actions) f.read(reinterpret_cast<char*>(a.data()), adim * 4);
  ep.proprio.assign(n_frames, std::vector<float>(pdim));
  for (auto& p : ep.proprio) f.read(reinterpret_cast<char*>(p.data()), pdim * 4);
  if (!f) throw std::runtime_error("dataset: truncated shard while reading episode");
  return ep;
}

json config_to_json(const DataConfig& c) {
  return json{{"episodes", c.episodes},
              {"manip_weight", c.manip_weight},
              {"nav_weight", c.nav_weight},
              {"human_weight", c.human_weight},
              {"distractor", c.distractor},
              {"jitter", c.jitter},
              {"long_horizon_frac", c.long_horizon_frac},
              {"cf_groups", c.cf_groups},
              {"ego_cf_groups", c.ego_cf_groups},
              {"episodes_per_shard", c.episodes_per_shard}};
}

DataConfig config_from_json(const json& j) {
  DataConfig c;
  c.episodes = j.at("episodes");
  c.manip_weight = j.at("manip_weight");
  c.nav_weight = j.at("nav_weight");
  c.human_weight = j.at("human_weight");
  c.distractor = j.at("distractor");
  c.jitter = j.at("jitter");
  c.long_horizon_frac = j.at("long_horizon_frac");
  c.cf_groups = j.at("cf_groups");
  c.ego_cf_groups = j.at("ego_cf_groups");
  c.episodes_per_shard = j.at("episodes_per_shard");
  return c;
}

}  // namespace

SplitCounts allocate_mixture(const DataConfig& cfg) {
  const double s = cfg.manip_weight + cfg.nav_weight + cfg.human_weight;
  if (s <= 0.0) throw std::invalid_argument("dataset: mixture weights sum to zero");
  SplitCounts sc;
  sc.manip = static_cast<int>(std::floor(cfg.episodes * cfg.manip_weight / s + 1e-9));
  const int upto2 =
      static_cast<int>(std::floor(cfg.episodes * (cfg.manip_weight + cfg.nav_weight) / s + 1e-9));
  sc.nav = upto2 - sc.manip;
  sc.human = cfg.episodes - upto2;
  return sc;
}

std::vector<float> jitter_for_frame(uint64_t jitter_seed, int frame_idx, int amplitude) {
  if (amplitude <= 0) return {0.0f, 0.0f};
  nc::Rng rng = nc::Rng(jitter_seed).fork(static_cast<uint64_t>(frame_idx));
  const int span = 2 * amplitude + 1;
  return {static_cast<float>(rng.index(span) - amplitude),
          static_cast<float>(rng.index(span) - amplitude)};
}

EpisodeRecord simulate_expert_episode(const Scenario& scenario, const std::string& instruction,
                                      uint64_t jitter_seed, bool jitter_on, int jitter_amplitude,
                                      int* clip_counter) {
  EpisodeRecord ep;
  ep.embodiment = scenario.initial.embodiment;
  ep.instruction = instruction;

  WorldState s = scenario.initial;
  SubgoalTracker tracker(s.task);
  std::vector<WorldState> states{s};
  for (int t = 0; t < s.task.horizon; ++t) {
    const auto a = scripted_expert(states.back());
    WorldState next = step(states.back(), a, states.back().distractor.pattern_seed, clip_counter);
    ep.actions.push_back(a);
    states.push_back(next);
    tracker.update(next);
    if (tracker.success()) break;
  }
  ep.success = tracker.success();

  ep.frames.reserve(states.size());
  ep.proprio.reserve(states.size());
  for (size_t t = 0; t < states.size(); ++t) {
    Vec2 jit{0, 0};
    if (jitter_on) {
      const auto j = jitter_for_frame(jitter_seed, static_cast<int>(t), jitter_amplitude);
      jit = {j[0], j[1]};
    }
    ep.frames.push_back(render(states[t], jit));
    ep.proprio.push_back(states[t].proprio());
  }
  return ep;
}

void generate_dataset(const DataConfig& cfg, uint64_t seed, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const fs::path marker = fs::path(out_dir) / "INCOMPLETE";
  {
    std::ofstream m(marker);
    m << "generation in progress\n";
  }
  try {
    nc::Rng root(seed);
    const SplitCounts counts = allocate_mixture(cfg);

    // 0 = manip, 1 = nav, 2 = human  (deterministic shuffled order)
    std::vector<int> splits;
    splits.insert(splits.end(), static_cast<size_t>(counts.manip), 0);
    splits.insert(splits.end(), static_cast<size_t>(counts.nav), 1);
    splits.insert(splits.end(), static_cast<size_t>(counts.human), 2);
    nc::Rng order_rng = root.fork(1);
    for (size_t i = splits.size(); i > 1; --i)
      std::swap(splits[i - 1], splits[static_cast<size_t>(order_rng.index(static_cast<int>(i)))]);

    Dataset ds;
    ds.config = cfg;
    ds.seed = seed;
    int64_t next_id = 0;

    auto make_episode = [&](int split, nc::Rng ep_rng, int32_t cf_group, int32_t ego_cf_group,
                            std::optional<Scenario> forced_scenario) {
      const bool human = split == 2;
      const bool long_h = ep_rng.uniform() < cfg.long_horizon_frac;
      const Embodiment emb = split == 1 ? Embodiment::Nav : Embodiment::Manip;
      const float noise = human ? 0.055f : 0.035f;
      Scenario sc = forced_scenario ? *forced_scenario
                                    : sample_scenario(emb, long_h, ep_rng, cfg.distractor, noise);
      const int amp = human ? 4 : 2;
      EpisodeRecord ep = simulate_expert_episode(sc, human ? std::string{} : sc.instruction,
                                                 ep_rng.next_u64(), cfg.jitter, amp, &ds.clipped_actions);
      ep.episode_id = next_id++;
      ep.counterfactual_group = cf_group;
      ep.ego_counterfactual_group = ego_cf_group;
      if (!ep.success) ++ds.expert_failures;
      ds.episodes.push_back(std::move(ep));
      return sc;
    };

    for (size_t i = 0; i < splits.size(); ++i)
      make_episode(splits[i], root.fork(100 + i), -1, -1, std::nullopt);

    // distractor counterfactuals: same scenario and ego trajectory, the
    // distractor path and jitter stream are resampled
    for (int g = 0; g < cfg.cf_groups; ++g) {
      nc::Rng base_rng = root.fork(0xC0000 + static_cast<uint64_t>(g));
      const bool long_h = base_rng.uniform() < cfg.long_horizon_frac;
      Scenario sc = sample_scenario(Embodiment::Manip, long_h, base_rng, cfg.distractor, 0.035f);
      const int base_idx = static_cast<int>(ds.episodes.size());
      EpisodeRecord base = simulate_expert_episode(sc, sc.instruction, base_rng.next_u64(), cfg.jitter,
                                                   2, &ds.clipped_actions);
      base.episode_id = next_id++;
      base.counterfactual_group = g;
      if (!base.success) ++ds.expert_failures;
      ds.episodes.push_back(std::move(base));

      Scenario variant = sc;
      variant.initial.distractor.pattern_seed = base_rng.next_u64();
      variant.initial.distractor.pos = {static_cast<float>(base_rng.uniform(0.15, 0.85)),
                                        static_cast<float>(base_rng.uniform(0.15, 0.85))};
      EpisodeRecord var = simulate_expert_episode(variant, sc.instruction, base_rng.next_u64(),
                                                  cfg.jitter, 2, &ds.clipped_actions);
      var.episode_id = next_id++;
      var.counterfactual_group = g;
      if (!var.success) ++ds.expert_failures;
      ds.episodes.push_back(std::move(var));
      ds.cf_groups.push_back({base_idx, base_idx + 1});
    }

    // ego counterfactuals: same distractor path and jitter, different task
    for (int g = 0; g < cfg.ego_cf_groups; ++g) {
      nc::Rng grng = root.fork(0xE0000 + static_cast<uint64_t>(g));
      const uint64_t shared_jitter = grng.next_u64();
      Scenario a = sample_scenario(Embodiment::Manip, false, grng, cfg.distractor, 0.035f);
      Scenario b = sample_scenario(Embodiment::Manip, false, grng, cfg.distractor, 0.035f);
      b.initial.distractor = a.initial.distractor;
      const int base_idx = static_cast<int>(ds.episodes.size());
      for (const Scenario* sc : {&a, &b}) {
        EpisodeRecord ep = simulate_expert_episode(*sc, sc->instruction, shared_jitter, cfg.jitter, 2,
                                                   &ds.clipped_actions);
        ep.episode_id = next_id++;
        ep.ego_counterfactual_group = g;
        if (!ep.success) ++ds.expert_failures;
        ds.episodes.push_back(std::move(ep));
      }
      ds.ego_cf_groups.push_back({base_idx, base_idx + 1});
    }

    // shards
    json shard_list = json::array();
    const int per_shard = std::max(1, cfg.episodes_per_shard);
    int shard_idx = 0;
    for (size_t start = 0; start < ds.episodes.size(); start += static_cast<size_t>(per_shard)) {
      const std::string name = "shard_" + std::to_string(shard_idx++) + ".bin";
      std::ofstream f(fs::path(out_dir) / name, std::ios::binary | std::ios::trunc);
      if (!f) throw std::runtime_error("dataset: cannot open shard for write");
      const size_t end = std::min(ds.episodes.size(), start + static_cast<size_t>(per_shard));
      for (size_t i = start; i < end; ++i) serialize_episode(f, ds.episodes[i]);
      f.close();
      std::ifstream in(fs::path(out_dir) / name, std::ios::binary);
      std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      shard_list.push_back(
          {{"file", name}, {"episodes", end - start}, {"hash", nc::fnv1a(bytes.data(), bytes.size())}});
    }

    json manifest;
    manifest["format"] = 1;
    manifest["seed"] = seed;
    manifest["config"] = config_to_json(cfg);
    manifest["episodes"] = ds.episodes.size();
    manifest["mixture_counts"] = {{"MANIP", counts.manip}, {"NAV", counts.nav}, {"HUMAN", counts.human}};
    manifest["k"] = {{"MANIP", frame_interval(Embodiment::Manip)}, {"NAV", frame_interval(Embodiment::Nav)}};
    manifest["chunk_size"] = manifest["k"];
    manifest["action_dims"] = {{"MANIP", action_dim(Embodiment::Manip)}, {"NAV", action_dim(Embodiment::Nav)}};
    manifest["shards"] = shard_list;
    manifest["counterfactual_groups"] = ds.cf_groups;
    manifest["ego_counterfactual_groups"] = ds.ego_cf_groups;
    manifest["stats"] = {{"clipped_actions", ds.clipped_actions}, {"expert_failures", ds.expert_failures}};
    std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << "\n";
    if (!mf) throw std::runtime_error("dataset: manifest write failed");
  } catch (...) {
    // leave the INCOMPLETE marker behind
    throw;
  }
  fs::remove(marker);
}

Dataset load_dataset(const std::string& dir) {
  if (fs::exists(fs::path(dir) / "INCOMPLETE"))
    throw std::runtime_error("dataset: " + dir + " is marked INCOMPLETE");
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("dataset: missing manifest in " + dir);
  json manifest = json::parse(mf);

  Dataset ds;
  ds.config = config_from_json(manifest.at("config"));
  ds.seed = manifest.at("seed");
  for (const auto& sh : manifest.at("shards")) {
    std::ifstream f(fs::path(dir) / sh.at("file").get<std::string>(), std::ios::binary);
    if (!f) throw std::runtime_error("dataset: missing shard in " + dir);
    const size_t n = sh.at("episodes");
    for (size_t i = 0; i < n; ++i) ds.episodes.push_back(deserialize_episode(f));
  }
  ds.cf_groups = manifest.at("counterfactual_groups").get<std::vector<std::vector<int>>>();
  ds.ego_cf_groups = manifest.at("ego_counterfactual_groups").get<std::vector<std::vector<int>>>();
  ds.clipped_actions = manifest.at("stats").at("clipped_actions");
  ds.expert_failures = manifest.at("stats").at("expert_failures");
  return ds;
}

const EpisodeRecord& Dataset::by_id(int64_t id) const {
  for (const auto& ep : episodes)
    if (ep.episode_id == id) return ep;
  throw std::out_of_range("dataset: no episode with id " + std::to_string(id));
}

uint64_t dataset_hash(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("dataset: missing manifest in " + dir);
  json manifest = json::parse(mf);
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& sh : manifest.at("shards")) {
    const uint64_t sh_hash = sh.at("hash");
    h = nc::fnv1a(&sh_hash, sizeof(sh_hash), h);
  }
  return h;
}

}  // namespace lact::world
