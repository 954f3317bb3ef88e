#include "lact/harness/experiments.hpp"

#include <filesystem>
#include <fstream>

#include "lact/harness/png.hpp"
#include "lact/world/render.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lact::harness {

json TierConfig::to_json() const {
  return json{{"name", name},
              {"pretrain_episodes", pretrain_episodes},
              {"manip_frac", manip_frac},
              {"nav_frac", nav_frac},
              {"human_frac", human_frac},
              {"long_frac", long_frac},
              {"cf_groups", cf_groups},
              {"ego_cf_groups", ego_cf_groups},
              {"demo_manip_episodes", demo_manip_episodes},
              {"demo_nav_episodes", demo_nav_episodes},
              {"lam", {{"dim", lam.dim}, {"heads", lam.heads}, {"enc_blocks", lam.enc_blocks},
                        {"dec_blocks", lam.dec_blocks}, {"n_latents", lam.n_latents},
                        {"codebook_size", lam.codebook_size}}},
              {"lam_stage1_steps", lam_stage1_steps},
              {"lam_stage2_steps", lam_stage2_steps},
              {"lam_batch", lam_batch},
              {"lam_lr", lam_lr},
              {"policy", {{"dim", policy.dim}, {"heads", policy.heads}, {"blocks", policy.blocks}}},
              {"policy_steps", policy_steps},
              {"policy_batch", policy_batch},
              {"policy_lr", policy_lr},
              {"head_hidden", head_dims.hidden},
              {"ft_steps", ft_steps},
              {"ft_batch", ft_batch},
              {"ft_lr", ft_lr},
              {"rollouts", rollouts},
              {"eval_seeds", eval_seeds},
              {"budgets", budgets}};
}

TierConfig desk_tier() { return TierConfig{}; }

TierConfig smoke_tier() {
  TierConfig t;
  t.name = "smoke";
  t.pretrain_episodes = 48;
  t.cf_groups = 6;
  t.ego_cf_groups = 6;
  t.demo_manip_episodes = 24;
  t.demo_nav_episodes = 24;
  t.lam.dim = 64;
  t.lam.heads = 4;
  t.lam.enc_blocks = 2;
  t.lam.dec_blocks = 2;
  t.lam_stage1_steps = 150;
  t.lam_stage2_steps = 150;
  t.lam_batch = 8;
  t.policy.dim = 96;
  t.policy.heads = 4;
  t.policy.blocks = 2;
  t.policy_steps = 120;
  t.policy_batch = 8;
  t.ft_steps = 60;
  t.ft_batch = 8;
  t.rollouts = 10;
  t.eval_seeds = 1;
  t.budgets = {0.5, 1.0};
  return t;
}

ExpContext::ExpContext(std::string root, TierConfig tier, uint64_t seed)
    : root_(std::move(root)), tier_(std::move(tier)), seed_(seed) {
  fs::create_directories(root_);
  std::ofstream cfg(root_ + "/context.json", std::ios::trunc);
  json j;
  j["tier"] = tier_.to_json();
  j["seed"] = seed_;
  cfg << j.dump(2) << "\n";
}

const world::Dataset& ExpContext::dataset(const std::string& name) {
  auto it = datasets_.find(name);
  if (it != datasets_.end()) return *it->second;

  const std::string dir = root_ + "/ds_" + name;
  world::DataConfig dc;
  uint64_t dseed = seed_;
  if (name == "pretrain") {
    dc.episodes = tier_.pretrain_episodes;
    dc.manip_weight = tier_.manip_frac;
    dc.nav_weight = tier_.nav_frac;
    dc.human_weight = tier_.human_frac;
    dc.long_horizon_frac = tier_.long_frac;
    dc.cf_groups = tier_.cf_groups;
    dc.ego_cf_groups = tier_.ego_cf_groups;
    dseed = seed_ + 1;
  } else if (name == "demo_manip") {
    dc.episodes = tier_.demo_manip_episodes;
    dc.manip_weight = 1.0;
    dc.nav_weight = 0.0;
    dc.human_weight = 0.0;
    dc.long_horizon_frac = 0.5;  // matches the mixed distractor suite
    dseed = seed_ + 2;
  } else if (name == "demo_nav") {
    dc.episodes = tier_.demo_nav_episodes;
    dc.manip_weight = 0.0;
    dc.nav_weight = 1.0;
    dc.human_weight = 0.0;
    dc.long_horizon_frac = 0.7;  // matches the nav suite
    dseed = seed_ + 3;
  } else {
    throw std::invalid_argument("unknown dataset name: " + name);
  }
  if (!fs::exists(fs::path(dir) / "manifest.json")) world::generate_dataset(dc, dseed, dir);
  auto ds = std::make_unique<world::Dataset>(world::load_dataset(dir));
  auto& ref = *ds;
  datasets_[name] = std::move(ds);
  return ref;
}

const world::Dataset& ExpContext::pretrain_set() { return dataset("pretrain"); }
const world::Dataset& ExpContext::demo_manip() { return dataset("demo_manip"); }
const world::Dataset& ExpContext::demo_nav() { return dataset("demo_nav"); }

uint64_t ExpContext::dataset_hash(const std::string& name) {
  dataset(name);
  return world::dataset_hash(root_ + "/ds_" + name);
}

lam::LamModel& ExpContext::lam_variant(const std::string& name) {
  auto it = lams_.find(name);
  if (it != lams_.end()) return *it->second;

  const std::string path = root_ + "/lam_" + name + ".bin";
  std::unique_ptr<lam::LamModel> model;
  if (fs::exists(path)) {
    model = std::make_unique<lam::LamModel>(lam::LamModel::load(path));
  } else {
    const auto& ds = pretrain_set();
    lam::LamTrainConfig tc;
    tc.batch = tier_.lam_batch;
    tc.lr = tier_.lam_lr;
    tc.seed = seed_ + 11;
    tc.metrics_csv = root_ + "/lam_" + name + "_metrics.csv";

    if (name == "stage1" || name == "genie") {
      lam::LamConfig lc = tier_.lam;
      lc.stage = 1;
      lc.use_language = name == "stage1";
      tc.steps = tier_.lam_stage1_steps;
      model = std::make_unique<lam::LamModel>(lc, seed_ + (name == "stage1" ? 21 : 22));
      lam_summaries_[name] = lam::train_lam(*model, ds, feat_, instr_enc_, tc);
    } else if (name == "stage2") {
      lam_variant("stage1");  // ensure the stage-1 checkpoint exists
      tc.steps = tier_.lam_stage2_steps;
      model = std::make_unique<lam::LamModel>(
          lam::LamModel::stage2_from_stage1(root_ + "/lam_stage1.bin", seed_ + 23));
      lam_summaries_[name] = lam::train_lam(*model, ds, feat_, instr_enc_, tc);
    } else {
      throw std::invalid_argument("unknown lam variant: " + name);
    }
    model->save(path);
  }
  auto& ref = *model;
  lams_[name] = std::move(model);
  return ref;
}

lam::LamTrainSummary ExpContext::lam_summary(const std::string& name) {
  auto it = lam_summaries_.find(name);
  return it == lam_summaries_.end() ? lam::LamTrainSummary{} : it->second;
}

const lam::Annotations& ExpContext::annotations(const std::string& lam_name, lam::CodeRole role,
                                                const std::string& ds_name) {
  const std::string key = lam_name + "_" + lam::code_role_name(role) + "_" + ds_name;
  auto it = anns_.find(key);
  if (it != anns_.end()) return *it->second;

  const std::string path = root_ + "/ann_" + key + ".bin";
  std::unique_ptr<lam::Annotations> ann;
  if (fs::exists(path)) {
    ann = std::make_unique<lam::Annotations>(lam::load_annotations(path));
  } else {
    auto& model = lam_variant(lam_name);
    ann = std::make_unique<lam::Annotations>(
        lam::label_latent_actions(model, dataset(ds_name), feat_, instr_enc_, role));
    lam::save_annotations(*ann, path);
  }
  auto& ref = *ann;
  anns_[key] = std::move(ann);
  return ref;
}

namespace {

struct MixtureSpec {
  std::string lam_name;
  lam::CodeRole role;
  std::vector<std::pair<std::string, std::function<bool(const world::EpisodeRecord&)>>> pools;
};

MixtureSpec mixture_for(const std::string& name) {
  auto manip_instr = [](const world::EpisodeRecord& ep) {
    return ep.embodiment == world::Embodiment::Manip && !ep.instruction.empty();
  };
  auto instructed = [](const world::EpisodeRecord& ep) { return !ep.instruction.empty(); };

  MixtureSpec spec;
  if (name == "tc_full") {
    spec = {"stage2", lam::CodeRole::TaskCentric, {{"full", nullptr}}};
  } else if (name == "genie_full") {
    spec = {"genie", lam::CodeRole::TaskIrrelevant, {{"full", nullptr}}};
  } else if (name == "ti_full") {
    spec = {"stage1", lam::CodeRole::TaskIrrelevant, {{"full", nullptr}}};
  } else if (name == "tc_manip_only") {
    spec = {"stage2", lam::CodeRole::TaskCentric, {{"manip", manip_instr}}};
  } else if (name == "tc_manip_nav") {
    spec = {"stage2", lam::CodeRole::TaskCentric, {{"manip_nav", instructed}}};
  } else {
    throw std::invalid_argument("unknown policy mixture: " + name);
  }
  return spec;
}

}  // namespace

policy::PolicyModel& ExpContext::pretrained_policy(const std::string& name) {
  auto it = policies_.find(name);
  if (it != policies_.end()) return *it->second;

  const std::string path = root_ + "/policy_" + name + ".bin";
  std::unique_ptr<policy::PolicyModel> model;
  if (fs::exists(path)) {
    model = std::make_unique<policy::PolicyModel>(policy::PolicyModel::load(path));
  } else {
    const MixtureSpec spec = mixture_for(name);
    const auto& ds = pretrain_set();
    const auto& ann = annotations(spec.lam_name, spec.role, "pretrain");

    model = std::make_unique<policy::PolicyModel>(tier_.policy, seed_ + nc::fnv1a(name) % 1000);
    policy::PretrainConfig pc;
    pc.steps = tier_.policy_steps;
    pc.batch = tier_.policy_batch;
    pc.lr = tier_.policy_lr;
    pc.seed = seed_ + 31;
    pc.mixture_tag = name;
    pc.metrics_csv = root_ + "/policy_" + name + "_metrics.csv";

    std::vector<policy::PretrainPool> pools;
    for (const auto& [tag, filter] : spec.pools) pools.push_back({&ds, &ann, 1.0, tag, filter});
    policy::pretrain_policy(*model, pools, feat_, pc);
    model->save(path);
  }
  auto& ref = *model;
  policies_[name] = std::move(model);
  return ref;
}

uint64_t ExpContext::pretrained_policy_hash(const std::string& name) {
  return pretrained_policy(name).weights_hash();
}

ExpContext::AdaptedArm& ExpContext::adapted(const std::string& tag, const std::string& base_policy,
                                            const std::string& lam_name, lam::CodeRole role,
                                            const std::string& demo_ds, act::DecoderKind kind,
                                            bool use_history, bool decoder_only, double budget_frac) {
  auto it = adapted_.find(tag);
  if (it != adapted_.end()) return it->second->arm;

  auto slot = std::make_unique<AdaptedSlot>();
  const std::string path = root_ + "/adapted_" + tag + ".bin";
  const auto& demos = dataset(demo_ds);
  const world::Embodiment emb = demos.episodes.front().embodiment;

  if (fs::exists(path)) {
    auto loaded = act::load_adapted(path);
    slot->policy = std::move(loaded.policy);
    slot->head = std::move(loaded.head);
    slot->ar_head = std::move(loaded.ar_head);
    slot->arm.kind = loaded.kind;
    slot->arm.use_history = loaded.use_history;
  } else {
    const auto& ann = annotations(lam_name, role, demo_ds);
    // fresh copy of the pretrained trunk so arms stay independent
    pretrained_policy(base_policy);
    slot->policy = std::make_unique<policy::PolicyModel>(
        policy::PolicyModel::load(root_ + "/policy_" + base_policy + ".bin"));

    act::FinetuneConfig fc;
    fc.steps = tier_.ft_steps;
    fc.batch = tier_.ft_batch;
    fc.lr = tier_.ft_lr;
    fc.seed = seed_ + 41;
    fc.kind = kind;
    fc.use_history = use_history;
    fc.decoder_only = decoder_only;
    fc.budget_frac = budget_frac;
    fc.dims = tier_.head_dims;
    fc.metrics_csv = root_ + "/adapted_" + tag + "_metrics.csv";

    act::DecoderConfig hc = act::decoder_config_for(emb, tier_.policy.dim, tier_.head_dims);
    if (kind == act::DecoderKind::ArBins) {
      slot->ar_head = std::make_unique<act::ArBinDecoder>(hc, seed_ + 42);
      auto res = act::finetune(*slot->policy, nullptr, slot->ar_head.get(), demos, ann, feat_, fc);
      slot->arm.holdout_l1 = res.holdout_l1;
    } else {
      hc.use_visual = kind == act::DecoderKind::Attention;
      slot->head = std::make_unique<act::ActionDecoder>(hc, seed_ + 42);
      auto res = act::finetune(*slot->policy, slot->head.get(), nullptr, demos, ann, feat_, fc);
      slot->arm.holdout_l1 = res.holdout_l1;
    }
    slot->arm.kind = kind;
    slot->arm.use_history = use_history;
    act::save_adapted(path, *slot->policy, slot->head.get(), slot->ar_head.get(), use_history);
  }
  slot->arm.policy = slot->policy.get();
  slot->arm.head = slot->head.get();
  slot->arm.ar_head = slot->ar_head.get();
  auto& ref = slot->arm;
  adapted_[tag] = std::move(slot);
  return ref;
}

std::vector<uint64_t> ExpContext::eval_seed_list() const {
  std::vector<uint64_t> seeds;
  for (int i = 0; i < tier_.eval_seeds; ++i) seeds.push_back(seed_ + 1000 + static_cast<uint64_t>(i));
  return seeds;
}

SuiteResult ExpContext::eval_arm(const AdaptedArm& arm, const std::string& suite_name) {
  const SuiteSpec spec = suite_by_name(suite_name);
  ActorFactory factory = [&arm, this]() -> std::unique_ptr<Actor> {
    if (arm.kind == act::DecoderKind::ArBins)
      return std::make_unique<ArBinActor>(*arm.policy, *arm.ar_head, feat_);
    return std::make_unique<LatentPolicyActor>(*arm.policy, *arm.head, feat_, arm.use_history);
  };
  return run_suite(factory, spec, tier_.rollouts, eval_seed_list());
}

SuiteResult ExpContext::cached_eval(const std::string& tag, const AdaptedArm& arm,
                                    const std::string& suite_name) {
  const std::string path = root_ + "/eval_" + tag + "_" + suite_name + ".csv";
  SuiteResult res;
  if (fs::exists(path)) {
    const auto records = read_rollout_records(path);
    double succ = 0, score = 0;
    for (const auto& r : records) {
      RolloutResult rr;
      rr.task_id = r.task_id;
      rr.success = r.success != 0;
      rr.score = r.score;
      rr.episode_length = r.length;
      rr.failure_reason = r.reason;
      res.rollouts.push_back(std::move(rr));
      succ += r.success;
      score += r.score;
    }
    res.mean_success = succ / static_cast<double>(records.size());
    res.mean_score = score / static_cast<double>(records.size());
    return res;
  }
  res = eval_arm(arm, suite_name);
  write_rollout_records(path, res.rollouts);
  return res;
}

// ---- experiments -------------------------------------------------------------

json latent_quality_experiment(ExpContext& ctx, const std::string& out_dir,
                               bool include_clean_control) {
  ReportWriter report(out_dir, "latent_quality", ctx.tier().to_json());

  // all three arms must see the same pretraining data
  const uint64_t ds_hash = ctx.dataset_hash("pretrain");
  report.note("pretrain_dataset_hash", ds_hash);

  struct Arm {
    const char* tag;
    const char* mixture;
    const char* lam;
    lam::CodeRole role;
  };
  const Arm arms[] = {{"task_centric", "tc_full", "stage2", lam::CodeRole::TaskCentric},
                      {"all_changes", "genie_full", "genie", lam::CodeRole::TaskIrrelevant},
                      {"task_irrelevant", "ti_full", "stage1", lam::CodeRole::TaskIrrelevant}};

  std::map<std::string, double> success;
  for (const auto& arm : arms) {
    // consistency guard: the annotations must cover the same episode set
    const auto& ann = ctx.annotations(arm.lam, arm.role, "pretrain");
    if (ann.by_episode.size() != ctx.pretrain_set().episodes.size())
      throw std::runtime_error("latent_quality: annotation/dataset mismatch for arm " +
                               std::string(arm.tag));

    auto& adapted = ctx.adapted(std::string("lq_") + arm.tag, arm.mixture, arm.lam, arm.role,
                                "demo_manip", act::DecoderKind::Attention, true, false);
    SuiteResult res = ctx.cached_eval(std::string("lq_") + arm.tag, adapted, "manip_distractor");
    report.add_arm(arm.tag, "manip_distractor", res);
    success[arm.tag] = res.mean_success;
  }

  report.note("ordering_expected", json::array({"task_centric", "all_changes", "task_irrelevant"}));
  report.note("ordering_observed",
              success["task_centric"] >= success["all_changes"] &&
                  success["all_changes"] >= success["task_irrelevant"]);

  if (include_clean_control) {
    // with distractors disabled the (task-centric - all-changes) gap should
    // shrink; reported, not asserted
    auto& tc = ctx.adapted("lq_task_centric", "tc_full", "stage2", lam::CodeRole::TaskCentric,
                           "demo_manip", act::DecoderKind::Attention, true, false);
    auto& genie = ctx.adapted("lq_all_changes", "genie_full", "genie", lam::CodeRole::TaskIrrelevant,
                              "demo_manip", act::DecoderKind::Attention, true, false);
    SuiteResult tc_clean = ctx.cached_eval("lq_task_centric", tc, "manip_clean");
    SuiteResult genie_clean = ctx.cached_eval("lq_all_changes", genie, "manip_clean");
    report.add_arm("task_centric", "manip_clean", tc_clean);
    report.add_arm("all_changes", "manip_clean", genie_clean);
    report.note("clean_gap", tc_clean.mean_success - genie_clean.mean_success);
    report.note("distractor_gap", success["task_centric"] - success["all_changes"]);
  }

  return report.finalize();
}

json decoder_ablation(ExpContext& ctx, const std::string& out_dir) {
  ReportWriter report(out_dir, "decoder_ablation", ctx.tier().to_json());
  const uint64_t base_hash = ctx.pretrained_policy_hash("tc_full");
  report.note("pretrain_checkpoint_hash", base_hash);

  struct Arm {
    const char* tag;
    act::DecoderKind kind;
  };
  const Arm arms[] = {{"attention", act::DecoderKind::Attention},
                      {"no_visual", act::DecoderKind::NoVisual},
                      {"ar_bins", act::DecoderKind::ArBins}};
  for (const auto& arm : arms) {
    const bool history = arm.kind != act::DecoderKind::ArBins;
    auto& adapted = ctx.adapted(std::string("dec_") + arm.tag, "tc_full", "stage2",
                                lam::CodeRole::TaskCentric, "demo_manip", arm.kind, history, false);
    report.add_arm(arm.tag, "manip_distractor",
                   ctx.cached_eval(std::string("dec_") + arm.tag, adapted, "manip_distractor"));
    report.add_arm(arm.tag, "manip_long",
                   ctx.cached_eval(std::string("dec_") + arm.tag, adapted, "manip_long"));
  }
  return report.finalize();
}

json history_ablation(ExpContext& ctx, const std::string& out_dir) {
  ReportWriter report(out_dir, "history_ablation", ctx.tier().to_json());
  report.note("pretrain_checkpoint_hash", ctx.pretrained_policy_hash("tc_full"));

  auto& with_h = ctx.adapted("hist_on", "tc_full", "stage2", lam::CodeRole::TaskCentric, "demo_nav",
                             act::DecoderKind::Attention, true, false);
  auto& without = ctx.adapted("hist_off", "tc_full", "stage2", lam::CodeRole::TaskCentric, "demo_nav",
                              act::DecoderKind::Attention, false, false);
  report.add_arm("with_history", "nav", ctx.cached_eval("hist_on", with_h, "nav"));
  report.add_arm("instruction_only", "nav", ctx.cached_eval("hist_off", without, "nav"));

  // short-horizon manipulation: reported, not asserted
  auto& mh = ctx.adapted("lq_task_centric", "tc_full", "stage2", lam::CodeRole::TaskCentric,
                         "demo_manip", act::DecoderKind::Attention, true, false);
  report.add_arm("with_history", "manip", ctx.cached_eval("hist_manip_on", mh, "manip"));
  return report.finalize();
}

json scaling_experiment(ExpContext& ctx, const std::string& out_dir) {
  ReportWriter report(out_dir, "scaling", ctx.tier().to_json());
  const char* mixtures[] = {"tc_manip_only", "tc_manip_nav", "tc_full"};
  for (const char* mixture : mixtures) {
    for (double budget : ctx.tier().budgets) {
      const std::string tag =
          std::string("scale_") + mixture + "_b" + std::to_string(static_cast<int>(budget * 100));
      auto& adapted = ctx.adapted(tag, mixture, "stage2", lam::CodeRole::TaskCentric, "demo_nav",
                                  act::DecoderKind::Attention, true, false, budget);
      report.add_arm(std::string(mixture) + "_b" + std::to_string(static_cast<int>(budget * 100)),
                     "nav", ctx.cached_eval(tag, adapted, "nav"));
    }
  }
  return report.finalize();
}

json sanity_floors(ExpContext& ctx, const std::string& out_dir) {
  ReportWriter report(out_dir, "sanity_floors", ctx.tier().to_json());
  const SuiteSpec spec = suite_by_name("manip");  // pick-and-place
  SuiteResult expert = run_suite([]() { return std::make_unique<ExpertActor>(); }, spec,
                                 ctx.tier().rollouts * 2, ctx.eval_seed_list());
  const uint64_t rseed = ctx.seed() + 77;
  SuiteResult random = run_suite(
      [rseed]() { return std::make_unique<RandomChunkActor>(rseed); }, spec, ctx.tier().rollouts,
      ctx.eval_seed_list());
  report.add_arm("scripted_expert", "manip", expert);
  report.add_arm("random_chunk", "manip", random);
  return report.finalize();
}

DisentanglementStats disentanglement_probe(ExpContext& ctx) {
  const auto& ds = ctx.pretrain_set();
  const auto& tc = ctx.annotations("stage2", lam::CodeRole::TaskCentric, "pretrain");
  const auto& ti = ctx.annotations("stage1", lam::CodeRole::TaskIrrelevant, "pretrain");

  DisentanglementStats st;
  auto agreement = [&](const lam::Annotations& ann, const std::vector<std::vector<int>>& groups,
                       int* pair_counter) {
    int64_t agree = 0, total = 0;
    for (const auto& g : groups) {
      const auto& a = ds.episodes[static_cast<size_t>(g[0])];
      const auto& b = ds.episodes[static_cast<size_t>(g[1])];
      const auto ia = ann.by_episode.find(a.episode_id);
      const auto ib = ann.by_episode.find(b.episode_id);
      if (ia == ann.by_episode.end() || ib == ann.by_episode.end()) continue;
      const size_t n = std::min(ia->second.size(), ib->second.size());
      for (size_t i = 0; i < n; ++i) {
        agree += ia->second[i].second.indices == ib->second[i].second.indices ? 1 : 0;
        ++total;
      }
    }
    if (pair_counter) *pair_counter = static_cast<int>(total);
    return total == 0 ? 0.0 : static_cast<double>(agree) / static_cast<double>(total);
  };

  st.tc_distractor_agree = agreement(tc, ds.cf_groups, &st.distractor_pairs);
  st.tc_ego_agree = agreement(tc, ds.ego_cf_groups, &st.ego_pairs);
  st.ti_distractor_agree = agreement(ti, ds.cf_groups, nullptr);
  st.ti_ego_agree = agreement(ti, ds.ego_cf_groups, nullptr);

  // static pairs: o_t paired with itself must map to one dominant code
  auto& model = ctx.lam_variant("stage2");
  std::map<std::vector<int>, int> counts;
  int total_static = 0;
  for (const auto& g : ds.cf_groups) {
    const auto& ep = ds.episodes[static_cast<size_t>(g[0])];
    for (int t = 0; t < static_cast<int>(ep.frames.size()); t += 4) {
      auto feats = ctx.featurizer().encode_frame(ep.frames[static_cast<size_t>(t)]);
      auto enc = model.idm_encode(nullptr, feats, feats, nullptr);
      auto idx = lam::nearest_entries(enc.tc_raw, model.tc_codebook().entries->value);
      ++counts[idx];
      ++total_static;
    }
  }
  int best = 0;
  for (const auto& [code, n] : counts) best = std::max(best, n);
  st.static_pairs = total_static;
  st.static_modal_share = total_static == 0 ? 0.0 : static_cast<double>(best) / total_static;
  return st;
}

json codebook_report(ExpContext& ctx, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const auto& ds = ctx.pretrain_set();
  const auto& ann = ctx.annotations("stage2", lam::CodeRole::TaskCentric, "pretrain");

  // usage histogram over full-code tuples and over single entries
  std::map<std::vector<int>, std::vector<std::pair<int64_t, int>>> by_code;  // code -> (ep id, t)
  std::vector<int64_t> entry_usage(static_cast<size_t>(ann.codebook_size), 0);
  int64_t total_pairs = 0;
  for (const auto& [ep_id, codes] : ann.by_episode) {
    for (const auto& [t, code] : codes) {
      by_code[code.indices].emplace_back(ep_id, t);
      for (int idx : code.indices) ++entry_usage[static_cast<size_t>(idx)];
      ++total_pairs;
    }
  }

  // entry-level perplexity of the usage distribution
  double h = 0;
  const double denom = static_cast<double>(total_pairs) * ann.n_latents;
  for (int64_t u : entry_usage) {
    if (u == 0) continue;
    const double p = static_cast<double>(u) / denom;
    h -= p * std::log(p);
  }
  const double perplexity = std::exp(h);

  // contact sheets for the most frequent codes
  std::vector<std::pair<std::vector<int>, size_t>> freq;
  for (const auto& [code, uses] : by_code) freq.emplace_back(code, uses.size());
  std::sort(freq.begin(), freq.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  json sheets = json::array();
  int cross_embodiment_codes = 0;
  const int top = std::min<int>(8, static_cast<int>(freq.size()));
  for (int ci = 0; ci < top; ++ci) {
    const auto& code = freq[static_cast<size_t>(ci)].first;
    const auto& uses = by_code[code];
    // favor examples from both embodiments
    std::vector<std::pair<int64_t, int>> chosen;
    bool manip_seen = false, nav_seen = false;
    for (const auto& [ep_id, t] : uses) {
      const auto& ep = ds.by_id(ep_id);
      const bool is_manip = ep.embodiment == world::Embodiment::Manip;
      if (chosen.size() < 8) {
        chosen.emplace_back(ep_id, t);
        manip_seen = manip_seen || is_manip;
        nav_seen = nav_seen || is_manip == false;
      } else if (!nav_seen && !is_manip) {
        chosen.back() = {ep_id, t};
        nav_seen = true;
      }
    }
    if (manip_seen && nav_seen) ++cross_embodiment_codes;

    // sheet: one row per pair, [o_t | o_t+k] side by side
    const int tile = world::kImageSize;
    const int w = tile * 2 + 2, hgt = static_cast<int>(chosen.size()) * (tile + 2);
    std::vector<uint8_t> sheet(static_cast<size_t>(w) * hgt * 3, 20);
    for (size_t r = 0; r < chosen.size(); ++r) {
      const auto& ep = ds.by_id(chosen[r].first);
      const int k = world::frame_interval(ep.embodiment);
      const auto& f0 = ep.frames[static_cast<size_t>(chosen[r].second)];
      const auto& f1 = ep.frames[static_cast<size_t>(chosen[r].second + k)];
      for (int rr = 0; rr < tile; ++rr)
        for (int cc = 0; cc < tile; ++cc)
          for (int ch = 0; ch < 3; ++ch) {
            const size_t base = ((r * (tile + 2) + rr) * static_cast<size_t>(w)) * 3;
            sheet[base + static_cast<size_t>(cc) * 3 + static_cast<size_t>(ch)] = f0.at(rr, cc, ch);
            sheet[base + static_cast<size_t>(tile + 2 + cc) * 3 + static_cast<size_t>(ch)] =
                f1.at(rr, cc, ch);
          }
    }
    std::string code_name;
    for (int idx : code) code_name += (code_name.empty() ? "" : "-") + std::to_string(idx);
    const std::string png = out_dir + "/code_" + code_name + ".png";
    write_png(png, sheet, w, hgt);
    sheets.push_back({{"code", code}, {"pairs", uses.size()}, {"sheet", png},
                      {"cross_embodiment", manip_seen && nav_seen}});
  }

  const auto probe = disentanglement_probe(ctx);
  json out;
  out["total_pairs"] = total_pairs;
  out["entry_usage"] = entry_usage;
  out["usage_sum_matches_pairs"] = true;
  int64_t usage_sum = 0;
  for (int64_t u : entry_usage) usage_sum += u;
  out["usage_sum_matches_pairs"] = usage_sum == total_pairs * ann.n_latents;
  out["perplexity"] = perplexity;
  out["distinct_codes"] = by_code.size();
  out["cross_embodiment_codes"] = cross_embodiment_codes;
  out["sheets"] = sheets;
  out["disentanglement"] = {{"tc_distractor_agree", probe.tc_distractor_agree},
                            {"tc_ego_agree", probe.tc_ego_agree},
                            {"ti_distractor_agree", probe.ti_distractor_agree},
                            {"ti_ego_agree", probe.ti_ego_agree},
                            {"static_modal_share", probe.static_modal_share},
                            {"distractor_pairs", probe.distractor_pairs},
                            {"ego_pairs", probe.ego_pairs},
                            {"static_pairs", probe.static_pairs}};
  std::ofstream f(out_dir + "/codebook_report.json", std::ios::trunc);
  f << out.dump(2) << "\n";
  return out;
}

}  // namespace lact::harness
