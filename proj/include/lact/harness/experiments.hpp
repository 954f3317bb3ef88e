#pragma once

#include <json.hpp>
#include <map>
#include <memory>

#include "lact/harness/report.hpp"
#include "lact/lam/train.hpp"
#include "lact/policy/train.hpp"

namespace lact::harness {

// Scale tier: every step count, batch size, and suite size of a full
// pipeline run. "desk" sizes satisfy the acceptance margins; "smoke" finishes
// a full pipeline in minutes for integration testing.
struct TierConfig {
  std::string name = "desk";

  // datasets
  int pretrain_episodes = 720;
  double manip_frac = 0.45, nav_frac = 0.30, human_frac = 0.25;
  double long_frac = 0.35;
  int cf_groups = 40, ego_cf_groups = 40;
  int demo_manip_episodes = 240;
  int demo_nav_episodes = 240;

  // latent action model
  lam::LamConfig lam;  // dims; stage/use_language set per variant
  int lam_stage1_steps = 2200, lam_stage2_steps = 2600, lam_batch = 16;
  float lam_lr = 3e-4f;

  // policy
  policy::PolicyConfig policy;
  int policy_steps = 1500, policy_batch = 24;
  float policy_lr = 3e-4f;

  // finetuning
  act::DecoderDims head_dims = act::desk_dims();
  int ft_steps = 450, ft_batch = 16;
  float ft_lr = 2e-4f;

  // evaluation
  int rollouts = 100;
  int eval_seeds = 3;
  std::vector<double> budgets = {0.1, 0.2, 0.5, 1.0};

  nlohmann::json to_json() const;
};

TierConfig desk_tier();
TierConfig smoke_tier();

// Artifact store for one pipeline run: datasets, trained models, annotations
// and adapted checkpoints live under root/ and are reused when present
// (stages are deterministic, so a cache hit equals a rerun).
class ExpContext {
 public:
  ExpContext(std::string root, TierConfig tier, uint64_t seed);

  const TierConfig& tier() const { return tier_; }
  uint64_t seed() const { return seed_; }
  const std::string& root() const { return root_; }
  const feat::Featurizer& featurizer() const { return feat_; }
  const lam::InstructionEncoder& instr() const { return instr_enc_; }

  const world::Dataset& pretrain_set();
  const world::Dataset& demo_manip();
  const world::Dataset& demo_nav();
  uint64_t dataset_hash(const std::string& name);

  // LAM variants: "stage1" (language-conditioned), "stage2" (task-centric,
  // frozen TI), "genie" (single codebook, no language).
  lam::LamModel& lam_variant(const std::string& name);
  lam::LamTrainSummary lam_summary(const std::string& name);

  // Cached annotations of dataset ds_name ("pretrain"|"demo_manip"|"demo_nav")
  // by LAM variant and role.
  const lam::Annotations& annotations(const std::string& lam_name, lam::CodeRole role,
                                      const std::string& ds_name);

  // Pretrained policies by mixture name: "tc_full", "genie_full", "ti_full",
  // "tc_manip_only", "tc_manip_nav".
  policy::PolicyModel& pretrained_policy(const std::string& name);
  uint64_t pretrained_policy_hash(const std::string& name);

  struct AdaptedArm {
    policy::PolicyModel* policy = nullptr;
    act::ActionDecoder* head = nullptr;
    act::ArBinDecoder* ar_head = nullptr;
    act::DecoderKind kind = act::DecoderKind::Attention;
    bool use_history = true;
    float holdout_l1 = -1;
  };
  // Finetuned arm cached by tag. base_policy picks the pretrained mixture;
  // lam_name/role pick the demo annotations.
  AdaptedArm& adapted(const std::string& tag, const std::string& base_policy,
                      const std::string& lam_name, lam::CodeRole role, const std::string& demo_ds,
                      act::DecoderKind kind, bool use_history, bool decoder_only,
                      double budget_frac = 1.0);

  SuiteResult eval_arm(const AdaptedArm& arm, const std::string& suite_name);
  SuiteResult cached_eval(const std::string& tag, const AdaptedArm& arm, const std::string& suite_name);

  std::vector<uint64_t> eval_seed_list() const;

 private:
  const world::Dataset& dataset(const std::string& name);

  std::string root_;
  TierConfig tier_;
  uint64_t seed_;
  feat::Featurizer feat_;
  lam::InstructionEncoder instr_enc_;

  std::map<std::string, std::unique_ptr<world::Dataset>> datasets_;
  std::map<std::string, std::unique_ptr<lam::LamModel>> lams_;
  std::map<std::string, lam::LamTrainSummary> lam_summaries_;
  std::map<std::string, std::unique_ptr<lam::Annotations>> anns_;
  std::map<std::string, std::unique_ptr<policy::PolicyModel>> policies_;
  struct AdaptedSlot {
    std::unique_ptr<policy::PolicyModel> policy;
    std::unique_ptr<act::ActionDecoder> head;
    std::unique_ptr<act::ArBinDecoder> ar_head;
    AdaptedArm arm;
  };
  std::map<std::string, std::unique_ptr<AdaptedSlot>> adapted_;
};

// The paper-shaped experiments. Each writes per-rollout records, results.csv
// and summary.json under out_dir and returns the summary.
nlohmann::json latent_quality_experiment(ExpContext& ctx, const std::string& out_dir,
                                         bool include_clean_control = false);
nlohmann::json decoder_ablation(ExpContext& ctx, const std::string& out_dir);
nlohmann::json history_ablation(ExpContext& ctx, const std::string& out_dir);
nlohmann::json scaling_experiment(ExpContext& ctx, const std::string& out_dir);
nlohmann::json sanity_floors(ExpContext& ctx, const std::string& out_dir);

// Codebook usage, retrieval contact sheets (PNG), disentanglement stats.
nlohmann::json codebook_report(ExpContext& ctx, const std::string& out_dir);

struct DisentanglementStats {
  double tc_distractor_agree = 0;  // same-code share on distractor counterfactuals
  double tc_ego_agree = 0;         // same-code share on ego counterfactuals
  double ti_distractor_agree = 0;
  double ti_ego_agree = 0;
  double static_modal_share = 0;  // share of static pairs mapping to the modal code
  int distractor_pairs = 0, ego_pairs = 0, static_pairs = 0;
};
DisentanglementStats disentanglement_probe(ExpContext& ctx);

}  // namespace lact::harness
