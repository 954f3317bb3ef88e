#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "lact/cli/config.hpp"
#include "lact/numcore/parallel.hpp"

namespace fs = std::filesystem;
using namespace lact;

namespace {

// Exit codes: 0 ok, 1 failure, 2 usage, 3 pipeline-stage order violation.
struct StageOrderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path))
    throw StageOrderError(what + " not found: " + path + " (run the earlier pipeline stage first)");
}

struct CommonArgs {
  std::string config_path;
  std::string out = "run";
  uint64_t seed = 7;
  int threads = 2;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value config file");
  cmd->add_option("--out", args.out, "output run directory");
  cmd->add_option("--seed", args.seed, "master seed");
  cmd->add_option("--threads", args.threads, "worker threads for read-only phases (1 = exact repro)");
}

cli::KvConfig load_config(const CommonArgs& args) {
  cli::KvConfig cfg;
  if (!args.config_path.empty()) cfg = cli::KvConfig::from_file(args.config_path);
  cfg.set("seed", std::to_string(args.seed));
  return cfg;
}

int cmd_gen_data(const CommonArgs& args) {
  auto cfg = load_config(args);
  const std::string out = cli::resolve_out_dir(args.out);
  const std::string ds_dir = out + "/dataset";
  world::generate_dataset(cli::data_config_from(cfg), args.seed, ds_dir);
  const uint64_t hash = world::dataset_hash(ds_dir);
  cli::write_run_metadata(out, cfg, {{"dataset", hash}});
  std::printf("dataset %s hash %016llx\n", ds_dir.c_str(), static_cast<unsigned long long>(hash));
  return 0;
}

int cmd_train_lam(const CommonArgs& args, int stage, const std::string& data_dir,
                  const std::string& stage1_ckpt, bool no_language) {
  auto cfg = load_config(args);
  const auto tier = cli::tier_from_config(cfg);
  const std::string out = cli::resolve_out_dir(args.out);
  fs::create_directories(out);
  require_file(data_dir + "/manifest.json", "dataset");

  auto ds = world::load_dataset(data_dir);
  feat::Featurizer fz;
  lam::InstructionEncoder ie;

  std::unique_ptr<lam::LamModel> model;
  lam::LamTrainConfig tc;
  tc.batch = tier.lam_batch;
  tc.lr = tier.lam_lr;
  tc.seed = args.seed;
  tc.metrics_csv = out + "/metrics.csv";
  if (stage == 1) {
    lam::LamConfig lc = tier.lam;
    lc.stage = 1;
    lc.use_language = !no_language;
    tc.steps = tier.lam_stage1_steps;
    model = std::make_unique<lam::LamModel>(lc, args.seed);
  } else {
    if (stage1_ckpt.empty())
      throw StageOrderError("train-lam --stage 2 requires --stage1 <checkpoint>");
    require_file(stage1_ckpt, "stage-1 checkpoint");
    tc.steps = tier.lam_stage2_steps;
    try {
      model = std::make_unique<lam::LamModel>(lam::LamModel::stage2_from_stage1(stage1_ckpt, args.seed));
    } catch (const std::runtime_error& e) {
      throw StageOrderError(e.what());
    }
  }
  lam::train_lam(*model, ds, fz, ie, tc);
  const std::string ckpt = out + "/lam_stage" + std::to_string(stage) + ".bin";
  model->save(ckpt);
  cli::write_run_metadata(out, cfg,
                          {{"dataset", world::dataset_hash(data_dir)}, {"weights", model->weights_hash()}});
  std::printf("lam checkpoint %s hash %016llx\n", ckpt.c_str(),
              static_cast<unsigned long long>(model->weights_hash()));
  return 0;
}

int cmd_label(const CommonArgs& args, const std::string& lam_ckpt, const std::string& data_dir,
              const std::string& role_name) {
  auto cfg = load_config(args);
  require_file(lam_ckpt, "lam checkpoint");
  require_file(data_dir + "/manifest.json", "dataset");
  const lam::CodeRole role =
      role_name == "tc" ? lam::CodeRole::TaskCentric : lam::CodeRole::TaskIrrelevant;
  auto model = lam::LamModel::load(lam_ckpt);
  if (role == lam::CodeRole::TaskCentric && model.config().stage != 2)
    throw StageOrderError("task-centric labels require a stage-2 checkpoint");
  auto ds = world::load_dataset(data_dir);
  feat::Featurizer fz;
  lam::InstructionEncoder ie;
  auto ann = lam::label_latent_actions(model, ds, fz, ie, role);
  const std::string out = cli::resolve_out_dir(args.out);
  fs::create_directories(out);
  const std::string path = out + "/annotations.bin";
  lam::save_annotations(ann, path);
  cli::write_run_metadata(out, cfg,
                          {{"dataset", world::dataset_hash(data_dir)},
                           {"lam", model.weights_hash()},
                           {"annotations", lam::annotations_hash(ann)}});
  std::printf("annotations %s hash %016llx (skipped tail pairs: %d)\n", path.c_str(),
              static_cast<unsigned long long>(lam::annotations_hash(ann)), ann.skipped_tail);
  return 0;
}

int cmd_pretrain(const CommonArgs& args, const std::string& data_dir, const std::string& ann_path,
                 const std::string& mixture) {
  auto cfg = load_config(args);
  const auto tier = cli::tier_from_config(cfg);
  require_file(data_dir + "/manifest.json", "dataset");
  require_file(ann_path, "annotations");

  auto ds = world::load_dataset(data_dir);
  auto ann = lam::load_annotations(ann_path);
  feat::Featurizer fz;

  const std::string out = cli::resolve_out_dir(args.out);
  fs::create_directories(out);

  policy::PolicyModel model(tier.policy, args.seed);
  policy::PretrainConfig pc;
  pc.steps = tier.policy_steps;
  pc.batch = tier.policy_batch;
  pc.lr = tier.policy_lr;
  pc.seed = args.seed;
  pc.mixture_tag = mixture;
  pc.metrics_csv = out + "/metrics.csv";

  std::function<bool(const world::EpisodeRecord&)> filter;
  if (mixture == "manip_only")
    filter = [](const world::EpisodeRecord& ep) {
      return ep.embodiment == world::Embodiment::Manip && !ep.instruction.empty();
    };
  else if (mixture == "manip_nav")
    filter = [](const world::EpisodeRecord& ep) { return !ep.instruction.empty(); };
  else if (mixture != "full")
    throw std::runtime_error("unknown mixture: " + mixture + " (full|manip_only|manip_nav)");

  auto summary = policy::pretrain_policy(model, {{&ds, &ann, 1.0, mixture, filter}}, fz, pc);
  const std::string ckpt = out + "/policy.bin";
  model.save(ckpt);
  cli::write_run_metadata(out, cfg,
                          {{"dataset", world::dataset_hash(data_dir)},
                           {"annotations", lam::annotations_hash(ann)},
                           {"weights", model.weights_hash()}});
  std::printf("policy %s hash %016llx holdout_acc %.4f\n", ckpt.c_str(),
              static_cast<unsigned long long>(model.weights_hash()), summary.holdout_accuracy);
  return 0;
}

int cmd_finetune(const CommonArgs& args, const std::string& policy_ckpt, const std::string& demos_dir,
                 const std::string& ann_path, const std::string& kind_name, bool no_history,
                 bool decoder_only, double budget) {
  auto cfg = load_config(args);
  const auto tier = cli::tier_from_config(cfg);
  require_file(policy_ckpt, "pretrained policy");
  require_file(demos_dir + "/manifest.json", "demo dataset");
  require_file(ann_path, "annotations");

  act::DecoderKind kind = act::DecoderKind::Attention;
  if (kind_name == "no_visual")
    kind = act::DecoderKind::NoVisual;
  else if (kind_name == "ar_bins")
    kind = act::DecoderKind::ArBins;
  else if (kind_name != "attention")
    throw std::runtime_error("unknown decoder kind: " + kind_name);

  auto policy_model = policy::PolicyModel::load(policy_ckpt);
  auto demos = world::load_dataset(demos_dir);
  auto ann = lam::load_annotations(ann_path);
  feat::Featurizer fz;

  const std::string out = cli::resolve_out_dir(args.out);
  fs::create_directories(out);

  act::FinetuneConfig fc;
  fc.steps = tier.ft_steps;
  fc.batch = tier.ft_batch;
  fc.lr = tier.ft_lr;
  fc.seed = args.seed;
  fc.kind = kind;
  fc.use_history = !no_history;
  fc.decoder_only = decoder_only;
  fc.budget_frac = budget;
  fc.dims = tier.head_dims;
  fc.metrics_csv = out + "/metrics.csv";

  const world::Embodiment emb = demos.episodes.front().embodiment;
  act::DecoderConfig hc = act::decoder_config_for(emb, policy_model.config().dim, tier.head_dims);
  std::unique_ptr<act::ActionDecoder> head;
  std::unique_ptr<act::ArBinDecoder> ar;
  act::FinetuneResult res;
  if (kind == act::DecoderKind::ArBins) {
    ar = std::make_unique<act::ArBinDecoder>(hc, args.seed + 1);
    res = act::finetune(policy_model, nullptr, ar.get(), demos, ann, fz, fc);
  } else {
    hc.use_visual = kind == act::DecoderKind::Attention;
    head = std::make_unique<act::ActionDecoder>(hc, args.seed + 1);
    res = act::finetune(policy_model, head.get(), nullptr, demos, ann, fz, fc);
  }
  const std::string ckpt = out + "/adapted.bin";
  act::save_adapted(ckpt, policy_model, head.get(), ar.get(), fc.use_history);
  cli::write_run_metadata(out, cfg,
                          {{"demos", world::dataset_hash(demos_dir)},
                           {"annotations", lam::annotations_hash(ann)},
                           {"trunk", policy_model.weights_hash()}});
  std::printf("adapted %s holdout_l1 %.4f trunk_%s\n", ckpt.c_str(), res.holdout_l1,
              res.trunk_hash_before == res.trunk_hash_after ? "frozen" : "updated");
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& adapted_ckpt, const std::string& suite,
                 int rollouts, int n_seeds) {
  auto cfg = load_config(args);
  require_file(adapted_ckpt, "adapted checkpoint");
  auto adapted = act::load_adapted(adapted_ckpt);
  feat::Featurizer fz;

  harness::ActorFactory factory = [&]() -> std::unique_ptr<harness::Actor> {
    if (adapted.kind == act::DecoderKind::ArBins)
      return std::make_unique<harness::ArBinActor>(*adapted.policy, *adapted.ar_head, fz);
    return std::make_unique<harness::LatentPolicyActor>(*adapted.policy, *adapted.head, fz,
                                                        adapted.use_history);
  };
  std::vector<uint64_t> seeds;
  for (int i = 0; i < n_seeds; ++i) seeds.push_back(args.seed + 1000 + static_cast<uint64_t>(i));
  auto res = harness::run_suite(factory, harness::suite_by_name(suite), rollouts, seeds);

  const std::string out = cli::resolve_out_dir(args.out);
  harness::ReportWriter report(out, "evaluate", cfg.to_json());
  report.add_arm("policy", suite, res);
  auto summary = report.finalize();
  std::printf("suite %s success %.3f score %.3f (n=%d)\n", suite.c_str(), res.mean_success,
              res.mean_score, static_cast<int>(res.rollouts.size()));
  return 0;
}

int cmd_experiment(const CommonArgs& args, const std::string& name) {
  auto cfg = load_config(args);
  const auto tier = cli::tier_from_config(cfg);
  const std::string out = cli::resolve_out_dir(args.out);
  harness::ExpContext ctx(out + "/pipeline", tier, args.seed);
  cli::write_run_metadata(out, cfg, {});

  nlohmann::json summary;
  const std::string dir = out + "/" + name;
  if (name == "latent-quality")
    summary = harness::latent_quality_experiment(ctx, dir);
  else if (name == "decoder-ablation")
    summary = harness::decoder_ablation(ctx, dir);
  else if (name == "history-ablation")
    summary = harness::history_ablation(ctx, dir);
  else if (name == "scaling")
    summary = harness::scaling_experiment(ctx, dir);
  else if (name == "codebook-report")
    summary = harness::codebook_report(ctx, dir);
  else if (name == "sanity-floors")
    summary = harness::sanity_floors(ctx, dir);
  else
    throw std::runtime_error(
        "unknown experiment: " + name +
        " (latent-quality|decoder-ablation|history-ablation|scaling|codebook-report|sanity-floors)");

  if (summary.contains("results")) {
    std::printf("%-28s %-18s %8s %8s\n", "arm", "suite", "success", "score");
    for (const auto& [arm, suites] : summary["results"].items())
      for (const auto& [suite, r] : suites.items())
        std::printf("%-28s %-18s %8.3f %8.3f\n", arm.c_str(), suite.c_str(),
                    r["success"]["mean"].get<double>(), r["score"]["mean"].get<double>());
  }
  std::printf("experiment %s written to %s\n", name.c_str(), dir.c_str());
  return 0;
}

int cmd_report(const std::string& dir) {
  auto summary = harness::generate_summary(cli::resolve_out_dir(dir));
  std::printf("summary regenerated in %s\n", dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"task-centric latent action pipeline"};
  app.require_subcommand(1);

  CommonArgs args;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, args);

  auto* train_lam = app.add_subcommand("train-lam", "train the latent action model");
  add_common(train_lam, args);
  int stage = 1;
  std::string data_dir, stage1_ckpt;
  bool no_language = false;
  train_lam->add_option("--stage", stage, "training stage")->check(CLI::IsMember({1, 2}));
  train_lam->add_option("--data", data_dir, "dataset directory")->required();
  train_lam->add_option("--stage1", stage1_ckpt, "stage-1 checkpoint (required for stage 2)");
  train_lam->add_flag("--no-language", no_language, "train the single-codebook variant");

  auto* label = app.add_subcommand("label", "annotate a dataset with latent actions");
  add_common(label, args);
  std::string lam_ckpt, role = "tc";
  label->add_option("--lam", lam_ckpt, "lam checkpoint")->required();
  label->add_option("--data", data_dir, "dataset directory")->required();
  label->add_option("--role", role, "codebook role")->check(CLI::IsMember({"tc", "ti"}));

  auto* pretrain = app.add_subcommand("pretrain-policy", "pretrain the latent-action policy");
  add_common(pretrain, args);
  std::string ann_path, mixture = "full";
  pretrain->add_option("--data", data_dir, "dataset directory")->required();
  pretrain->add_option("--annotations", ann_path, "annotation file")->required();
  pretrain->add_option("--mixture", mixture, "episode mixture (full|manip_only|manip_nav)");

  auto* finetune = app.add_subcommand("finetune", "finetune policy + action decoder on demos");
  add_common(finetune, args);
  std::string policy_ckpt, kind = "attention";
  bool no_history = false, decoder_only = false;
  double budget = 1.0;
  finetune->add_option("--policy", policy_ckpt, "pretrained policy checkpoint")->required();
  finetune->add_option("--demos", data_dir, "demo dataset directory")->required();
  finetune->add_option("--annotations", ann_path, "annotation file for the demos")->required();
  finetune->add_option("--kind", kind, "decoder kind (attention|no_visual|ar_bins)");
  finetune->add_flag("--no-history", no_history, "disable history latent-action prompting");
  finetune->add_flag("--decoder-only", decoder_only, "freeze the policy trunk");
  finetune->add_option("--budget", budget, "fraction of demos used");

  auto* evaluate = app.add_subcommand("evaluate", "closed-loop rollout evaluation");
  add_common(evaluate, args);
  std::string adapted_ckpt, suite = "manip_distractor";
  int rollouts = 100, n_seeds = 3;
  evaluate->add_option("--adapted", adapted_ckpt, "adapted checkpoint")->required();
  evaluate->add_option("--suite", suite, "evaluation suite");
  evaluate->add_option("--rollouts", rollouts, "rollouts per seed");
  evaluate->add_option("--eval-seeds", n_seeds, "number of evaluation seeds");

  auto* experiment = app.add_subcommand("experiment", "run a named end-to-end experiment");
  add_common(experiment, args);
  std::string exp_name;
  experiment->add_option("name", exp_name, "experiment name")->required();

  auto* report = app.add_subcommand("report", "regenerate a summary from stored records");
  std::string report_dir;
  report->add_option("--dir", report_dir, "experiment directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    nc::set_thread_count(args.threads);
    if (gen->parsed()) return cmd_gen_data(args);
    if (train_lam->parsed()) return cmd_train_lam(args, stage, data_dir, stage1_ckpt, no_language);
    if (label->parsed()) return cmd_label(args, lam_ckpt, data_dir, role);
    if (pretrain->parsed()) return cmd_pretrain(args, data_dir, ann_path, mixture);
    if (finetune->parsed())
      return cmd_finetune(args, policy_ckpt, data_dir, ann_path, kind, no_history, decoder_only, budget);
    if (evaluate->parsed()) return cmd_evaluate(args, adapted_ckpt, suite, rollouts, n_seeds);
    if (experiment->parsed()) return cmd_experiment(args, exp_name);
    if (report->parsed()) return cmd_report(report_dir);
  } catch (const StageOrderError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
