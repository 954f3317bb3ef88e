#include "lact/policy/train.hpp"

#include <fstream>

#include "lact/numcore/adamw.hpp"
#include "lact/numcore/parallel.hpp"

namespace lact::policy {

using nc::Tape;
using nc::Tensor;

namespace {

struct PairIndex {
  int episode;  // index into dataset episodes
  int t;
};

// Annotated pairs of an episode range [from_frac, to_frac).
std::vector<PairIndex> annotated_pairs(const world::Dataset& ds, const lam::Annotations& ann,
                                       double from_frac, double to_frac,
                                       const std::function<bool(const world::EpisodeRecord&)>& filter = {}) {
  const int n = static_cast<int>(ds.episodes.size());
  const int begin = static_cast<int>(n * from_frac);
  const int end = static_cast<int>(n * to_frac);
  std::vector<PairIndex> out;
  for (int e = begin; e < end; ++e) {
    const auto& ep = ds.episodes[static_cast<size_t>(e)];
    if (filter && !filter(ep)) continue;
    auto it = ann.by_episode.find(ep.episode_id);
    if (it == ann.by_episode.end()) continue;
    for (const auto& [t, code] : it->second) out.push_back({e, t});
  }
  return out;
}

struct Sample {
  Tensor<float> visual;
  const std::string* instruction;
  std::vector<lam::LatentCode> history;
  lam::LatentCode target;
};

Sample make_sample(const world::Dataset& ds, const lam::Annotations& ann, const feat::Featurizer& feat,
                   const PairIndex& pi, bool use_history) {
  const auto& ep = ds.episodes[static_cast<size_t>(pi.episode)];
  Sample s;
  s.visual = feat.encode_frame(ep.frames[static_cast<size_t>(pi.t)]);
  s.instruction = &ep.instruction;
  const lam::LatentCode* tgt = ann.code_at(ep.episode_id, pi.t);
  if (!tgt) throw std::runtime_error("pretrain: missing annotation for sampled pair");
  s.target = *tgt;
  if (use_history) {
    const int k = world::frame_interval(ep.embodiment);
    if (pi.t >= k) {
      const lam::LatentCode* prev = ann.code_at(ep.episode_id, pi.t - k);
      if (prev) s.history.push_back(*prev);
    }
  }
  return s;
}

}  // namespace

PretrainSummary pretrain_policy(PolicyModel& model, const std::vector<PretrainPool>& pools,
                                const feat::Featurizer& feat, const PretrainConfig& cfg) {
  if (pools.empty()) throw std::invalid_argument("pretrain: empty mixture");
  double total_w = 0;
  for (const auto& p : pools) total_w += p.weight;
  if (total_w <= 0) throw std::invalid_argument("pretrain: mixture weights sum to zero");

  std::vector<std::vector<PairIndex>> pool_pairs;
  for (const auto& p : pools) {
    pool_pairs.push_back(annotated_pairs(*p.ds, *p.ann, 0.0, 1.0 - cfg.holdout_frac, p.filter));
    if (pool_pairs.back().empty())
      throw std::invalid_argument("pretrain: pool '" + p.tag + "' has no annotated pairs");
  }

  nc::AdamW<float>::Config oc;
  oc.lr = cfg.lr;
  nc::AdamW<float> opt(model.params(), oc);
  nc::Rng rng(cfg.seed);

  std::ofstream csv;
  if (!cfg.metrics_csv.empty()) {
    csv.open(cfg.metrics_csv, std::ios::trunc);
    csv << "step,loss,act_accuracy,lr,mixture\n";
  }

  PretrainSummary summary;
  const int n_latents = model.config().n_latents;
  for (int step = 0; step < cfg.steps; ++step) {
    model.params().zero_grads();
    double loss_sum = 0;
    int correct = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      // pick pool by weight, then a pair uniformly
      double r = rng.uniform() * total_w;
      size_t pool = 0;
      for (; pool + 1 < pools.size(); ++pool) {
        r -= pools[pool].weight;
        if (r < 0) break;
      }
      const auto& pairs = pool_pairs[pool];
      const PairIndex pi = pairs[rng.below(pairs.size())];
      Sample s = make_sample(*pools[pool].ds, *pools[pool].ann, feat, pi, cfg.use_history);

      Tape<float> tape;
      PolicyInput in;
      in.visual = &s.visual;
      in.instruction = s.instruction;
      in.history = s.history;
      in.target = &s.target;
      auto fw = model.forward(&tape, in);
      auto nll = model.nll_from_forward(&tape, fw, s.target);
      Tensor<float> scaled = nc::scale(&tape, nll.loss, 1.0f / static_cast<float>(cfg.batch));
      if (!std::isfinite(scaled.item())) throw std::runtime_error("pretrain: non-finite loss");
      tape.backward(scaled);
      loss_sum += nll.loss.item();
      correct += nll.correct;
      ++summary.samples_seen;
    }
    opt.step();
    const float mean_loss = static_cast<float>(loss_sum / cfg.batch);
    const float acc = static_cast<float>(correct) / static_cast<float>(cfg.batch * n_latents);
    summary.loss_trace.push_back(mean_loss);
    summary.final_train_accuracy = acc;
    if (csv.is_open() && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
      csv << step << "," << mean_loss << "," << acc << "," << cfg.lr << "," << cfg.mixture_tag << "\n";
  }

  if (cfg.holdout_frac > 0 && !pools.empty())
    summary.holdout_accuracy = act_token_accuracy(model, *pools[0].ds, *pools[0].ann, feat,
                                                  cfg.use_history, 1.0 - cfg.holdout_frac, 1.0);
  return summary;
}

float act_token_accuracy(const PolicyModel& model, const world::Dataset& ds,
                         const lam::Annotations& ann, const feat::Featurizer& feat, bool use_history,
                         double from_frac, double to_frac, int max_pairs) {
  auto pairs = annotated_pairs(ds, ann, from_frac, to_frac);
  if (pairs.empty()) return 0.0f;
  if (static_cast<int>(pairs.size()) > max_pairs) {
    // deterministic thinning
    nc::Rng rng(0xacc);
    std::vector<PairIndex> picked;
    for (int i = 0; i < max_pairs; ++i) picked.push_back(pairs[rng.below(pairs.size())]);
    pairs = std::move(picked);
  }
  const int n = static_cast<int>(pairs.size());
  std::vector<int> correct(static_cast<size_t>(n), 0);
  nc::parallel_chunks(n, [&](int, int begin, int end) {
    for (int i = begin; i < end; ++i) {
      Sample s = make_sample(ds, ann, feat, pairs[static_cast<size_t>(i)], use_history);
      auto pred = model.predict_latent_action(s.visual, *s.instruction, s.history);
      int c = 0;
      for (int j = 0; j < model.config().n_latents; ++j)
        if (pred.code.indices[static_cast<size_t>(j)] == s.target.indices[static_cast<size_t>(j)]) ++c;
      correct[static_cast<size_t>(i)] = c;
    }
  });
  int64_t hits = 0;
  for (int c : correct) hits += c;
  return static_cast<float>(hits) / static_cast<float>(n * model.config().n_latents);
}

}  // namespace lact::policy
