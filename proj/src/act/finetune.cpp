#include "lact/act/finetune.hpp"

#include <fstream>

#include "lact/numcore/adamw.hpp"
#include "lact/numcore/parallel.hpp"

namespace lact::act {

using nc::Tape;
using nc::Tensor;

namespace {

struct ChunkRef {
  int episode;
  int t;  // chunk start, aligned to k
};

// Aligned chunk starts of successful episodes with an annotation at t.
std::vector<ChunkRef> demo_chunks(const world::Dataset& ds, const lam::Annotations& ann, int from_ep,
                                  int to_ep) {
  std::vector<ChunkRef> out;
  for (int e = from_ep; e < to_ep; ++e) {
    const auto& ep = ds.episodes[static_cast<size_t>(e)];
    if (!ep.success) continue;
    const int k = world::frame_interval(ep.embodiment);
    for (int t = 0; t + k <= ep.length(); t += k)
      if (ann.code_at(ep.episode_id, t)) out.push_back({e, t});
  }
  return out;
}

Tensor<float> chunk_target(const world::EpisodeRecord& ep, int t, int k, int act_dim) {
  Tensor<float> tgt({1, k * act_dim});
  for (int s = 0; s < k; ++s)
    for (int d = 0; d < act_dim; ++d)
      tgt.data()[s * act_dim + d] = ep.actions[static_cast<size_t>(t + s)][static_cast<size_t>(d)];
  return tgt;
}

Tensor<float> proprio_tensor(const world::EpisodeRecord& ep, int t, int dim) {
  Tensor<float> pp({1, dim});
  for (int d = 0; d < dim; ++d) pp.data()[d] = ep.proprio[static_cast<size_t>(t)][static_cast<size_t>(d)];
  return pp;
}

void validate_head(const DecoderConfig& hc, const world::Dataset& ds) {
  for (const auto& ep : ds.episodes) {
    if (ep.embodiment != hc.embodiment)
      throw std::invalid_argument("finetune: demo embodiment does not match the decoder head");
    if (world::frame_interval(ep.embodiment) != hc.chunk)
      throw std::invalid_argument("finetune: chunk size mismatch between head and dataset");
  }
}

}  // namespace

FinetuneResult finetune(policy::PolicyModel& policy, ActionDecoder* head, ArBinDecoder* ar_head,
                        const world::Dataset& demos, const lam::Annotations& ann,
                        const feat::Featurizer& feat, const FinetuneConfig& cfg) {
  const bool ar = cfg.kind == DecoderKind::ArBins;
  if (ar && !ar_head) throw std::invalid_argument("finetune: ar_bins kind requires an ArBinDecoder");
  if (!ar && !head) throw std::invalid_argument("finetune: attention kinds require an ActionDecoder");
  const DecoderConfig& hc = ar ? ar_head->config() : head->config();
  validate_head(hc, demos);
  if (!ar && (cfg.kind == DecoderKind::NoVisual) == hc.use_visual)
    throw std::invalid_argument("finetune: head use_visual flag does not match decoder kind");

  const int n_eps = static_cast<int>(demos.episodes.size());
  const int holdout_begin = n_eps - static_cast<int>(n_eps * cfg.holdout_frac);
  const int budget_end = std::max(1, static_cast<int>(holdout_begin * cfg.budget_frac));
  auto train_chunks = demo_chunks(demos, ann, 0, budget_end);
  auto holdout_chunks = demo_chunks(demos, ann, holdout_begin, n_eps);
  if (train_chunks.empty()) throw std::runtime_error("finetune: no usable demo chunks");

  FinetuneResult res;
  res.train_chunks = static_cast<int>(train_chunks.size());
  res.holdout_chunks = static_cast<int>(holdout_chunks.size());
  res.trunk_hash_before = policy.weights_hash();

  if (cfg.decoder_only) policy.freeze_trunk();

  nc::AdamW<float>::Config oc;
  oc.lr = cfg.lr;
  std::unique_ptr<nc::AdamW<float>> opt_policy;
  if (!cfg.decoder_only) opt_policy = std::make_unique<nc::AdamW<float>>(policy.params(), oc);
  nc::AdamW<float> opt_head(ar ? ar_head->params() : head->params(), oc);

  nc::Rng rng(cfg.seed);
  std::ofstream csv;
  if (!cfg.metrics_csv.empty()) {
    csv.open(cfg.metrics_csv, std::ios::trunc);
    csv << "step,nll,l1,lr\n";
  }

  const int patches = policy.config().patches;
  for (int step = 0; step < cfg.steps; ++step) {
    policy.params().zero_grads();
    if (ar)
      ar_head->params().zero_grads();
    else
      head->params().zero_grads();

    double nll_sum = 0, l1_sum = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      const ChunkRef cr = train_chunks[rng.below(train_chunks.size())];
      const auto& ep = demos.episodes[static_cast<size_t>(cr.episode)];
      const int k = hc.chunk;
      Tensor<float> visual = feat.encode_frame(ep.frames[static_cast<size_t>(cr.t)]);
      const lam::LatentCode* target = ann.code_at(ep.episode_id, cr.t);
      std::vector<lam::LatentCode> history;
      if (cfg.use_history && !ar && cr.t >= k) {
        const lam::LatentCode* prev = ann.code_at(ep.episode_id, cr.t - k);
        if (prev) history.push_back(*prev);
      }
      Tensor<float> tgt_chunk = chunk_target(ep, cr.t, k, hc.act_dim);
      Tensor<float> pp;
      if (hc.proprio_dim > 0) pp = proprio_tensor(ep, cr.t, hc.proprio_dim);

      Tape<float> tape;
      policy::PolicyInput in;
      in.visual = &visual;
      in.instruction = &ep.instruction;
      in.history = history;
      Tensor<float> loss;
      if (ar) {
        auto fw = policy.forward(&tape, in);
        Tensor<float> ctx =
            nc::slice_rows(&tape, fw.hidden, fw.seq.total_len - 1, fw.seq.total_len);
        std::vector<std::vector<float>> acts(ep.actions.begin() + cr.t,
                                             ep.actions.begin() + cr.t + k);
        loss = ar_head->loss(&tape, std::move(ctx), pp, ar_head->bins_of_chunk(acts));
        nll_sum += loss.item();
      } else {
        in.target = target;
        auto fw = policy.forward(&tape, in);
        auto nll = policy.nll_from_forward(&tape, fw, *target);
        Tensor<float> e_a = nc::gather_rows(&tape, fw.hidden, fw.seq.act_input_rows);
        Tensor<float> e_v_pooled;
        if (hc.use_visual) {
          Tensor<float> e_v = nc::slice_rows(&tape, fw.hidden, 0, patches);
          e_v_pooled = head->pool_visual(&tape, std::move(e_v));
        }
        Tensor<float> pred = head->decode_chunk(&tape, std::move(e_a), e_v_pooled, pp);
        Tensor<float> l1 = nc::l1_loss(&tape, std::move(pred), tgt_chunk);
        loss = nc::add(&tape, nll.loss, nc::scale(&tape, l1, cfg.lambda_l1));
        nll_sum += nll.loss.item();
        l1_sum += l1.item();
      }
      Tensor<float> scaled = nc::scale(&tape, loss, 1.0f / static_cast<float>(cfg.batch));
      if (!std::isfinite(scaled.item())) throw std::runtime_error("finetune: non-finite loss");
      tape.backward(scaled);
    }
    if (opt_policy) opt_policy->step();
    opt_head.step();

    res.nll_trace.push_back(static_cast<float>(nll_sum / cfg.batch));
    res.l1_trace.push_back(static_cast<float>(l1_sum / cfg.batch));
    if (csv.is_open() && (step % 25 == 0 || step + 1 == cfg.steps))
      csv << step << "," << res.nll_trace.back() << "," << res.l1_trace.back() << "," << cfg.lr << "\n";
  }

  res.trunk_hash_after = policy.weights_hash();

  // held-out per-dim L1 through the deployable inference path
  if (!holdout_chunks.empty()) {
    const int n = static_cast<int>(holdout_chunks.size());
    std::vector<double> errs(static_cast<size_t>(n), 0.0);
    nc::parallel_chunks(n, [&](int, int begin, int end) {
      for (int i = begin; i < end; ++i) {
        const ChunkRef cr = holdout_chunks[static_cast<size_t>(i)];
        const auto& ep = demos.episodes[static_cast<size_t>(cr.episode)];
        const int k = hc.chunk;
        Tensor<float> visual = feat.encode_frame(ep.frames[static_cast<size_t>(cr.t)]);
        std::vector<float> pr;
        if (hc.proprio_dim > 0) pr = ep.proprio[static_cast<size_t>(cr.t)];
        ActionChunk chunk;
        if (ar) {
          policy::PolicyInput in;
          in.visual = &visual;
          in.instruction = &ep.instruction;
          auto fw = policy.forward(nullptr, in);
          Tensor<float> ctx =
              nc::slice_rows<float>(nullptr, fw.hidden, fw.seq.total_len - 1, fw.seq.total_len);
          chunk = ar_head->decode(ctx, pr);
        } else {
          std::vector<lam::LatentCode> history;
          if (cfg.use_history && cr.t >= k) {
            const lam::LatentCode* prev = ann.code_at(ep.episode_id, cr.t - k);
            if (prev) history.push_back(*prev);
          }
          auto pred = policy.predict_latent_action(visual, ep.instruction, history);
          chunk = head->decode(pred.act_hidden, pred.vis_hidden, pr);
        }
        double err = 0;
        for (int s = 0; s < k; ++s)
          for (int d = 0; d < hc.act_dim; ++d)
            err += std::abs(chunk.actions.data()[s * hc.act_dim + d] -
                            ep.actions[static_cast<size_t>(cr.t + s)][static_cast<size_t>(d)]);
        errs[static_cast<size_t>(i)] = err / (k * hc.act_dim);
      }
    });
    double total = 0;
    for (double e : errs) total += e;
    res.holdout_l1 = static_cast<float>(total / n);
  }
  return res;
}

void save_adapted(const std::string& path, const policy::PolicyModel& policy,
                  const ActionDecoder* head, const ArBinDecoder* ar_head, bool use_history) {
  nc::Checkpoint ck;
  ck.put_store(policy.params(), "policy/");
  ck.put_i64("policy/meta/dim", policy.config().dim);
  ck.put_i64("policy/meta/heads", policy.config().heads);
  ck.put_i64("policy/meta/blocks", policy.config().blocks);
  ck.put_i64("policy/meta/mlp_ratio", policy.config().mlp_ratio);
  ck.put_i64("policy/meta/codebook_size", policy.config().codebook_size);
  ck.put_i64("meta/use_history", use_history ? 1 : 0);
  if (head) {
    const auto& hc = head->config();
    ck.put_i64("meta/kind",
               static_cast<int64_t>(hc.use_visual ? DecoderKind::Attention : DecoderKind::NoVisual));
    ck.put_i64("head/meta/hidden", hc.dims.hidden);
    ck.put_i64("head/meta/heads", hc.dims.heads);
    ck.put_i64("head/meta/head_dim", hc.dims.head_dim);
    ck.put_i64("head/meta/embodiment", static_cast<int64_t>(hc.embodiment));
    ck.put_i64("head/meta/use_visual", hc.use_visual ? 1 : 0);
    head->save_into(ck, "head/" + std::string(world::embodiment_name(hc.embodiment)) + "/");
  } else {
    const auto& hc = ar_head->config();
    ck.put_i64("meta/kind", static_cast<int64_t>(DecoderKind::ArBins));
    ck.put_i64("head/meta/hidden", hc.dims.hidden);
    ck.put_i64("head/meta/heads", hc.dims.heads);
    ck.put_i64("head/meta/head_dim", hc.dims.head_dim);
    ck.put_i64("head/meta/embodiment", static_cast<int64_t>(hc.embodiment));
    ar_head->save_into(ck, "head/" + std::string(world::embodiment_name(hc.embodiment)) + "/");
  }
  ck.save(path);
}

AdaptedPolicy load_adapted(const std::string& path) {
  nc::Checkpoint ck = nc::Checkpoint::load(path);
  auto geti = [&](const std::string& n) {
    const auto* r = ck.find(n);
    if (!r) throw std::runtime_error("adapted checkpoint: missing " + n);
    return static_cast<int>(r->as_i64());
  };
  policy::PolicyConfig pc;
  pc.dim = geti("policy/meta/dim");
  pc.heads = geti("policy/meta/heads");
  pc.blocks = geti("policy/meta/blocks");
  pc.mlp_ratio = geti("policy/meta/mlp_ratio");
  pc.codebook_size = geti("policy/meta/codebook_size");

  AdaptedPolicy out;
  out.policy = std::make_unique<policy::PolicyModel>(pc, 0);
  ck.load_store(out.policy->params(), "policy/");
  out.use_history = geti("meta/use_history") != 0;
  out.kind = static_cast<DecoderKind>(geti("meta/kind"));

  const auto emb = static_cast<world::Embodiment>(geti("head/meta/embodiment"));
  DecoderDims dims;
  dims.hidden = geti("head/meta/hidden");
  dims.heads = geti("head/meta/heads");
  dims.head_dim = geti("head/meta/head_dim");
  DecoderConfig hc = decoder_config_for(emb, pc.dim, dims);
  const std::string prefix = "head/" + std::string(world::embodiment_name(emb)) + "/";
  if (out.kind == DecoderKind::ArBins) {
    out.ar_head = std::make_unique<ArBinDecoder>(hc, 0);
    out.ar_head->load_from(ck, prefix);
  } else {
    hc.use_visual = geti("head/meta/use_visual") != 0;
    out.head = std::make_unique<ActionDecoder>(hc, 0);
    out.head->load_from(ck, prefix);
  }
  return out;
}

}  // namespace lact::act
