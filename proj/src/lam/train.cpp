#include "lact/lam/train.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "lact/numcore/adamw.hpp"
#include "lact/numcore/parallel.hpp"

namespace lact::lam {

using nc::Tape;
using nc::Tensor;

std::vector<PairRef> enumerate_pairs(const world::Dataset& ds, bool require_instruction,
                                     double skip_first_frac, double skip_last_frac,
                                     bool exclude_counterfactuals) {
  const int n = static_cast<int>(ds.episodes.size());
  const int begin = static_cast<int>(n * skip_first_frac);
  const int end = n - static_cast<int>(n * skip_last_frac);
  std::vector<PairRef> pairs;
  for (int e = begin; e < end; ++e) {
    const auto& ep = ds.episodes[static_cast<size_t>(e)];
    if (require_instruction && ep.instruction.empty()) continue;
    if (exclude_counterfactuals &&
        (ep.counterfactual_group >= 0 || ep.ego_counterfactual_group >= 0))
      continue;
    const int k = world::frame_interval(ep.embodiment);
    for (int t = 0; t + k < static_cast<int>(ep.frames.size()); ++t) pairs.push_back({e, t});
  }
  return pairs;
}

namespace {

struct InstrCache {
  const InstructionEncoder* enc;
  std::map<int, Tensor<float>> cache;
  const Tensor<float>& get(const world::Dataset& ds, int episode) {
    auto it = cache.find(episode);
    if (it == cache.end())
      it = cache.emplace(episode, enc->encode(ds.episodes[static_cast<size_t>(episode)].instruction)).first;
    return it->second;
  }
};

}  // namespace

LamTrainSummary train_lam(LamModel& model, const world::Dataset& ds, const feat::Featurizer& feat,
                          const InstructionEncoder& instr, const LamTrainConfig& cfg) {
  const auto& mc = model.config();
  const bool stage2 = mc.stage == 2;
  const bool lang = mc.stage == 1 && mc.use_language;

  std::vector<PairRef> pairs =
      enumerate_pairs(ds, lang, 0.0, cfg.holdout_frac, cfg.exclude_counterfactuals);
  if (pairs.empty()) throw std::runtime_error("lam training: no usable frame pairs in dataset");

  nc::AdamW<float>::Config oc;
  oc.lr = cfg.lr;
  nc::AdamW<float> opt(model.params(), oc);
  nc::Rng rng(cfg.seed);
  InstrCache icache{&instr, {}};

  std::ofstream csv;
  if (!cfg.metrics_csv.empty()) {
    csv.open(cfg.metrics_csv, std::ios::trunc);
    csv << "step,recon,commit,codebook,ti_perplexity,tc_perplexity,dead_restarts\n";
  }

  LamTrainSummary summary;
  for (int step = 0; step < cfg.steps; ++step) {
    model.params().zero_grads();

    std::vector<Tensor<float>> keep_alive;  // raw token tensors for the EMA update
    std::vector<const float*> ti_rows, tc_rows;
    std::vector<int> ti_idx, tc_idx;
    double recon_sum = 0, commit_sum = 0, codebook_sum = 0;

    for (int b = 0; b < cfg.batch; ++b) {
      const PairRef pr = pairs[rng.below(pairs.size())];
      const auto& ep = ds.episodes[static_cast<size_t>(pr.episode)];
      const int k = world::frame_interval(ep.embodiment);
      Tensor<float> o_t = feat.encode_frame(ep.frames[static_cast<size_t>(pr.t)]);
      Tensor<float> o_tk = feat.encode_frame(ep.frames[static_cast<size_t>(pr.t + k)]);

      Tape<float> tape;
      const Tensor<float>* instr_ptr = lang ? &icache.get(ds, pr.episode) : nullptr;
      auto enc = model.idm_encode(&tape, o_t, o_tk, instr_ptr);

      auto q_ti = quantize(&tape, enc.ti_raw, model.ti_codebook().entries->value, mc.beta);
      Tensor<float> loss = q_ti.commitment_loss;
      QuantizeResult<float> q_tc;
      if (stage2) {
        q_tc = quantize(&tape, enc.tc_raw, model.tc_codebook().entries->value, mc.beta);
        loss = nc::add(&tape, loss, q_tc.commitment_loss);
      }

      Tensor<float> pred = model.fdm_decode(&tape, o_t, q_ti.quantized,
                                            stage2 ? &q_tc.quantized : nullptr, instr_ptr);
      Tensor<float> recon = nc::mse_loss(&tape, pred, o_tk);
      loss = nc::add(&tape, loss, recon);
      Tensor<float> scaled = nc::scale(&tape, loss, 1.0f / static_cast<float>(cfg.batch));
      if (!std::isfinite(scaled.item())) throw std::runtime_error("lam training: non-finite loss");
      tape.backward(scaled);

      recon_sum += recon.item();
      commit_sum += q_ti.commitment_loss.item() + (stage2 ? q_tc.commitment_loss.item() : 0.0f);
      codebook_sum += q_ti.codebook_loss.item();

      keep_alive.push_back(enc.ti_raw);
      for (int i = 0; i < mc.n_latents; ++i) {
        ti_rows.push_back(enc.ti_raw.data() + i * mc.dim);
        ti_idx.push_back(q_ti.indices[static_cast<size_t>(i)]);
      }
      if (stage2) {
        keep_alive.push_back(enc.tc_raw);
        for (int i = 0; i < mc.n_latents; ++i) {
          tc_rows.push_back(enc.tc_raw.data() + i * mc.dim);
          tc_idx.push_back(q_tc.indices[static_cast<size_t>(i)]);
        }
      }
      summary.samples_seen += 1;
    }

    ema_update(model.ti_codebook(), ti_rows, ti_idx, mc.ema_decay);
    if (stage2) ema_update(model.tc_codebook(), tc_rows, tc_idx, mc.ema_decay);
    if ((step + 1) % mc.dead_code_window == 0) {
      summary.dead_restarts += dead_code_restart(model.ti_codebook(), ti_rows, rng);
      if (stage2) summary.dead_restarts += dead_code_restart(model.tc_codebook(), tc_rows, rng);
    }
    opt.step();

    const float recon_mean = static_cast<float>(recon_sum / cfg.batch);
    summary.recon_trace.push_back(recon_mean);
    if (csv.is_open() && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      csv << step << "," << recon_mean << "," << commit_sum / cfg.batch << ","
          << codebook_sum / cfg.batch << "," << model.ti_codebook().perplexity() << ","
          << (stage2 ? model.tc_codebook().perplexity() : 0.0) << "," << summary.dead_restarts << "\n";
    }
  }
  return summary;
}

double lam_recon_error(const LamModel& model, const world::Dataset& ds, const feat::Featurizer& feat,
                       const InstructionEncoder& instr, const std::vector<PairRef>& pairs, bool use_tc) {
  const auto& mc = model.config();
  const bool stage2 = mc.stage == 2;
  const bool lang = mc.stage == 1 && mc.use_language;
  if (pairs.empty()) return 0.0;

  const int n = static_cast<int>(pairs.size());
  std::vector<double> per_pair(static_cast<size_t>(n), 0.0);
  nc::parallel_chunks(n, [&](int, int begin, int end) {
    InstrCache icache{&instr, {}};
    Tensor<float> zeros({mc.n_latents, mc.dim});
    for (int i = begin; i < end; ++i) {
      const PairRef pr = pairs[static_cast<size_t>(i)];
      const auto& ep = ds.episodes[static_cast<size_t>(pr.episode)];
      const int k = world::frame_interval(ep.embodiment);
      Tensor<float> o_t = feat.encode_frame(ep.frames[static_cast<size_t>(pr.t)]);
      Tensor<float> o_tk = feat.encode_frame(ep.frames[static_cast<size_t>(pr.t + k)]);
      const Tensor<float>* instr_ptr = lang ? &icache.get(ds, pr.episode) : nullptr;
      auto enc = model.idm_encode(nullptr, o_t, o_tk, instr_ptr);
      auto q_ti = quantize<float>(nullptr, enc.ti_raw, model.ti_codebook().entries->value, mc.beta);
      Tensor<float> pred;
      if (stage2) {
        if (use_tc) {
          auto q_tc = quantize<float>(nullptr, enc.tc_raw, model.tc_codebook().entries->value, mc.beta);
          pred = model.fdm_decode(nullptr, o_t, q_ti.quantized, &q_tc.quantized, nullptr);
        } else {
          pred = model.fdm_decode(nullptr, o_t, q_ti.quantized, &zeros, nullptr);
        }
      } else {
        pred = model.fdm_decode(nullptr, o_t, q_ti.quantized, nullptr, instr_ptr);
      }
      per_pair[static_cast<size_t>(i)] = nc::mse_loss<float>(nullptr, pred, o_tk).item();
    }
  });
  double total = 0;
  for (double v : per_pair) total += v;
  return total / n;
}

const LatentCode* Annotations::code_at(int64_t episode_id, int t) const {
  auto it = by_episode.find(episode_id);
  if (it == by_episode.end()) return nullptr;
  const auto& v = it->second;
  auto pos = std::lower_bound(v.begin(), v.end(), t,
                              [](const auto& a, int b) { return a.first < b; });
  if (pos == v.end() || pos->first != t) return nullptr;
  return &pos->second;
}

Annotations label_latent_actions(const LamModel& model, const world::Dataset& ds,
                                 const feat::Featurizer& feat, const InstructionEncoder& instr,
                                 CodeRole role) {
  const auto& mc = model.config();
  if (role == CodeRole::TaskCentric && mc.stage != 2)
    throw std::runtime_error("label: task-centric codes require a stage-2 checkpoint");
  const bool lang = mc.stage == 1 && mc.use_language;

  Annotations ann;
  ann.role = role;
  ann.n_latents = mc.n_latents;
  ann.codebook_size = mc.codebook_size;
  ann.lam_hash = model.weights_hash();

  const int n = static_cast<int>(ds.episodes.size());
  std::vector<std::vector<std::pair<int, LatentCode>>> per_ep(static_cast<size_t>(n));
  std::vector<int> skipped(static_cast<size_t>(n), 0);

  nc::parallel_chunks(n, [&](int, int begin, int end) {
    InstrCache icache{&instr, {}};
    for (int e = begin; e < end; ++e) {
      const auto& ep = ds.episodes[static_cast<size_t>(e)];
      const int k = world::frame_interval(ep.embodiment);
      const int n_frames = static_cast<int>(ep.frames.size());
      skipped[static_cast<size_t>(e)] = std::min(k, n_frames);
      const Tensor<float>* instr_ptr = lang ? &icache.get(ds, e) : nullptr;
      std::vector<Tensor<float>> feats(static_cast<size_t>(n_frames));
      for (int t = 0; t < n_frames; ++t) feats[static_cast<size_t>(t)] = feat.encode_frame(ep.frames[static_cast<size_t>(t)]);
      for (int t = 0; t + k < n_frames; ++t) {
        auto enc = model.idm_encode(nullptr, feats[static_cast<size_t>(t)], feats[static_cast<size_t>(t + k)], instr_ptr);
        const Tensor<float>& raw = role == CodeRole::TaskCentric ? enc.tc_raw : enc.ti_raw;
        const Codebook& cb =
            role == CodeRole::TaskCentric ? model.tc_codebook() : model.ti_codebook();
        LatentCode code;
        code.role = role;
        code.indices = nearest_entries(raw, cb.entries->value);
        per_ep[static_cast<size_t>(e)].emplace_back(t, std::move(code));
      }
    }
  });

  for (int e = 0; e < n; ++e) {
    ann.skipped_tail += skipped[static_cast<size_t>(e)];
    ann.by_episode[ds.episodes[static_cast<size_t>(e)].episode_id] = std::move(per_ep[static_cast<size_t>(e)]);
  }
  return ann;
}

namespace {
constexpr char kAnnMagic[8] = {'L', 'A', 'C', 'T', 'A', 'N', 'N', '\x01'};
}

void save_annotations(const Annotations& ann, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("annotations: cannot write " + path);
  f.write(kAnnMagic, 8);
  const uint8_t role = static_cast<uint8_t>(ann.role);
  const uint32_t nl = static_cast<uint32_t>(ann.n_latents);
  const uint32_t cs = static_cast<uint32_t>(ann.codebook_size);
  const uint32_t skipped = static_cast<uint32_t>(ann.skipped_tail);
  const uint32_t n_eps = static_cast<uint32_t>(ann.by_episode.size());
  f.write(reinterpret_cast<const char*>(&role), 1);
  f.write(reinterpret_cast<const char*>(&nl), 4);
  f.write(reinterpret_cast<const char*>(&cs), 4);
  f.write(reinterpret_cast<const char*>(&ann.lam_hash), 8);
  f.write(reinterpret_cast<const char*>(&skipped), 4);
  f.write(reinterpret_cast<const char*>(&n_eps), 4);
  for (const auto& [id, codes] : ann.by_episode) {
    const uint32_t n_pairs = static_cast<uint32_t>(codes.size());
    f.write(reinterpret_cast<const char*>(&id), 8);
    f.write(reinterpret_cast<const char*>(&n_pairs), 4);
    for (const auto& [t, code] : codes) {
      const uint32_t tt = static_cast<uint32_t>(t);
      f.write(reinterpret_cast<const char*>(&tt), 4);
      for (int i = 0; i < ann.n_latents; ++i) {
        const uint8_t idx = static_cast<uint8_t>(code.indices[static_cast<size_t>(i)]);
        f.write(reinterpret_cast<const char*>(&idx), 1);
      }
    }
  }
}

Annotations load_annotations(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("annotations: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kAnnMagic, 8) != 0)
    throw std::runtime_error("annotations: bad magic in " + path);
  Annotations ann;
  uint8_t role;
  uint32_t nl, cs, skipped, n_eps;
  f.read(reinterpret_cast<char*>(&role), 1);
  f.read(reinterpret_cast<char*>(&nl), 4);
  f.read(reinterpret_cast<char*>(&cs), 4);
  f.read(reinterpret_cast<char*>(&ann.lam_hash), 8);
  f.read(reinterpret_cast<char*>(&skipped), 4);
  f.read(reinterpret_cast<char*>(&n_eps), 4);
  ann.role = static_cast<CodeRole>(role);
  ann.n_latents = static_cast<int>(nl);
  ann.codebook_size = static_cast<int>(cs);
  ann.skipped_tail = static_cast<int>(skipped);
  for (uint32_t e = 0; e < n_eps; ++e) {
    int64_t id;
    uint32_t n_pairs;
    f.read(reinterpret_cast<char*>(&id), 8);
    f.read(reinterpret_cast<char*>(&n_pairs), 4);
    std::vector<std::pair<int, LatentCode>> codes;
    codes.reserve(n_pairs);
    for (uint32_t p = 0; p < n_pairs; ++p) {
      uint32_t t;
      f.read(reinterpret_cast<char*>(&t), 4);
      LatentCode code;
      code.role = ann.role;
      code.indices.resize(static_cast<size_t>(ann.n_latents));
      for (int i = 0; i < ann.n_latents; ++i) {
        uint8_t idx;
        f.read(reinterpret_cast<char*>(&idx), 1);
        code.indices[static_cast<size_t>(i)] = idx;
      }
      codes.emplace_back(static_cast<int>(t), std::move(code));
    }
    if (!f) throw std::runtime_error("annotations: truncated file " + path);
    ann.by_episode[id] = std::move(codes);
  }
  return ann;
}

uint64_t annotations_hash(const Annotations& ann) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [id, codes] : ann.by_episode) {
    h = nc::fnv1a(&id, sizeof(id), h);
    for (const auto& [t, code] : codes) {
      h = nc::fnv1a(&t, sizeof(t), h);
      for (int idx : code.indices) h = nc::fnv1a(&idx, sizeof(idx), h);
    }
  }
  return h;
}

}  // namespace lact::lam
