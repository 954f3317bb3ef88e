#include "lact/feat/featurizer.hpp"

#include <cmath>
#include <fstream>
#include <vector>

#include "lact/numcore/rng.hpp"

namespace lact::feat {

Featurizer::Featurizer(uint64_t seed) : proj_({kFeatDim, kPatchPixels}), posenc_({kPatches, kFeatDim}) {
  // Gaussian rows orthonormalized by modified Gram-Schmidt (in double), then
  // scaled so the rank-reduced projection preserves distances in expectation.
  nc::Rng rng(seed);
  std::vector<std::vector<double>> rows(kFeatDim, std::vector<double>(kPatchPixels));
  for (auto& r : rows)
    for (auto& v : r) v = rng.gauss();
  for (int i = 0; i < kFeatDim; ++i) {
    for (int j = 0; j < i; ++j) {
      double dot = 0;
      for (int c = 0; c < kPatchPixels; ++c) dot += rows[i][c] * rows[j][c];
      for (int c = 0; c < kPatchPixels; ++c) rows[i][c] -= dot * rows[j][c];
    }
    double norm = 0;
    for (int c = 0; c < kPatchPixels; ++c) norm += rows[i][c] * rows[i][c];
    norm = std::sqrt(norm);
    for (int c = 0; c < kPatchPixels; ++c) rows[i][c] /= norm;
  }
  const double gain = std::sqrt(static_cast<double>(kPatchPixels) / kFeatDim);
  for (int i = 0; i < kFeatDim; ++i)
    for (int c = 0; c < kPatchPixels; ++c)
      proj_.data()[i * kPatchPixels + c] = static_cast<float>(rows[i][c] * gain);

  for (int p = 0; p < kPatches; ++p)
    for (int d = 0; d < kFeatDim; ++d) {
      const double rate = std::pow(10000.0, -2.0 * (d / 2) / static_cast<double>(kFeatDim));
      const double angle = p * rate;
      posenc_.data()[p * kFeatDim + d] = static_cast<float>((d % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
}

nc::Tensor<float> Featurizer::project_only(const world::Image& image) const {
  if (image.px.size() != static_cast<size_t>(world::kImageSize) * world::kImageSize * 3)
    throw std::invalid_argument("featurizer: image must be 64x64x3");
  nc::Tensor<float> out({kPatches, kFeatDim});
  float patch[kPatchPixels];
  for (int pr = 0; pr < kPatchesPerSide; ++pr) {
    for (int pc = 0; pc < kPatchesPerSide; ++pc) {
      int idx = 0;
      for (int r = 0; r < kPatchSize; ++r)
        for (int c = 0; c < kPatchSize; ++c)
          for (int ch = 0; ch < 3; ++ch)
            patch[idx++] = image.fat(pr * kPatchSize + r, pc * kPatchSize + c, ch);
      const int p = pr * kPatchesPerSide + pc;
      for (int d = 0; d < kFeatDim; ++d) {
        const float* w = proj_.data() + d * kPatchPixels;
        float acc = 0;
        for (int i = 0; i < kPatchPixels; ++i) acc += w[i] * patch[i];
        out.data()[p * kFeatDim + d] = acc;
      }
    }
  }
  return out;
}

nc::Tensor<float> Featurizer::encode_frame(const world::Image& image) const {
  nc::Tensor<float> out = project_only(image);
  for (size_t i = 0; i < out.numel(); ++i) out.data()[i] += posenc_.data()[i];
  return out;
}

FileFeatureProvider::FileFeatureProvider(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("feature file: cannot open " + path);
  while (f.peek() != EOF) {
    uint64_t payload = 0, frame_id = 0;
    uint32_t p = 0, d = 0;
    f.read(reinterpret_cast<char*>(&payload), 8);
    f.read(reinterpret_cast<char*>(&frame_id), 8);
    f.read(reinterpret_cast<char*>(&p), 4);
    f.read(reinterpret_cast<char*>(&d), 4);
    if (!f) throw std::runtime_error("feature file: truncated header in " + path);
    nc::Tensor<float> t({static_cast<int>(p), static_cast<int>(d)});
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
    if (!f) throw std::runtime_error("feature file: truncated record in " + path);
    table_.emplace(frame_id, std::move(t));
  }
}

nc::Tensor<float> FileFeatureProvider::features(const world::Image&, uint64_t frame_id) {
  auto it = table_.find(frame_id);
  if (it == table_.end())
    throw std::runtime_error("feature file: no features for frame id " + std::to_string(frame_id));
  return it->second;
}

void write_feature_file(const std::string& path, const std::map<uint64_t, nc::Tensor<float>>& features) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("feature file: cannot open for write " + path);
  for (const auto& [id, t] : features) {
    const uint64_t payload = 8 + 4 + 4 + t.numel() * 4;
    const uint32_t p = static_cast<uint32_t>(t.dim(0)), d = static_cast<uint32_t>(t.dim(1));
    f.write(reinterpret_cast<const char*>(&payload), 8);
    f.write(reinterpret_cast<const char*>(&id), 8);
    f.write(reinterpret_cast<const char*>(&p), 4);
    f.write(reinterpret_cast<const char*>(&d), 4);
    f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
  }
}

}  // namespace lact::feat
