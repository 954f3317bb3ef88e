#pragma once

#include <map>
#include <string>

#include "lact/numcore/tensor.hpp"
#include "lact/world/types.hpp"

namespace lact::feat {

// Patch-feature geometry: 64x64 frames cut into 8x8 patches -> P=64 patch
// tokens of D=64 dims each.
constexpr int kPatchSize = 8;
constexpr int kPatchesPerSide = world::kImageSize / kPatchSize;
constexpr int kPatches = kPatchesPerSide * kPatchesPerSide;
constexpr int kPatchPixels = kPatchSize * kPatchSize * 3;
constexpr int kFeatDim = 64;

inline uint64_t make_frame_id(int64_t episode_id, int frame_idx) {
  return (static_cast<uint64_t>(episode_id) << 16) | static_cast<uint64_t>(frame_idx & 0xffff);
}

// Frozen deterministic patch-feature extractor. Each flattened 192-dim patch
// is projected through a fixed seeded matrix with orthonormal rows, scaled by
// sqrt(192/64) so distances carry over at unit ratio, then a fixed sinusoidal
// positional encoding is added per patch index. No trainable state.
class Featurizer {
 public:
  explicit Featurizer(uint64_t seed = 0x0d1a0f2ull);

  nc::Tensor<float> encode_frame(const world::Image& image) const;

  // Per-patch projection without the positional term (linearity checks).
  nc::Tensor<float> project_only(const world::Image& image) const;

  const nc::Tensor<float>& positional() const { return posenc_; }

 private:
  nc::Tensor<float> proj_;    // [kFeatDim, kPatchPixels]
  nc::Tensor<float> posenc_;  // [kPatches, kFeatDim]
};

// Source of O_t grids for the models. The default wraps the featurizer; the
// file-backed provider serves externally computed features keyed by frame id.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual nc::Tensor<float> features(const world::Image& image, uint64_t frame_id) = 0;
};

class LiveFeatureProvider : public FeatureProvider {
 public:
  explicit LiveFeatureProvider(const Featurizer& f) : feat_(&f) {}
  nc::Tensor<float> features(const world::Image& image, uint64_t) override {
    return feat_->encode_frame(image);
  }

 private:
  const Featurizer* feat_;
};

class FileFeatureProvider : public FeatureProvider {
 public:
  explicit FileFeatureProvider(const std::string& path);
  nc::Tensor<float> features(const world::Image&, uint64_t frame_id) override;

 private:
  std::map<uint64_t, nc::Tensor<float>> table_;
};

void write_feature_file(const std::string& path,
                        const std::map<uint64_t, nc::Tensor<float>>& features);

}  // namespace lact::feat
