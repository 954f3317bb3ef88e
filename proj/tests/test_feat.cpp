#include <doctest.h>

#include <filesystem>

#include "lact/feat/featurizer.hpp"
#include "lact/numcore/rng.hpp"

using namespace lact;
using namespace lact::feat;

namespace {

world::Image random_image(nc::Rng& rng) {
  world::Image img;
  for (auto& b : img.px) b = static_cast<uint8_t>(rng.below(256));
  return img;
}

}  // namespace

TEST_CASE("all-zero image encodes to exactly the positional encodings") {
  Featurizer f;
  world::Image zero;
  auto feats = f.encode_frame(zero);
  REQUIRE(feats.shape() == nc::Shape{kPatches, kFeatDim});
  for (size_t i = 0; i < feats.numel(); ++i) CHECK(feats.data()[i] == f.positional().data()[i]);
}

TEST_CASE("encoding is deterministic") {
  Featurizer f;
  nc::Rng rng(3);
  world::Image img = random_image(rng);
  auto a = f.encode_frame(img);
  auto b = f.encode_frame(img);
  for (size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("projection is linear per patch") {
  Featurizer f;
  // build an image whose patch values are scaled by exactly 3 (alpha must keep
  // u8 exact: use values <= 85)
  world::Image x, x3;
  nc::Rng rng(4);
  for (size_t i = 0; i < x.px.size(); ++i) {
    const uint8_t v = static_cast<uint8_t>(rng.below(86));
    x.px[i] = v;
    x3.px[i] = static_cast<uint8_t>(3 * v);
  }
  auto px = f.project_only(x);
  auto px3 = f.project_only(x3);
  for (size_t i = 0; i < px.numel(); ++i)
    CHECK(px3.data()[i] == doctest::Approx(3.0f * px.data()[i]).epsilon(1e-4));
}

TEST_CASE("feature distances track pixel distances near unit ratio") {
  Featurizer f;
  nc::Rng rng(5);
  int within = 0;
  const int pairs = 1000;
  for (int i = 0; i < pairs; ++i) {
    world::Image a = random_image(rng);
    world::Image b = random_image(rng);
    auto fa = f.project_only(a);
    auto fb = f.project_only(b);
    // compare one patch per pair (positional term cancels at equal index)
    const int p = rng.index(kPatches);
    double feat_d = 0, pix_d = 0;
    for (int d = 0; d < kFeatDim; ++d) {
      const double diff = fa.data()[p * kFeatDim + d] - fb.data()[p * kFeatDim + d];
      feat_d += diff * diff;
    }
    const int pr = p / kPatchesPerSide, pc = p % kPatchesPerSide;
    for (int r = 0; r < kPatchSize; ++r)
      for (int c = 0; c < kPatchSize; ++c)
        for (int ch = 0; ch < 3; ++ch) {
          const double diff = a.fat(pr * kPatchSize + r, pc * kPatchSize + c, ch) -
                              b.fat(pr * kPatchSize + r, pc * kPatchSize + c, ch);
          pix_d += diff * diff;
        }
    const double ratio = std::sqrt(feat_d) / std::sqrt(pix_d);
    if (ratio >= 0.5 && ratio <= 1.5) ++within;
  }
  CHECK(within >= 990);
}

TEST_CASE("wrong image shape is rejected") {
  Featurizer f;
  world::Image img;
  img.px.resize(100);
  CHECK_THROWS_AS((void)f.encode_frame(img), std::invalid_argument);
}

TEST_CASE("file feature provider overrides the live featurizer") {
  Featurizer f;
  nc::Rng rng(6);
  world::Image img = random_image(rng);
  std::map<uint64_t, nc::Tensor<float>> table;
  table[make_frame_id(7, 3)] = f.encode_frame(img);

  const auto path = std::filesystem::temp_directory_path() / "lact_feats.bin";
  write_feature_file(path.string(), table);
  FileFeatureProvider provider(path.string());

  world::Image other;  // provider ignores pixels, returns the stored grid
  auto got = provider.features(other, make_frame_id(7, 3));
  auto want = f.encode_frame(img);
  for (size_t i = 0; i < want.numel(); ++i) CHECK(got.data()[i] == want.data()[i]);
  CHECK_THROWS((void)provider.features(other, make_frame_id(1, 1)));
  std::filesystem::remove(path);
}
