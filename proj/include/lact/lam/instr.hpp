#pragma once

#include <string>
#include <vector>

#include "lact/numcore/rng.hpp"
#include "lact/numcore/tensor.hpp"

namespace lact::lam {

constexpr int kTextDim = 64;

std::vector<std::string> tokenize_words(const std::string& text);

// Frozen text embedding standing in for a pretrained encoder: words hash into
// a seeded table of random vectors, mean-pooled. Empty text maps to zeros.
class InstructionEncoder {
 public:
  explicit InstructionEncoder(uint64_t seed = 0x7e57ull, int buckets = 256);

  nc::Tensor<float> encode(const std::string& text) const;  // [1, kTextDim]

  int buckets() const { return table_.dim(0); }
  int bucket_of(const std::string& word) const;

 private:
  nc::Tensor<float> table_;  // [buckets, kTextDim]
};

}  // namespace lact::lam
