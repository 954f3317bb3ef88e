#include "lact/lam/instr.hpp"

#include <algorithm>
#include <cctype>

namespace lact::lam {

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

InstructionEncoder::InstructionEncoder(uint64_t seed, int buckets) : table_({buckets, kTextDim}) {
  nc::Rng rng(seed);
  for (size_t i = 0; i < table_.numel(); ++i) table_.data()[i] = static_cast<float>(rng.gauss());
}

int InstructionEncoder::bucket_of(const std::string& word) const {
  return static_cast<int>(nc::fnv1a(word) % static_cast<uint64_t>(table_.dim(0)));
}

nc::Tensor<float> InstructionEncoder::encode(const std::string& text) const {
  nc::Tensor<float> out({1, kTextDim});
  const auto words = tokenize_words(text);
  if (words.empty()) return out;  // zeros
  for (const auto& w : words) {
    const float* row = table_.data() + bucket_of(w) * kTextDim;
    for (int d = 0; d < kTextDim; ++d) out.data()[d] += row[d];
  }
  const float inv = 1.0f / static_cast<float>(words.size());
  for (int d = 0; d < kTextDim; ++d) out.data()[d] *= inv;
  return out;
}

}  // namespace lact::lam
