#pragma once

#include <string>
#include <vector>

namespace lact::policy {

// Token ids: specials first, then the template word vocabulary, then a
// contiguous ACT block of |C| latent-action tokens.
struct PolicyVocab {
  std::vector<std::string> words;
  int unk = 0, bos = 1, sep = 2, hist = 3;
  int word_start = 4;
  int act_start = 0;
  int act_count = 0;

  int size() const { return act_start + act_count; }
  int act_token(int code_index) const { return act_start + code_index; }
  bool is_act(int token) const { return token >= act_start && token < act_start + act_count; }

  // Unknown words map to UNK and are counted.
  std::vector<int> encode_words(const std::string& text, int* unk_counter = nullptr) const;
  int word_id(const std::string& w) const;

  static PolicyVocab build(int codebook_size);

  std::string serialize() const;
  static PolicyVocab deserialize(const std::string& blob);
};

}  // namespace lact::policy
