#include "lact/policy/vocab.hpp"

#include <sstream>
#include <stdexcept>

#include "lact/lam/instr.hpp"

namespace lact::policy {

namespace {
// Template vocabulary of the synthetic task language.
const std::vector<std::string> kTemplateWords = {
    "move", "the", "to",     "then",   "go",       "red",    "green", "blue", "yellow",
    "circle", "square", "triangle", "marker", "corner", "north", "south", "east", "west"};
}  // namespace

PolicyVocab PolicyVocab::build(int codebook_size) {
  PolicyVocab v;
  v.words = kTemplateWords;
  v.act_start = v.word_start + static_cast<int>(v.words.size());
  v.act_count = codebook_size;
  return v;
}

int PolicyVocab::word_id(const std::string& w) const {
  for (size_t i = 0; i < words.size(); ++i)
    if (words[i] == w) return word_start + static_cast<int>(i);
  return unk;
}

std::vector<int> PolicyVocab::encode_words(const std::string& text, int* unk_counter) const {
  std::vector<int> ids;
  for (const auto& w : lam::tokenize_words(text)) {
    const int id = word_id(w);
    if (id == unk && unk_counter) ++*unk_counter;
    ids.push_back(id);
  }
  return ids;
}

std::string PolicyVocab::serialize() const {
  std::ostringstream os;
  os << act_count;
  for (const auto& w : words) os << " " << w;
  return os.str();
}

PolicyVocab PolicyVocab::deserialize(const std::string& blob) {
  std::istringstream is(blob);
  int act_count = 0;
  if (!(is >> act_count)) throw std::runtime_error("vocab: bad serialized blob");
  PolicyVocab v;
  v.act_count = act_count;
  std::string w;
  while (is >> w) v.words.push_back(w);
  v.act_start = v.word_start + static_cast<int>(v.words.size());
  return v;
}

}  // namespace lact::policy
