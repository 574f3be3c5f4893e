#include "idfm/encoder.hpp"

#include <stdexcept>

namespace idfm {

int GlyphVocab::glyph_id(char c) const {
  const std::size_t pos = alphabet.find(c);
  if (pos == std::string::npos)
    throw std::invalid_argument(std::string("vocabulary error: unknown glyph '") + c + "'");
  return static_cast<int>(pos);
}

char GlyphVocab::glyph_char(int id) const {
  if (id < 0 || id >= static_cast<int>(alphabet.size()))
    throw std::invalid_argument("vocabulary error: id " + std::to_string(id) + " is not a glyph");
  return alphabet[static_cast<std::size_t>(id)];
}

bool GlyphVocab::knows(char c) const { return alphabet.find(c) != std::string::npos; }

std::vector<int> PromptBundle::segment(int n) const {
  int begin = global_len;
  for (int i = 0; i < n; ++i) begin += inst_lens[static_cast<std::size_t>(i)];
  const int len = inst_lens[static_cast<std::size_t>(n)];
  return {token_ids.begin() + begin, token_ids.begin() + begin + len};
}

std::vector<int> encode_instance_prompt(const std::string& tgt, const GlyphVocab& vocab) {
  if (static_cast<int>(tgt.size()) > vocab.max_str_len)
    throw std::invalid_argument("instance prompt '" + tgt + "' exceeds max length " +
                                std::to_string(vocab.max_str_len));
  std::vector<int> ids;
  ids.reserve(tgt.size() + 2);
  ids.push_back(GlyphVocab::kBos);
  for (char c : tgt) ids.push_back(vocab.glyph_id(c));
  ids.push_back(GlyphVocab::kEos);
  return ids;
}

PromptBundle assemble(int global_len, const std::vector<std::string>& instance_strings, const GlyphVocab& vocab,
                      bool pad_to_max) {
  if (global_len < 1) throw std::invalid_argument("assemble: utility prompt needs at least one token");
  PromptBundle bundle;
  bundle.global_len = global_len;
  bundle.token_ids.assign(static_cast<std::size_t>(global_len), GlyphVocab::kNull);
  for (const std::string& s : instance_strings) {
    std::vector<int> ids = encode_instance_prompt(s, vocab);
    if (pad_to_max) ids.resize(static_cast<std::size_t>(vocab.max_str_len) + 2, GlyphVocab::kNull);
    bundle.inst_lens.push_back(static_cast<int>(ids.size()));
    bundle.token_ids.insert(bundle.token_ids.end(), ids.begin(), ids.end());
  }
  return bundle;
}

}  // namespace idfm
