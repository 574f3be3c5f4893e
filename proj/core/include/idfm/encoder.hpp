#pragma once

#include <string>
#include <vector>

namespace idfm {

// Glyph-level vocabulary: 16 glyphs plus BOS/EOS/NULL specials, ids dense
// in [0, 19).
struct GlyphVocab {
  static constexpr int kAlphabetSize = 16;
  static constexpr int kBos = 16;
  static constexpr int kEos = 17;
  static constexpr int kNull = 18;
  static constexpr int kVocabSize = 19;

  std::string alphabet = "ABCDEFGHIJKLMNOP";
  int max_str_len = 6;

  int glyph_id(char c) const;  // throws on unknown glyph
  char glyph_char(int id) const;
  bool knows(char c) const;
};

// Token ids of the assembled conditioning sequence: a fixed-length utility
// (null) global segment followed by independently encoded variable-length
// instance segments. Embedding lookup happens in the model; segment
// boundaries here must agree with the partition layout exactly.
struct PromptBundle {
  std::vector<int> token_ids;
  int global_len = 0;
  std::vector<int> inst_lens;

  int total_len() const { return static_cast<int>(token_ids.size()); }
  // Token ids of instance n's segment.
  std::vector<int> segment(int n) const;
};

// [BOS, glyph ids..., EOS]; length is |tgt| + 2, never padded.
std::vector<int> encode_instance_prompt(const std::string& tgt, const GlyphVocab& vocab);

// Utility segment of `global_len` NULL tokens plus each instance string
// encoded independently of every other. With pad_to_max set, every instance
// segment is instead padded with NULLs to the same fixed length
// (max_str_len + 2); that is the costlier alternative kept only for the
// efficiency comparison.
PromptBundle assemble(int global_len, const std::vector<std::string>& instance_strings, const GlyphVocab& vocab,
                      bool pad_to_max = false);

}  // namespace idfm
