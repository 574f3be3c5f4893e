#pragma once

#include <array>
#include <cstdint>

namespace idfm {

// 3x5 binary glyph bitmaps for the 16-letter alphabet, drawn into 4x6 cells
// (one pixel of spacing right and below). Bit r*3+c of a bitmap is the ink
// at column c, row r. The set was chosen so every pair of glyphs differs in
// at least 3 pixels and every glyph has at least 6 ink pixels, which makes
// minimum-Hamming decoding unambiguous even with one corrupted pixel per
// cell.
struct GlyphFont {
  static constexpr int kGlyphW = 3;
  static constexpr int kGlyphH = 5;
  static constexpr int kCellW = 4;
  static constexpr int kCellH = 6;
  static constexpr int kGlyphCount = 16;

  std::array<std::uint16_t, kGlyphCount> bitmaps;

  static GlyphFont standard();

  bool ink(int glyph, int cx, int cy) const {
    return (bitmaps[static_cast<std::size_t>(glyph)] >> (cy * kGlyphW + cx)) & 1u;
  }
  int popcount(int glyph) const;
  int hamming(int glyph, std::uint16_t cell_bits) const;
  int pair_distance(int glyph_a, int glyph_b) const;
};

}  // namespace idfm
