#include "idfm/font.hpp"

#include <bit>

namespace idfm {

GlyphFont GlyphFont::standard() {
  return GlyphFont{{0x5bea, 0x3aeb, 0x624e, 0x3b7b, 0x72cf, 0x1acf, 0x7b4e, 0x5bed, 0x7497, 0x2b24, 0x565d,
                    0x7249, 0x7ffd, 0x5f6b, 0x2b6a, 0x52eb}};
}

int GlyphFont::popcount(int glyph) const {
  return std::popcount(static_cast<unsigned>(bitmaps[static_cast<std::size_t>(glyph)]));
}

int GlyphFont::hamming(int glyph, std::uint16_t cell_bits) const {
  return std::popcount(static_cast<unsigned>(bitmaps[static_cast<std::size_t>(glyph)] ^ cell_bits));
}

int GlyphFont::pair_distance(int glyph_a, int glyph_b) const {
  return std::popcount(static_cast<unsigned>(bitmaps[static_cast<std::size_t>(glyph_a)] ^
                                             bitmaps[static_cast<std::size_t>(glyph_b)]));
}

}  // namespace idfm
