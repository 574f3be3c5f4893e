#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "idfm/metrics.hpp"
#include "idfm/rng.hpp"
#include "idfm/synthbench.hpp"

using namespace idfm;
namespace fs = std::filesystem;

namespace {

BoxSpec cell_box(int x, int y, int cells) {
  BoxSpec b;
  b.x = x;
  b.y = y;
  b.w = cells * GlyphFont::kCellW;
  b.h = GlyphFont::kCellH;
  return b;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("font bitmaps are distinct, well separated and heavy enough to decode") {
  const GlyphFont font = GlyphFont::standard();
  for (int a = 0; a < GlyphFont::kGlyphCount; ++a) {
    CHECK(font.popcount(a) >= 3);
    for (int b = a + 1; b < GlyphFont::kGlyphCount; ++b) CHECK(font.pair_distance(a, b) >= 3);
  }
}

TEST_CASE("render and decode round-trip exhaustively for short strings") {
  const GlyphFont font = GlyphFont::standard();
  const std::string alphabet = "ABCDEFGHIJKLMNOP";
  Image img(48, 12, 3);
  for (auto& p : img.pixels) p = 90;
  // Length 1 and 2: every string over the alphabet.
  for (char a : alphabet) {
    const BoxSpec box = cell_box(0, 0, 2);
    render_text_box(img, box, std::string(1, a), font, {230, 230, 230}, {20, 20, 20});
    CHECK(decode_glyphs(img, box, font) == std::string(1, a));
    for (char b : alphabet) {
      const std::string s = {a, b};
      render_text_box(img, box, s, font, {230, 230, 230}, {20, 20, 20});
      CHECK(decode_glyphs(img, box, font) == s);
    }
  }
}

TEST_CASE("random longer strings round-trip with random contrasting colors") {
  const GlyphFont font = GlyphFont::standard();
  Rng rng(41);
  Image img(48, 12, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const int len = rng.uniform_int(1, 6);
    std::string s;
    for (int i = 0; i < len; ++i) s.push_back(static_cast<char>('A' + rng.uniform_int(0, 15)));
    auto color = [&] {
      return std::array<std::uint8_t, 3>{static_cast<std::uint8_t>(rng.uniform_int(0, 255)),
                                         static_cast<std::uint8_t>(rng.uniform_int(0, 255)),
                                         static_cast<std::uint8_t>(rng.uniform_int(0, 255))};
    };
    auto lum = [](const std::array<std::uint8_t, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; };
    std::array<std::uint8_t, 3> fill = color(), ink = color();
    while (std::abs(lum(fill) - lum(ink)) < 80.0) ink = color();
    const BoxSpec box = cell_box(0, 0, 6);
    render_text_box(img, box, s, font, fill, ink);
    CHECK(decode_glyphs(img, box, font) == s);
  }
}

TEST_CASE("an all-background crop decodes to the empty string") {
  const GlyphFont font = GlyphFont::standard();
  Image img(24, 12, 3);
  for (auto& p : img.pixels) p = 77;
  CHECK(decode_glyphs(img, cell_box(0, 0, 3), font).empty());
}

TEST_CASE("decoding survives one flipped pixel per cell") {
  const GlyphFont font = GlyphFont::standard();
  const std::array<std::uint8_t, 3> fill = {235, 235, 235}, ink = {25, 25, 25};
  for (int g = 0; g < GlyphFont::kGlyphCount; ++g) {
    for (int py = 0; py < GlyphFont::kCellH; ++py)
      for (int px = 0; px < GlyphFont::kCellW; ++px) {
        Image img(8, 6, 3);
        for (auto& p : img.pixels) p = 128;
        const BoxSpec box = cell_box(0, 0, 2);
        const std::string s(1, static_cast<char>('A' + g));
        render_text_box(img, box, s, font, fill, ink);
        // Flip one pixel of the glyph cell to the opposite color.
        const bool was_ink = px < GlyphFont::kGlyphW && py < GlyphFont::kGlyphH && font.ink(g, px, py);
        const auto& replacement = was_ink ? fill : ink;
        for (int c = 0; c < 3; ++c) img.at(px, py, c) = replacement[static_cast<std::size_t>(c)];
        CHECK(decode_glyphs(img, box, font) == s);
      }
  }
  // A flip in an empty cell still decodes to nothing.
  Image img(8, 6, 3);
  const BoxSpec box = cell_box(0, 0, 2);
  render_text_box(img, box, "", font, fill, ink);
  for (int c = 0; c < 3; ++c) img.at(1, 1, c) = ink[static_cast<std::size_t>(c)];
  CHECK(decode_glyphs(img, box, font).empty());
}

TEST_CASE("decode rejects off-grid boxes") {
  const GlyphFont font = GlyphFont::standard();
  Image img(24, 12, 3);
  BoxSpec bad = cell_box(0, 0, 2);
  bad.x = 2;  // not a multiple of the cell width
  CHECK_THROWS_AS(decode_glyphs(img, bad, font), std::invalid_argument);
  BoxSpec oob = cell_box(20, 0, 2);
  CHECK_THROWS_AS(decode_glyphs(img, oob, font), std::invalid_argument);
}

TEST_CASE("render_sample is deterministic and local to its boxes") {
  const GlyphFont font = GlyphFont::standard();
  const SynthConfig config;
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 99ull}) {
    const EditSample a = render_sample(seed, config, font);
    const EditSample b = render_sample(seed, config, font);
    CHECK(a.ref == b.ref);
    CHECK(a.target == b.target);
    CHECK(a.boxes == b.boxes);

    // Pixels differ only inside the union of the boxes.
    const std::vector<std::uint8_t> bg = background_mask_from_boxes(a.ref.width, a.ref.height, a.boxes);
    for (int y = 0; y < a.ref.height; ++y)
      for (int x = 0; x < a.ref.width; ++x)
        if (bg[static_cast<std::size_t>(y) * a.ref.width + x])
          for (int c = 0; c < 3; ++c) CHECK(a.ref.at(x, y, c) == a.target.at(x, y, c));

    for (const BoxSpec& box : a.boxes) {
      CHECK(box.src != box.tgt);
      CHECK(box.x % GlyphFont::kCellW == 0);
      CHECK(box.y % GlyphFont::kCellH == 0);
      CHECK(!box.src.empty());
      CHECK(box.src.size() <= 6);
      CHECK(!box.tgt.empty());
      CHECK(box.tgt.size() <= 6);
    }
    CHECK(!a.boxes.empty());
    CHECK(a.boxes.size() <= static_cast<std::size_t>(config.max_boxes));
  }
}

TEST_CASE("ground truth scores zero error under the decoder") {
  const GlyphFont font = GlyphFont::standard();
  const SynthConfig config;
  for (std::uint64_t seed = 10; seed < 40; ++seed) {
    const EditSample s = render_sample(seed, config, font);
    for (const BoxSpec& box : s.boxes) {
      CHECK(cer(decode_glyphs(s.ref, box, font), box.src) == 0.0);
      const double gt_cer = cer(decode_glyphs(s.target, box, font), box.tgt);
      CHECK(gt_cer == 0.0);
      CHECK(delta_cer(gt_cer, gt_cer) == 0.0);
    }
  }
}

TEST_CASE("impossible layouts raise a generation error") {
  const GlyphFont font = GlyphFont::standard();
  SynthConfig config;
  config.image_w = 8;   // two cells wide
  config.image_h = 6;   // one cell row
  config.min_str_len = 3;  // needs 12 pixels of width
  config.max_str_len = 3;
  CHECK_THROWS_AS(render_sample(5, config, font), std::runtime_error);
}

TEST_CASE("dataset generation reproduces byte-identical files") {
  const fs::path dir_a = fs::temp_directory_path() / "idfm_ds_a";
  const fs::path dir_b = fs::temp_directory_path() / "idfm_ds_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  SynthConfig config;
  config.max_boxes = 3;
  gen_dataset(5, 2, 77, dir_a.string(), config);
  gen_dataset(5, 2, 77, dir_b.string(), config);

  int files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir_a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir_a);
    CHECK(read_bytes(entry.path()) == read_bytes(dir_b / rel));
    ++files;
  }
  CHECK(files == 7 * 3 + 1);  // ref + tgt + json per sample, plus manifest

  // The loader returns exactly the split sizes with intact pairing.
  const std::vector<PairedExample> train = load_dataset(dir_a.string(), "train");
  const std::vector<PairedExample> test = load_dataset(dir_a.string(), "test");
  CHECK(train.size() == 5);
  CHECK(test.size() == 2);
  const GlyphFont font = GlyphFont::standard();
  for (const PairedExample& ex : train) {
    CHECK(!ex.boxes.empty());
    for (const BoxSpec& box : ex.boxes) CHECK(decode_glyphs(ex.target, box, font) == box.tgt);
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("instruction json round-trips and rejects malformed input with diagnostics") {
  std::vector<BoxSpec> boxes(1);
  boxes[0] = cell_box(4, 6, 2);
  boxes[0].src = "AB";
  boxes[0].tgt = "CD";
  const std::string text = instruction_json("ref.ppm", boxes);
  const Instructions ins = parse_instruction_json(text);
  CHECK(ins.image == "ref.ppm");
  CHECK(ins.boxes == boxes);

  CHECK_THROWS_WITH_AS(parse_instruction_json("{\"image\": 3, \"boxes\": []}"),
                       doctest::Contains("image"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_instruction_json("{\"image\": \"x\", \"boxes\": [{\"x\":0}]}"),
                       doctest::Contains("boxes[0]"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_instruction_json("{\"image\": \"x\", \"boxes\": [], \"extra\": 1}"),
                       doctest::Contains("extra"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_instruction_json("{\n\n  broken"), doctest::Contains("line 3"),
                       std::invalid_argument);
}
