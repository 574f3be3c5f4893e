#include "idfm/synthbench.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "idfm/rng.hpp"
#include "json.hpp"

namespace idfm {

namespace {

constexpr std::uint64_t kRenderStream = 0x72656e64ull;
constexpr std::uint64_t kSampleSeedStream = 0x64617461ull;

using Color = std::array<std::uint8_t, 3>;

double luminance(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

double luminance(const Color& c) { return luminance(c[0], c[1], c[2]); }

Color random_color(Rng& rng) {
  return {static_cast<std::uint8_t>(rng.uniform_int(0, 255)), static_cast<std::uint8_t>(rng.uniform_int(0, 255)),
          static_cast<std::uint8_t>(rng.uniform_int(0, 255))};
}

void fill_rect(Image& img, int x0, int y0, int w, int h, const Color& c) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x)
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[static_cast<std::size_t>(ch)];
}

// Flat color bands plus a few simple shapes.
void paint_background(Image& img, Rng& rng) {
  const int bands = rng.uniform_int(2, 4);
  const bool vertical = rng.uniform_int(0, 1) == 1;
  const int extent = vertical ? img.width : img.height;
  int start = 0;
  for (int b = 0; b < bands; ++b) {
    const int end = b == bands - 1 ? extent : std::min(extent, start + rng.uniform_int(1, extent));
    const Color c = random_color(rng);
    if (vertical)
      fill_rect(img, start, 0, std::max(0, end - start), img.height, c);
    else
      fill_rect(img, 0, start, img.width, std::max(0, end - start), c);
    start = end;
    if (start >= extent) break;
  }
  const int shapes = rng.uniform_int(1, 3);
  for (int s = 0; s < shapes; ++s) {
    const Color c = random_color(rng);
    if (rng.uniform_int(0, 1) == 0) {
      const int w = rng.uniform_int(2, std::max(2, img.width / 2));
      const int h = rng.uniform_int(2, std::max(2, img.height / 2));
      const int x = rng.uniform_int(0, img.width - w);
      const int y = rng.uniform_int(0, img.height - h);
      fill_rect(img, x, y, w, h, c);
    } else {
      const int radius = rng.uniform_int(2, std::max(2, img.width / 4));
      const int cx = rng.uniform_int(0, img.width - 1);
      const int cy = rng.uniform_int(0, img.height - 1);
      for (int y = std::max(0, cy - radius); y <= std::min(img.height - 1, cy + radius); ++y)
        for (int x = std::max(0, cx - radius); x <= std::min(img.width - 1, cx + radius); ++x)
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius)
            for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[static_cast<std::size_t>(ch)];
    }
  }
}

std::string random_string(Rng& rng, int len) {
  std::string s;
  for (int i = 0; i < len; ++i) s.push_back(static_cast<char>('A' + rng.uniform_int(0, GlyphFont::kGlyphCount - 1)));
  return s;
}

bool rects_intersect(const BoxSpec& a, const BoxSpec& b) {
  return a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h && b.y < a.y + a.h;
}

int glyph_index(char c) {
  if (c < 'A' || c >= 'A' + GlyphFont::kGlyphCount)
    throw std::invalid_argument(std::string("render: glyph '") + c + "' outside the font");
  return c - 'A';
}

// Otsu threshold over a 256-bin luminance histogram.
int otsu_threshold(const std::vector<int>& hist, int total) {
  double sum_all = 0.0;
  for (int v = 0; v < 256; ++v) sum_all += static_cast<double>(v) * hist[static_cast<std::size_t>(v)];
  double sum_bg = 0.0;
  int count_bg = 0;
  double best_var = -1.0;
  int best_thr = 0;
  for (int thr = 0; thr < 256; ++thr) {
    count_bg += hist[static_cast<std::size_t>(thr)];
    if (count_bg == 0) continue;
    const int count_fg = total - count_bg;
    if (count_fg == 0) break;
    sum_bg += static_cast<double>(thr) * hist[static_cast<std::size_t>(thr)];
    const double mean_bg = sum_bg / count_bg;
    const double mean_fg = (sum_all - sum_bg) / count_fg;
    const double between = static_cast<double>(count_bg) * count_fg * (mean_bg - mean_fg) * (mean_bg - mean_fg);
    if (between > best_var) {
      best_var = between;
      best_thr = thr;
    }
  }
  return best_thr;
}

void validate_box_grid(const Image& img, const BoxSpec& box) {
  if (box.w <= 0 || box.h <= 0 || box.x < 0 || box.y < 0 || box.x + box.w > img.width ||
      box.y + box.h > img.height)
    throw std::invalid_argument("decode: box out of image bounds");
  if (box.x % GlyphFont::kCellW != 0 || box.w % GlyphFont::kCellW != 0 || box.y % GlyphFont::kCellH != 0 ||
      box.h % GlyphFont::kCellH != 0)
    throw std::invalid_argument("decode: box is not aligned to the glyph cell grid");
}

}  // namespace

void render_text_box(Image& img, const BoxSpec& box, const std::string& text, const GlyphFont& font,
                     const Color& fill, const Color& ink) {
  fill_rect(img, box.x, box.y, box.w, box.h, fill);
  const int cells = box.w / GlyphFont::kCellW;
  if (static_cast<int>(text.size()) > cells)
    throw std::invalid_argument("render: string '" + text + "' does not fit the box");
  for (std::size_t i = 0; i < text.size(); ++i) {
    const int g = glyph_index(text[i]);
    const int ox = box.x + static_cast<int>(i) * GlyphFont::kCellW;
    for (int cy = 0; cy < GlyphFont::kGlyphH; ++cy)
      for (int cx = 0; cx < GlyphFont::kGlyphW; ++cx)
        if (font.ink(g, cx, cy))
          for (int ch = 0; ch < 3; ++ch) img.at(ox + cx, box.y + cy, ch) = ink[static_cast<std::size_t>(ch)];
  }
}

std::string decode_glyphs(const Image& image, const BoxSpec& box, const GlyphFont& font) {
  validate_box_grid(image, box);
  // Luminance crop quantized to integer bins, Otsu split over the bins, and
  // polarity fixed by the spacing pixels (the rightmost column and bottom
  // row of every cell are never inked). Classification reuses the same bins
  // so threshold boundaries are consistent.
  auto lum_bin = [&](int x, int y) {
    const double lum = luminance(image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2));
    return std::clamp(static_cast<int>(std::lround(lum)), 0, 255);
  };
  std::vector<int> hist(256, 0);
  double fill_sum = 0.0;
  int fill_count = 0;
  for (int y = box.y; y < box.y + box.h; ++y)
    for (int x = box.x; x < box.x + box.w; ++x) {
      const int bin = lum_bin(x, y);
      ++hist[static_cast<std::size_t>(bin)];
      const int lx = (x - box.x) % GlyphFont::kCellW;
      const int ly = (y - box.y) % GlyphFont::kCellH;
      if (lx == GlyphFont::kCellW - 1 || ly == GlyphFont::kCellH - 1) {
        fill_sum += bin;
        ++fill_count;
      }
    }
  const int thr = otsu_threshold(hist, box.w * box.h);
  const bool fill_side = std::lround(fill_sum / fill_count) > thr;

  std::string out;
  const int cell_rows = box.h / GlyphFont::kCellH;
  const int cell_cols = box.w / GlyphFont::kCellW;
  for (int cr = 0; cr < cell_rows; ++cr)
    for (int cc = 0; cc < cell_cols; ++cc) {
      std::uint16_t bits = 0;
      for (int cy = 0; cy < GlyphFont::kGlyphH; ++cy)
        for (int cx = 0; cx < GlyphFont::kGlyphW; ++cx) {
          const int x = box.x + cc * GlyphFont::kCellW + cx;
          const int y = box.y + cr * GlyphFont::kCellH + cy;
          const bool is_ink = (lum_bin(x, y) > thr) != fill_side;
          if (is_ink) bits |= static_cast<std::uint16_t>(1u << (cy * GlyphFont::kGlyphW + cx));
        }
      int best = std::popcount(static_cast<unsigned>(bits));  // empty pattern
      int best_glyph = -1;
      for (int g = 0; g < GlyphFont::kGlyphCount; ++g) {
        const int d = font.hamming(g, bits);
        if (d < best) {
          best = d;
          best_glyph = g;
        }
      }
      if (best_glyph >= 0) out.push_back(static_cast<char>('A' + best_glyph));
    }
  return out;
}

EditSample render_sample(std::uint64_t seed, const SynthConfig& config, const GlyphFont& font) {
  if (config.image_w % GlyphFont::kCellW != 0 || config.image_h % GlyphFont::kCellH != 0)
    throw std::invalid_argument("synth config: image must be a multiple of the glyph cell size");
  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    Rng rng(derive_seed(seed, kRenderStream, static_cast<std::uint64_t>(attempt)));
    EditSample sample;
    sample.seed = seed;
    sample.ref = Image(config.image_w, config.image_h, 3);
    paint_background(sample.ref, rng);

    const int n = rng.uniform_int(1, config.max_boxes);
    const bool allow_overlap = rng.uniform() < config.p_overlap;
    bool placed_all = true;
    for (int b = 0; b < n && placed_all; ++b) {
      const int len_src = rng.uniform_int(config.min_str_len, config.max_str_len);
      const int len_tgt = rng.uniform_int(config.min_str_len, config.max_str_len);
      BoxSpec box;
      box.src = random_string(rng, len_src);
      do {
        box.tgt = random_string(rng, len_tgt);
      } while (box.tgt == box.src);
      const int cells = std::max(len_src, len_tgt);
      box.w = cells * GlyphFont::kCellW;
      box.h = GlyphFont::kCellH;
      const int max_cx = (config.image_w - box.w) / GlyphFont::kCellW;
      const int max_cy = (config.image_h - box.h) / GlyphFont::kCellH;
      if (box.w > config.image_w || box.h > config.image_h) {
        placed_all = false;
        break;
      }
      bool placed = false;
      for (int tries = 0; tries < 40 && !placed; ++tries) {
        box.x = rng.uniform_int(0, max_cx) * GlyphFont::kCellW;
        box.y = rng.uniform_int(0, max_cy) * GlyphFont::kCellH;
        placed = allow_overlap ||
                 std::none_of(sample.boxes.begin(), sample.boxes.end(),
                              [&](const BoxSpec& other) { return rects_intersect(box, other); });
      }
      if (!placed) {
        placed_all = false;
        break;
      }
      sample.boxes.push_back(box);
    }
    if (!placed_all) continue;

    sample.target = sample.ref;
    bool decodable = true;
    std::vector<Color> fills, inks;
    for (const BoxSpec& box : sample.boxes) {
      // Fill/ink need real luminance contrast for the decoder.
      Color fill = random_color(rng), ink = random_color(rng);
      for (int tries = 0; tries < 20 && std::abs(luminance(fill) - luminance(ink)) < 80.0; ++tries)
        ink = random_color(rng);
      if (std::abs(luminance(fill) - luminance(ink)) < 80.0) {
        fill = {240, 240, 240};
        ink = {16, 16, 16};
      }
      fills.push_back(fill);
      inks.push_back(ink);
    }
    for (std::size_t b = 0; b < sample.boxes.size(); ++b) {
      render_text_box(sample.ref, sample.boxes[b], sample.boxes[b].src, font, fills[b], inks[b]);
      render_text_box(sample.target, sample.boxes[b], sample.boxes[b].tgt, font, fills[b], inks[b]);
    }
    for (const BoxSpec& box : sample.boxes) {
      if (decode_glyphs(sample.ref, box, font) != box.src || decode_glyphs(sample.target, box, font) != box.tgt) {
        decodable = false;
        break;
      }
    }
    if (decodable) return sample;
  }
  throw std::runtime_error("render_sample: no decodable arrangement after bounded retries (seed " +
                           std::to_string(seed) + ")");
}

namespace {

std::string sample_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06d", index);
  return buf;
}

nlohmann::json box_to_json(const BoxSpec& b) {
  return {{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}, {"src", b.src}, {"tgt", b.tgt}};
}

}  // namespace

std::string instruction_json(const std::string& image_name, const std::vector<BoxSpec>& boxes) {
  nlohmann::json j;
  j["image"] = image_name;
  j["boxes"] = nlohmann::json::array();
  for (const BoxSpec& b : boxes) j["boxes"].push_back(box_to_json(b));
  return j.dump(2) + "\n";
}

Instructions parse_instruction_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // Report the line of the offending byte.
    std::size_t line = 1;
    for (std::size_t i = 0; i < e.byte && i < text.size(); ++i)
      if (text[i] == '\n') ++line;
    throw std::invalid_argument("instructions: parse error at line " + std::to_string(line) + ": " + e.what());
  }
  auto fail = [](const std::string& field, const std::string& what) {
    throw std::invalid_argument("instructions: " + field + ": " + what);
  };
  if (!j.is_object()) fail("$", "expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "image" && key != "boxes") fail(key, "unknown field");
  if (!j.contains("image") || !j["image"].is_string()) fail("image", "expected a string");
  if (!j.contains("boxes") || !j["boxes"].is_array()) fail("boxes", "expected an array");

  Instructions ins;
  ins.image = j["image"].get<std::string>();
  int idx = 0;
  for (const auto& jb : j["boxes"]) {
    const std::string where = "boxes[" + std::to_string(idx) + "]";
    if (!jb.is_object()) fail(where, "expected an object");
    for (const auto& [key, _] : jb.items())
      if (key != "x" && key != "y" && key != "w" && key != "h" && key != "src" && key != "tgt")
        fail(where + "." + key, "unknown field");
    BoxSpec b;
    auto get_int = [&](const char* name, int min_value) {
      if (!jb.contains(name) || !jb[name].is_number_integer())
        fail(where + "." + name, "expected an integer");
      const int v = jb[name].get<int>();
      if (v < min_value) fail(where + "." + name, "must be >= " + std::to_string(min_value));
      return v;
    };
    b.x = get_int("x", 0);
    b.y = get_int("y", 0);
    b.w = get_int("w", 1);
    b.h = get_int("h", 1);
    auto get_str = [&](const char* name) {
      if (!jb.contains(name) || !jb[name].is_string()) fail(where + "." + name, "expected a string");
      return jb[name].get<std::string>();
    };
    b.src = get_str("src");
    b.tgt = get_str("tgt");
    ins.boxes.push_back(std::move(b));
    ++idx;
  }
  return ins;
}

Instructions load_instruction_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open instructions: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_instruction_json(text);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

DatasetSummary gen_dataset(int n_train, int n_test, std::uint64_t seed, const std::string& out_dir,
                           const SynthConfig& config) {
  if (n_train < 0 || n_test < 0 || n_train + n_test == 0)
    throw std::invalid_argument("gen_dataset: need a positive sample count");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "train");
  fs::create_directories(fs::path(out_dir) / "test");

  const int total = n_train + n_test;
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) seeds[static_cast<std::size_t>(i)] = derive_seed(seed, kSampleSeedStream, i);

  // Split by seed hash: order indices by the mix of their sample seed.
  std::vector<int> order(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const std::uint64_t ha = mix64(seeds[static_cast<std::size_t>(a)]);
    const std::uint64_t hb = mix64(seeds[static_cast<std::size_t>(b)]);
    return ha != hb ? ha < hb : a < b;
  });
  std::vector<std::string> splits(static_cast<std::size_t>(total));
  for (int rank = 0; rank < total; ++rank)
    splits[static_cast<std::size_t>(order[static_cast<std::size_t>(rank)])] = rank < n_train ? "train" : "test";

  const GlyphFont font = GlyphFont::standard();
  nlohmann::json manifest;
  manifest["seed"] = seed;
  manifest["n_train"] = n_train;
  manifest["n_test"] = n_test;
  manifest["config"] = {{"image_w", config.image_w},   {"image_h", config.image_h},
                        {"max_boxes", config.max_boxes}, {"min_str_len", config.min_str_len},
                        {"max_str_len", config.max_str_len}, {"p_overlap", config.p_overlap}};
  manifest["samples"] = nlohmann::json::array();

  for (int i = 0; i < total; ++i) {
    const EditSample s = render_sample(seeds[static_cast<std::size_t>(i)], config, font);
    const std::string id = sample_id(i);
    const fs::path dir = fs::path(out_dir) / splits[static_cast<std::size_t>(i)];
    write_ppm(s.ref, (dir / (id + "_ref.ppm")).string());
    write_ppm(s.target, (dir / (id + "_tgt.ppm")).string());
    std::ofstream ins(dir / (id + ".json"));
    ins << instruction_json(id + "_ref.ppm", s.boxes);
    manifest["samples"].push_back({{"id", id},
                                   {"split", splits[static_cast<std::size_t>(i)]},
                                   {"seed", seeds[static_cast<std::size_t>(i)]},
                                   {"boxes", s.boxes.size()}});
  }

  DatasetSummary summary;
  summary.n_train = n_train;
  summary.n_test = n_test;
  summary.manifest_path = (fs::path(out_dir) / "manifest.json").string();
  std::ofstream mf(summary.manifest_path);
  mf << manifest.dump(2) << "\n";
  if (!mf) throw std::runtime_error("gen_dataset: cannot write manifest");
  return summary;
}

std::vector<PairedExample> load_dataset(const std::string& dataset_dir, const std::string& split) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::path(dataset_dir) / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot open manifest: " + manifest_path.string());
  nlohmann::json manifest = nlohmann::json::parse(mf);

  std::vector<PairedExample> out;
  for (const auto& js : manifest.at("samples")) {
    if (js.at("split").get<std::string>() != split) continue;
    const std::string id = js.at("id").get<std::string>();
    const fs::path dir = fs::path(dataset_dir) / split;
    PairedExample ex;
    ex.ref = read_ppm((dir / (id + "_ref.ppm")).string());
    ex.target = read_ppm((dir / (id + "_tgt.ppm")).string());
    ex.boxes = load_instruction_file((dir / (id + ".json")).string()).boxes;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace idfm
