#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "idfm/flow.hpp"
#include "idfm/font.hpp"
#include "idfm/image.hpp"
#include "idfm/partition.hpp"

namespace idfm {

struct SynthConfig {
  int image_w = 48;
  int image_h = 48;
  int max_boxes = 4;
  int min_str_len = 1;
  int max_str_len = 6;
  double p_overlap = 0.1;  // chance a sample may place pixel-overlapping boxes
  int max_attempts = 50;   // regeneration attempts before giving up
};

// One paired edit: reference renders the source strings, target renders the
// target strings in the same boxes/colors, everything outside the box union
// is pixel-identical. Boxes lie on the glyph cell grid and every rendered
// string decodes back exactly (samples are verified at generation time).
struct EditSample {
  Image ref;
  Image target;
  std::vector<BoxSpec> boxes;
  std::uint64_t seed = 0;
};

EditSample render_sample(std::uint64_t seed, const SynthConfig& config, const GlyphFont& font);

// Template-matching decoder: per glyph cell, binarize the crop by an Otsu
// threshold on luminance (polarity fixed against the cell-spacing fill
// estimate), then pick the glyph bitmap with minimum Hamming distance;
// cells matching the empty pattern best emit nothing.
std::string decode_glyphs(const Image& image, const BoxSpec& box, const GlyphFont& font);

// Renders `text` into an existing image at the box position using the given
// colors; exposed for decoder tests.
void render_text_box(Image& img, const BoxSpec& box, const std::string& text, const GlyphFont& font,
                     const std::array<std::uint8_t, 3>& fill, const std::array<std::uint8_t, 3>& ink);

// Dataset on disk: <out>/train and <out>/test with one PPM pair and one
// instruction JSON per sample, plus a manifest. The split assigns samples
// by the hash order of their per-sample seeds.
struct DatasetSummary {
  int n_train = 0;
  int n_test = 0;
  std::string manifest_path;
};
DatasetSummary gen_dataset(int n_train, int n_test, std::uint64_t seed, const std::string& out_dir,
                           const SynthConfig& config);

std::vector<PairedExample> load_dataset(const std::string& dataset_dir, const std::string& split);

// Instruction JSON ({"image": ..., "boxes": [...]}) shared by the dataset
// files and the edit CLI. Parsing is strict and reports the offending field.
std::string instruction_json(const std::string& image_name, const std::vector<BoxSpec>& boxes);
struct Instructions {
  std::string image;
  std::vector<BoxSpec> boxes;
};
Instructions parse_instruction_json(const std::string& text);
Instructions load_instruction_file(const std::string& path);

}  // namespace idfm
