#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "idfm/image.hpp"
#include "idfm/partition.hpp"

namespace idfm {

int levenshtein(const std::string& a, const std::string& b);

// Levenshtein(pred, tgt) / |tgt|. An empty target is defined as |pred|
// errors over length 1; callers can detect that case up front and flag it.
double cer(const std::string& pred, const std::string& tgt);

// Model CER minus the CER of the ground-truth rendering under the same
// decoder. May be negative.
double delta_cer(double model_cer, double gt_render_cer);

// MAE and MSE over the pixels outside the union of the boxes, averaged over
// channels; pixel values on the 0..255 scale.
struct RegionError {
  double mae = 0.0;
  double mse = 0.0;
};
RegionError region_mae_mse(const Image& ref, const Image& edited, const std::vector<BoxSpec>& boxes);

// Percentage of boxes whose crop MAE against the reference strictly exceeds
// the threshold ("exceeds" read literally: equality does not count).
double attempt_rate(const Image& ref, const Image& edited, const std::vector<BoxSpec>& boxes,
                    double threshold = 10.0);

// Mean SSIM (Gaussian 7x7 window, sigma 1.5, K1=0.01, K2=0.03, L=255) over
// all windows lying fully inside the background mask, averaged over
// channels. Throws if no window fits.
double ssim_region(const Image& ref, const Image& edited, const std::vector<std::uint8_t>& background_mask);

std::vector<std::uint8_t> background_mask_from_boxes(int width, int height, const std::vector<BoxSpec>& boxes);

// Sequential Elo with expected score 1/(1 + 10^((Rb-Ra)/400)). Outcomes are
// shuffled once per epoch by the seeded generator, then applied in order.
enum class GameResult { a_wins, b_wins, draw };
struct GameOutcome {
  std::string a;
  std::string b;
  GameResult result = GameResult::draw;
};
struct EloConfig {
  double k = 32.0;
  double initial = 1200.0;
  int epochs = 1;
  std::uint64_t seed = 0;
};
std::map<std::string, double> elo(const std::vector<GameOutcome>& outcomes, const EloConfig& config = {});

// Per-sample scores and their arithmetic means, grouped by edit count.
struct SampleScores {
  std::string id;
  int n_boxes = 0;
  double cer = 0.0;
  double delta_cer = 0.0;
  double mae_b = 0.0;
  double mse_b = 0.0;
  double ssim_b = 0.0;
  bool ssim_valid = true;
  double attempt_rate = 0.0;
  int empty_targets = 0;
};
struct AggregateScores {
  double cer = 0.0;
  double delta_cer = 0.0;
  double mae_b = 0.0;
  double mse_b = 0.0;
  double ssim_b = 0.0;  // over samples with a defined SSIM only
  double attempt_rate = 0.0;
  int count = 0;
  int ssim_count = 0;
};
struct EvalReport {
  std::vector<SampleScores> samples;
  AggregateScores total;
  std::map<int, AggregateScores> by_edit_count;

  static EvalReport aggregate(std::vector<SampleScores> samples);
};

}  // namespace idfm
