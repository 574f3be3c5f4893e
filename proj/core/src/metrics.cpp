#include "idfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "idfm/rng.hpp"

namespace idfm {

int levenshtein(const std::string& a, const std::string& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double cer(const std::string& pred, const std::string& tgt) {
  if (tgt.empty()) return static_cast<double>(pred.size());
  return static_cast<double>(levenshtein(pred, tgt)) / static_cast<double>(tgt.size());
}

double delta_cer(double model_cer, double gt_render_cer) { return model_cer - gt_render_cer; }

namespace {

void require_same_geometry(const Image& a, const Image& b, const char* op) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw std::invalid_argument(std::string(op) + ": image geometry mismatch");
}

}  // namespace

std::vector<std::uint8_t> background_mask_from_boxes(int width, int height, const std::vector<BoxSpec>& boxes) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(width) * height, 1);
  for (const BoxSpec& box : boxes) {
    const int x1 = std::min(width, box.x + box.w), y1 = std::min(height, box.y + box.h);
    for (int y = std::max(0, box.y); y < y1; ++y)
      for (int x = std::max(0, box.x); x < x1; ++x) mask[static_cast<std::size_t>(y) * width + x] = 0;
  }
  return mask;
}

RegionError region_mae_mse(const Image& ref, const Image& edited, const std::vector<BoxSpec>& boxes) {
  require_same_geometry(ref, edited, "region_mae_mse");
  const std::vector<std::uint8_t> mask = background_mask_from_boxes(ref.width, ref.height, boxes);
  double abs_sum = 0.0, sq_sum = 0.0;
  std::int64_t count = 0;
  for (int y = 0; y < ref.height; ++y)
    for (int x = 0; x < ref.width; ++x) {
      if (!mask[static_cast<std::size_t>(y) * ref.width + x]) continue;
      for (int c = 0; c < ref.channels; ++c) {
        const double d = static_cast<double>(edited.at(x, y, c)) - static_cast<double>(ref.at(x, y, c));
        abs_sum += std::abs(d);
        sq_sum += d * d;
        ++count;
      }
    }
  if (count == 0) return {0.0, 0.0};
  return {abs_sum / count, sq_sum / count};
}

double attempt_rate(const Image& ref, const Image& edited, const std::vector<BoxSpec>& boxes, double threshold) {
  require_same_geometry(ref, edited, "attempt_rate");
  if (boxes.empty()) return 0.0;
  int attempted = 0;
  for (const BoxSpec& box : boxes) {
    double abs_sum = 0.0;
    std::int64_t count = 0;
    for (int y = box.y; y < box.y + box.h; ++y)
      for (int x = box.x; x < box.x + box.w; ++x)
        for (int c = 0; c < ref.channels; ++c) {
          abs_sum += std::abs(static_cast<double>(edited.at(x, y, c)) - static_cast<double>(ref.at(x, y, c)));
          ++count;
        }
    if (count > 0 && abs_sum / count > threshold) ++attempted;
  }
  return 100.0 * attempted / static_cast<double>(boxes.size());
}

double ssim_region(const Image& ref, const Image& edited, const std::vector<std::uint8_t>& background_mask) {
  require_same_geometry(ref, edited, "ssim_region");
  if (background_mask.size() != static_cast<std::size_t>(ref.width) * ref.height)
    throw std::invalid_argument("ssim_region: mask size mismatch");
  constexpr int kWin = 7;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

  double weights[kWin][kWin];
  double wsum = 0.0;
  for (int dy = 0; dy < kWin; ++dy)
    for (int dx = 0; dx < kWin; ++dx) {
      const double ry = dy - kWin / 2, rx = dx - kWin / 2;
      weights[dy][dx] = std::exp(-(rx * rx + ry * ry) / (2.0 * kSigma * kSigma));
      wsum += weights[dy][dx];
    }
  for (auto& row : weights)
    for (double& w : row) w /= wsum;

  double total = 0.0;
  std::int64_t windows = 0;
  for (int y0 = 0; y0 + kWin <= ref.height; ++y0)
    for (int x0 = 0; x0 + kWin <= ref.width; ++x0) {
      bool inside = true;
      for (int dy = 0; dy < kWin && inside; ++dy)
        for (int dx = 0; dx < kWin; ++dx)
          if (!background_mask[static_cast<std::size_t>(y0 + dy) * ref.width + (x0 + dx)]) {
            inside = false;
            break;
          }
      if (!inside) continue;
      for (int c = 0; c < ref.channels; ++c) {
        double mu_x = 0.0, mu_y = 0.0;
        for (int dy = 0; dy < kWin; ++dy)
          for (int dx = 0; dx < kWin; ++dx) {
            mu_x += weights[dy][dx] * ref.at(x0 + dx, y0 + dy, c);
            mu_y += weights[dy][dx] * edited.at(x0 + dx, y0 + dy, c);
          }
        double var_x = 0.0, var_y = 0.0, cov = 0.0;
        for (int dy = 0; dy < kWin; ++dy)
          for (int dx = 0; dx < kWin; ++dx) {
            const double ex = ref.at(x0 + dx, y0 + dy, c) - mu_x;
            const double ey = edited.at(x0 + dx, y0 + dy, c) - mu_y;
            var_x += weights[dy][dx] * ex * ex;
            var_y += weights[dy][dx] * ey * ey;
            cov += weights[dy][dx] * ex * ey;
          }
        total += ((2.0 * mu_x * mu_y + kC1) * (2.0 * cov + kC2)) /
                 ((mu_x * mu_x + mu_y * mu_y + kC1) * (var_x + var_y + kC2));
        ++windows;
      }
    }
  if (windows == 0) throw std::domain_error("ssim_region: no window fits fully inside the background mask");
  return total / static_cast<double>(windows);
}

std::map<std::string, double> elo(const std::vector<GameOutcome>& outcomes, const EloConfig& config) {
  std::map<std::string, double> ratings;
  for (const GameOutcome& g : outcomes) {
    ratings.emplace(g.a, config.initial);
    ratings.emplace(g.b, config.initial);
  }
  std::vector<std::size_t> order(outcomes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, 0x656c6full, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    for (std::size_t idx : order) {
      const GameOutcome& g = outcomes[idx];
      double& ra = ratings.at(g.a);
      double& rb = ratings.at(g.b);
      const double ea = 1.0 / (1.0 + std::pow(10.0, (rb - ra) / 400.0));
      const double eb = 1.0 - ea;
      const double sa = g.result == GameResult::a_wins ? 1.0 : g.result == GameResult::draw ? 0.5 : 0.0;
      const double sb = 1.0 - sa;
      ra += config.k * (sa - ea);
      rb += config.k * (sb - eb);
    }
  }
  return ratings;
}

EvalReport EvalReport::aggregate(std::vector<SampleScores> samples) {
  EvalReport report;
  report.samples = std::move(samples);
  auto accumulate = [](AggregateScores& agg, const SampleScores& s) {
    agg.cer += s.cer;
    agg.delta_cer += s.delta_cer;
    agg.mae_b += s.mae_b;
    agg.mse_b += s.mse_b;
    if (s.ssim_valid) {
      agg.ssim_b += s.ssim_b;
      ++agg.ssim_count;
    }
    agg.attempt_rate += s.attempt_rate;
    ++agg.count;
  };
  auto finish = [](AggregateScores& agg) {
    if (agg.count == 0) return;
    agg.cer /= agg.count;
    agg.delta_cer /= agg.count;
    agg.mae_b /= agg.count;
    agg.mse_b /= agg.count;
    if (agg.ssim_count > 0) agg.ssim_b /= agg.ssim_count;
    agg.attempt_rate /= agg.count;
  };
  for (const SampleScores& s : report.samples) {
    accumulate(report.total, s);
    accumulate(report.by_edit_count[s.n_boxes], s);
  }
  finish(report.total);
  for (auto& [n, agg] : report.by_edit_count) finish(agg);
  return report;
}

}  // namespace idfm
