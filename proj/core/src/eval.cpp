#include "idfm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "idfm/config.hpp"
#include "idfm/rng.hpp"
#include "idfm/threadpool.hpp"
#include "json.hpp"

namespace idfm {

namespace {

constexpr std::uint64_t kEvalStream = 0x6576616cull;

SamplerConfig make_sampler(const ModelState& model, const EvalOptions& options) {
  SamplerConfig sampler;
  sampler.steps = options.sampler_steps;
  sampler.schedule = schedule_from_spec(options.schedule, model.config);
  sampler.use_masks = options.use_masks;
  return sampler;
}

int effective_count(const std::vector<PairedExample>& test, const EvalOptions& options) {
  const int n = static_cast<int>(test.size());
  return options.limit > 0 ? std::min(options.limit, n) : n;
}

}  // namespace

EvalReport evaluate_model(const ModelState& model, const std::vector<PairedExample>& test,
                          const EvalOptions& options) {
  const int n = effective_count(test, options);
  const SamplerConfig sampler = make_sampler(model, options);
  const GlyphFont font = GlyphFont::standard();
  const int workers = options.workers > 0 ? options.workers : default_worker_count();

  std::vector<SampleScores> scores(static_cast<std::size_t>(n));
  parallel_for_items(n, workers, [&](int i) {
    const PairedExample& ex = test[static_cast<std::size_t>(i)];
    const std::uint64_t sample_seed = derive_seed(options.seed, kEvalStream, static_cast<std::uint64_t>(i));
    const Image edited = sample_edit(model, ex.ref, ex.boxes, sampler, sample_seed);

    SampleScores s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%06d", i);
    s.id = buf;
    s.n_boxes = static_cast<int>(ex.boxes.size());
    double cer_sum = 0.0, gt_cer_sum = 0.0;
    for (const BoxSpec& box : ex.boxes) {
      if (box.tgt.empty()) ++s.empty_targets;
      cer_sum += cer(decode_glyphs(edited, box, font), box.tgt);
      gt_cer_sum += cer(decode_glyphs(ex.target, box, font), box.tgt);
    }
    const int nb = std::max<int>(1, static_cast<int>(ex.boxes.size()));
    s.cer = cer_sum / nb;
    s.delta_cer = delta_cer(s.cer, gt_cer_sum / nb);
    const RegionError bg = region_mae_mse(ex.ref, edited, ex.boxes);
    s.mae_b = bg.mae;
    s.mse_b = bg.mse;
    const std::vector<std::uint8_t> mask = background_mask_from_boxes(ex.ref.width, ex.ref.height, ex.boxes);
    try {
      s.ssim_b = ssim_region(ex.ref, edited, mask);
    } catch (const std::domain_error&) {
      s.ssim_valid = false;
      s.ssim_b = 0.0;
    }
    s.attempt_rate = attempt_rate(ex.ref, edited, ex.boxes);
    scores[static_cast<std::size_t>(i)] = std::move(s);
  });
  return EvalReport::aggregate(std::move(scores));
}

bool leakage_probe(const ModelState& model, const PairedExample& example, const EvalOptions& options,
                   std::uint64_t sample_seed, double* out_change) {
  int first = -1, second = -1;
  for (std::size_t i = 0; i < example.boxes.size() && second < 0; ++i)
    for (std::size_t j = i + 1; j < example.boxes.size(); ++j)
      if (example.boxes[i].tgt != example.boxes[j].tgt) {
        first = static_cast<int>(i);
        second = static_cast<int>(j);
        break;
      }
  if (second < 0) return false;

  const SamplerConfig sampler = make_sampler(model, options);
  std::vector<BoxSpec> swapped = example.boxes;
  std::swap(swapped[static_cast<std::size_t>(first)].tgt, swapped[static_cast<std::size_t>(second)].tgt);

  const Image base = sample_edit(model, example.ref, example.boxes, sampler, sample_seed);
  const Image probe = sample_edit(model, example.ref, swapped, sampler, sample_seed);

  // Mean absolute change outside the two swapped boxes.
  const std::vector<BoxSpec> swapped_pair = {example.boxes[static_cast<std::size_t>(first)],
                                             example.boxes[static_cast<std::size_t>(second)]};
  const std::vector<std::uint8_t> outside = background_mask_from_boxes(base.width, base.height, swapped_pair);
  double sum = 0.0;
  std::int64_t count = 0;
  for (int y = 0; y < base.height; ++y)
    for (int x = 0; x < base.width; ++x) {
      if (!outside[static_cast<std::size_t>(y) * base.width + x]) continue;
      for (int c = 0; c < 3; ++c) {
        sum += std::abs(static_cast<double>(base.at(x, y, c)) - static_cast<double>(probe.at(x, y, c)));
        ++count;
      }
    }
  *out_change = count > 0 ? sum / count : 0.0;
  return true;
}

double mean_leakage(const ModelState& model, const std::vector<PairedExample>& test, const EvalOptions& options) {
  const int n = effective_count(test, options);
  const int workers = options.workers > 0 ? options.workers : default_worker_count();
  std::vector<double> change(static_cast<std::size_t>(n), -1.0);
  parallel_for_items(n, workers, [&](int i) {
    double value = 0.0;
    const std::uint64_t sample_seed = derive_seed(options.seed, kEvalStream, static_cast<std::uint64_t>(i));
    if (leakage_probe(model, test[static_cast<std::size_t>(i)], options, sample_seed, &value))
      change[static_cast<std::size_t>(i)] = value;
  });
  double total = 0.0;
  int counted = 0;
  for (double v : change)
    if (v >= 0.0) {
      total += v;
      ++counted;
    }
  return counted > 0 ? total / counted : 0.0;
}

std::vector<AblationRow> ablation_table(const ModelState& model, const std::vector<PairedExample>& test,
                                        const EvalOptions& options) {
  std::vector<AblationRow> rows;
  const char* names[2] = {"dis", "har"};
  for (int e = 0; e < 2; ++e)
    for (int m = 0; m < 2; ++m)
      for (int l = 0; l < 2; ++l) {
        EvalOptions opt = options;
        opt.schedule = std::string(names[e]) + "-" + names[m] + "-" + names[l];
        opt.use_masks = true;
        AblationRow row;
        row.name = opt.schedule;
        row.scores = evaluate_model(model, test, opt).total;
        rows.push_back(std::move(row));
      }
  return rows;
}

namespace {

nlohmann::json aggregate_json(const AggregateScores& a) {
  return {{"cer", a.cer},     {"delta_cer", a.delta_cer}, {"mae_b", a.mae_b},
          {"mse_b", a.mse_b}, {"ssim_b", a.ssim_b},       {"attempt_rate", a.attempt_rate},
          {"count", a.count}};
}

}  // namespace

std::string report_json(const EvalReport& report) {
  nlohmann::json j;
  j["aggregate"] = aggregate_json(report.total);
  j["by_edit_count"] = nlohmann::json::object();
  for (const auto& [n, agg] : report.by_edit_count) j["by_edit_count"][std::to_string(n)] = aggregate_json(agg);
  j["samples"] = nlohmann::json::array();
  for (const SampleScores& s : report.samples)
    j["samples"].push_back({{"id", s.id},
                            {"n_boxes", s.n_boxes},
                            {"cer", s.cer},
                            {"delta_cer", s.delta_cer},
                            {"mae_b", s.mae_b},
                            {"mse_b", s.mse_b},
                            {"ssim_b", s.ssim_b},
                            {"ssim_valid", s.ssim_valid},
                            {"attempt_rate", s.attempt_rate},
                            {"empty_targets", s.empty_targets}});
  return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "id,n_boxes,cer,delta_cer,mae_b,mse_b,ssim_b,attempt_rate\n";
  for (const SampleScores& s : report.samples)
    os << s.id << ',' << s.n_boxes << ',' << s.cer << ',' << s.delta_cer << ',' << s.mae_b << ',' << s.mse_b
       << ',' << s.ssim_b << ',' << s.attempt_rate << '\n';
  return os.str();
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const AblationRow& row : rows) {
    nlohmann::json r = aggregate_json(row.scores);
    r["schedule"] = row.name;
    j["rows"].push_back(r);
  }
  return j.dump(2) + "\n";
}

std::string ablation_text_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "schedule       CER      MAE_B    AR[%]\n";
  for (const AblationRow& row : rows) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-13s %8.4f %8.3f %8.2f\n", row.name.c_str(), row.scores.cer,
                  row.scores.mae_b, row.scores.attempt_rate);
    os << line;
  }
  return os.str();
}

}  // namespace idfm
