#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "idfm/flow.hpp"
#include "idfm/metrics.hpp"
#include "idfm/model.hpp"
#include "idfm/synthbench.hpp"

namespace idfm {

struct EvalOptions {
  int sampler_steps = 16;
  std::string schedule = "har-dis-har";
  bool use_masks = true;
  std::uint64_t seed = 0;
  int workers = 0;  // 0 = default
  int limit = 0;    // 0 = all samples
};

// Runs a full edit on every test sample and scores it: decoded-text CER and
// its delta against the ground-truth render, background MAE/MSE/SSIM against
// the reference, and the attempt rate. Samples fan out across workers; the
// report is ordered by sample id.
EvalReport evaluate_model(const ModelState& model, const std::vector<PairedExample>& test,
                          const EvalOptions& options);

// Prompt-swap leakage probe: swap the target strings of the first two boxes
// with distinct targets, rerun the edit with the same seed, and measure the
// mean absolute pixel change outside those two boxes. Returns false when
// the sample has no such pair.
bool leakage_probe(const ModelState& model, const PairedExample& example, const EvalOptions& options,
                   std::uint64_t sample_seed, double* out_change);

// Mean leakage over all probeable samples.
double mean_leakage(const ModelState& model, const std::vector<PairedExample>& test, const EvalOptions& options);

struct AblationRow {
  std::string name;  // e.g. "har-dis-har"
  AggregateScores scores;
};

// Evaluates every early/mid/late regime assignment (8 rows).
std::vector<AblationRow> ablation_table(const ModelState& model, const std::vector<PairedExample>& test,
                                        const EvalOptions& options);

std::string report_json(const EvalReport& report);
std::string report_csv(const EvalReport& report);
std::string ablation_json(const std::vector<AblationRow>& rows);
std::string ablation_text_table(const std::vector<AblationRow>& rows);

}  // namespace idfm
