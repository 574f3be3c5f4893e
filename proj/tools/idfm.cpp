// idfm: flow-matching multi-instance image editing with instance-
// disentangled attention, desk scale. Subcommands cover the full pipeline:
// dataset generation, training, editing, evaluation, mask dumps and Elo
// scoring of pairwise judgments.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "idfm/checkpoint.hpp"
#include "idfm/config.hpp"
#include "idfm/eval.hpp"
#include "idfm/flow.hpp"
#include "idfm/mask_oracle.hpp"
#include "idfm/metrics.hpp"
#include "idfm/synthbench.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace idfm;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

int cmd_gen_data(const std::string& out_dir, int n_train, int n_test, std::uint64_t seed, int max_boxes,
                 double p_overlap) {
  SynthConfig config;
  config.max_boxes = max_boxes;
  config.p_overlap = p_overlap;
  const DatasetSummary summary = gen_dataset(n_train, n_test, seed, out_dir, config);
  std::cout << "dataset written to " << out_dir << ": " << summary.n_train << " train / " << summary.n_test
            << " test samples (manifest " << summary.manifest_path << ")\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
              bool use_lora, const std::string& base_ckpt, const std::string& resume_ckpt, bool unmasked,
              int save_every) {
  RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  fs::create_directories(out_dir);

  ModelState model = ModelState::init(rc.model, rc.seed);
  AdamState adam;
  int start_step = 0;
  bool have_adam = false;

  if (!resume_ckpt.empty()) {
    LoadedCheckpoint loaded = load_model_checkpoint(resume_ckpt);
    if (!(loaded.model.config == rc.model))
      throw std::runtime_error("resume checkpoint config does not match --config");
    model = std::move(loaded.model);
    if (loaded.has_adam) {
      adam = loaded.restore_adam(model);
      start_step = static_cast<int>(loaded.step_count);
      have_adam = true;
    }
  } else if (use_lora) {
    if (!base_ckpt.empty()) {
      LoadedCheckpoint loaded = load_model_checkpoint(base_ckpt);
      model = std::move(loaded.model);
    }
    lora_attach(model, lora_default_targets(model.config), rc.lora_rank, rc.lora_alpha, rc.seed);
  }

  const std::vector<PairedExample> train_set = load_dataset(data_dir, "train");
  const LayerSchedule sched = schedule_from_spec(rc.schedule, rc.model);

  TrainConfig tc;
  tc.adam = rc.adam;
  tc.batch_size = rc.batch_size;
  tc.steps = rc.train_steps;
  tc.seed = rc.seed;
  tc.use_masks = !unmasked;
  Trainer trainer(model, train_set, sched, tc);
  if (have_adam) trainer.adam() = adam;

  const std::string loss_path = (fs::path(out_dir) / "loss.csv").string();
  std::ofstream loss_log(loss_path, start_step > 0 ? std::ios::app : std::ios::trunc);
  if (!loss_log) throw std::runtime_error("cannot write " + loss_path);
  if (start_step == 0) loss_log << "step,loss\n";

  for (int step = start_step; step < tc.steps; ++step) {
    const double loss = trainer.step(step);
    loss_log << step << ',' << loss << '\n';
    loss_log.flush();
    if ((step + 1) % 100 == 0 || step == start_step)
      std::cout << "step " << (step + 1) << "/" << tc.steps << " loss " << loss << std::endl;
    if (save_every > 0 && (step + 1) % save_every == 0 && step + 1 < tc.steps)
      save_model_checkpoint(model, (fs::path(out_dir) / ("step_" + std::to_string(step + 1) + ".ckpt")).string(),
                            &trainer.adam());
  }
  const std::string final_path = (fs::path(out_dir) / "model.ckpt").string();
  save_model_checkpoint(model, final_path, &trainer.adam());
  std::cout << "checkpoint written to " << final_path << "\n";
  return 0;
}

int cmd_edit(const std::string& ckpt_path, const std::string& image_path, const std::string& instructions_path,
             const std::string& out_path, int steps, const std::string& schedule_spec, std::uint64_t seed,
             bool unmasked) {
  LoadedCheckpoint loaded = load_model_checkpoint(ckpt_path);
  const Image ref = read_ppm(image_path);
  const Instructions ins = load_instruction_file(instructions_path);

  SamplerConfig sampler;
  sampler.steps = steps;
  sampler.schedule = schedule_from_spec(schedule_spec, loaded.model.config);
  sampler.use_masks = !unmasked;
  const Image edited = sample_edit(loaded.model, ref, ins.boxes, sampler, seed);
  write_ppm(edited, out_path);
  std::cout << "edited image written to " << out_path << " (" << ins.boxes.size() << " instructions, " << steps
            << " steps)\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& report_path,
             const std::string& csv_path, int steps, const std::string& schedule_spec, std::uint64_t seed,
             int limit, bool ablation, bool unmasked) {
  LoadedCheckpoint loaded = load_model_checkpoint(ckpt_path);
  const std::vector<PairedExample> test_set = load_dataset(data_dir, "test");

  EvalOptions options;
  options.sampler_steps = steps;
  options.schedule = schedule_spec;
  options.use_masks = !unmasked;
  options.seed = seed;
  options.limit = limit;

  if (ablation) {
    const std::vector<AblationRow> rows = ablation_table(loaded.model, test_set, options);
    std::cout << ablation_text_table(rows);
    if (!report_path.empty()) write_text(report_path, ablation_json(rows));
    return 0;
  }
  const EvalReport report = evaluate_model(loaded.model, test_set, options);
  std::cout << "samples " << report.total.count << "  CER " << report.total.cer << "  dCER "
            << report.total.delta_cer << "  MAE_B " << report.total.mae_b << "  MSE_B " << report.total.mse_b
            << "  SSIM_B " << report.total.ssim_b << "  AR% " << report.total.attempt_rate << "\n";
  for (const auto& [n, agg] : report.by_edit_count)
    std::cout << "  edits=" << n << "  CER " << agg.cer << "  AR% " << agg.attempt_rate << "  (" << agg.count
              << " samples)\n";
  if (!report_path.empty()) write_text(report_path, report_json(report));
  if (!csv_path.empty()) write_text(csv_path, report_csv(report));
  return 0;
}

int cmd_dump_masks(const std::string& instructions_path, const std::string& config_path,
                   const std::string& out_prefix) {
  const RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  const Instructions ins = load_instruction_file(instructions_path);
  const TaskContext ctx = make_task_context(rc.model, ins.boxes);

  write_pgm(mask_to_image(*ctx.masks.dis), out_prefix + "_dis.pgm");
  write_pgm(mask_to_image(*ctx.masks.har), out_prefix + "_har.pgm");

  nlohmann::json j;
  const PartitionLayout& lay = ctx.layout;
  j["seq_len"] = lay.seq_len;
  j["global_prompt"] = {lay.global_begin, lay.global_end};
  j["instance_prompts"] = nlohmann::json::array();
  for (const auto& [b, e] : lay.inst_prompt) j["instance_prompts"].push_back({b, e});
  j["latent_begin"] = lay.latent_begin;
  j["context_begin"] = lay.context_begin;
  j["grid_h"] = lay.grid_h;
  j["grid_w"] = lay.grid_w;
  j["patch"] = lay.patch;
  j["latent_unassigned"] = lay.latent_unassigned;
  j["context_unassigned"] = lay.context_unassigned;
  j["latent_instances"] = lay.latent_inst;
  j["context_instances"] = lay.context_inst;
  write_text(out_prefix + "_layout.json", j.dump(2) + "\n");
  std::cout << "masks written to " << out_prefix << "_{dis,har}.pgm, layout to " << out_prefix
            << "_layout.json (seq_len " << lay.seq_len << ")\n";
  return 0;
}

int cmd_elo(const std::string& judgments_path, double k, double init, int epochs, std::uint64_t seed) {
  std::ifstream in(judgments_path);
  if (!in) throw std::runtime_error("cannot open judgments: " + judgments_path);
  std::vector<GameOutcome> outcomes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::invalid_argument(judgments_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("a") || !j.contains("b") || !j.contains("result"))
      throw std::invalid_argument(judgments_path + ":" + std::to_string(line_no) +
                                  ": expected {\"a\", \"b\", \"result\"}");
    GameOutcome g;
    g.a = j["a"].get<std::string>();
    g.b = j["b"].get<std::string>();
    const std::string r = j["result"].get<std::string>();
    if (r == "a")
      g.result = GameResult::a_wins;
    else if (r == "b")
      g.result = GameResult::b_wins;
    else if (r == "draw")
      g.result = GameResult::draw;
    else
      throw std::invalid_argument(judgments_path + ":" + std::to_string(line_no) + ": result must be a|b|draw");
    outcomes.push_back(std::move(g));
  }
  EloConfig config;
  config.k = k;
  config.initial = init;
  config.epochs = epochs;
  config.seed = seed;
  const std::map<std::string, double> ratings = elo(outcomes, config);
  std::vector<std::pair<std::string, double>> sorted(ratings.begin(), ratings.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::cout << "player,rating\n";
  for (const auto& [name, rating] : sorted) std::cout << name << ',' << rating << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-matching multi-instance image editing with instance-disentangled attention"};
  app.require_subcommand(1);

  // gen-data
  std::string gd_out;
  int gd_train = 2000, gd_test = 100, gd_max_boxes = 4;
  std::uint64_t gd_seed = 0;
  double gd_overlap = 0.1;
  auto* gen = app.add_subcommand("gen-data", "Generate the paired synthetic editing dataset");
  gen->add_option("--out", gd_out, "Output directory")->required();
  gen->add_option("--n-train", gd_train, "Training samples");
  gen->add_option("--n-test", gd_test, "Test samples");
  gen->add_option("--seed", gd_seed, "Master seed");
  gen->add_option("--max-boxes", gd_max_boxes, "Maximum edits per sample");
  gen->add_option("--p-overlap", gd_overlap, "Chance a sample may contain overlapping boxes");

  // train
  std::string tr_config, tr_data, tr_out, tr_base, tr_resume;
  bool tr_lora = false, tr_unmasked = false;
  int tr_save_every = 0;
  auto* train = app.add_subcommand("train", "Train the velocity model (full or adapter-only)");
  train->add_option("--config", tr_config, "Run config JSON (defaults when omitted)");
  train->add_option("--data", tr_data, "Dataset directory")->required();
  train->add_option("--out", tr_out, "Output directory")->required();
  train->add_flag("--lora", tr_lora, "Train low-rank adapters only");
  train->add_option("--base", tr_base, "Base checkpoint to adapt (with --lora)");
  train->add_option("--resume", tr_resume, "Resume from a training checkpoint");
  train->add_flag("--unmasked", tr_unmasked, "Train with plain joint attention (no masks)");
  train->add_option("--save-every", tr_save_every, "Also write a checkpoint every N steps");

  // edit
  std::string ed_ckpt, ed_image, ed_instructions, ed_out, ed_schedule = "har-dis-har";
  int ed_steps = 16;
  std::uint64_t ed_seed = 0;
  bool ed_unmasked = false;
  auto* edit = app.add_subcommand("edit", "Apply multi-instance edits in one sampling pass");
  edit->add_option("--ckpt", ed_ckpt, "Model checkpoint")->required();
  edit->add_option("--image", ed_image, "Reference PPM image")->required();
  edit->add_option("--instructions", ed_instructions, "Instruction JSON")->required();
  edit->add_option("--out", ed_out, "Output PPM path")->required();
  edit->add_option("--steps", ed_steps, "Euler steps");
  edit->add_option("--schedule", ed_schedule, "Mask schedule: early-mid-late triple, all-dis or all-har");
  edit->add_option("--seed", ed_seed, "Noise seed");
  edit->add_flag("--unmasked", ed_unmasked, "Plain joint attention (no masks)");

  // eval
  std::string ev_ckpt, ev_data, ev_report, ev_csv, ev_schedule = "har-dis-har";
  int ev_steps = 16, ev_limit = 0;
  std::uint64_t ev_seed = 0;
  bool ev_ablation = false, ev_unmasked = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval_cmd->add_option("--ckpt", ev_ckpt, "Model checkpoint")->required();
  eval_cmd->add_option("--data", ev_data, "Dataset directory")->required();
  eval_cmd->add_option("--report", ev_report, "Report JSON output path");
  eval_cmd->add_option("--csv", ev_csv, "Per-sample CSV output path");
  eval_cmd->add_option("--steps", ev_steps, "Euler steps");
  eval_cmd->add_option("--schedule", ev_schedule, "Mask schedule");
  eval_cmd->add_option("--seed", ev_seed, "Evaluation seed");
  eval_cmd->add_option("--limit", ev_limit, "Evaluate only the first N samples");
  eval_cmd->add_flag("--ablation", ev_ablation, "Evaluate all 8 early/mid/late regime assignments");
  eval_cmd->add_flag("--unmasked", ev_unmasked, "Plain joint attention (no masks)");

  // dump-masks
  std::string dm_instructions, dm_config, dm_prefix;
  auto* dump = app.add_subcommand("dump-masks", "Write the attention masks and layout for a task");
  dump->add_option("--instructions", dm_instructions, "Instruction JSON")->required();
  dump->add_option("--config", dm_config, "Run config JSON (defaults when omitted)");
  dump->add_option("--out-prefix", dm_prefix, "Output path prefix")->required();

  // elo
  std::string el_judgments;
  double el_k = 32.0, el_init = 1200.0;
  int el_epochs = 1;
  std::uint64_t el_seed = 0;
  auto* elo_cmd = app.add_subcommand("elo", "Elo ratings from pairwise judgment logs (JSONL)");
  elo_cmd->add_option("--judgments", el_judgments, "JSONL file of {a, b, result} lines")->required();
  elo_cmd->add_option("--k", el_k, "K factor");
  elo_cmd->add_option("--init", el_init, "Initial rating");
  elo_cmd->add_option("--epochs", el_epochs, "Shuffled passes over the log");
  elo_cmd->add_option("--seed", el_seed, "Shuffle seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gd_out, gd_train, gd_test, gd_seed, gd_max_boxes, gd_overlap);
    if (train->parsed())
      return cmd_train(tr_config, tr_data, tr_out, tr_lora, tr_base, tr_resume, tr_unmasked, tr_save_every);
    if (edit->parsed())
      return cmd_edit(ed_ckpt, ed_image, ed_instructions, ed_out, ed_steps, ed_schedule, ed_seed, ed_unmasked);
    if (eval_cmd->parsed())
      return cmd_eval(ev_ckpt, ev_data, ev_report, ev_csv, ev_steps, ev_schedule, ev_seed, ev_limit, ev_ablation,
                      ev_unmasked);
    if (dump->parsed()) return cmd_dump_masks(dm_instructions, dm_config, dm_prefix);
    if (elo_cmd->parsed()) return cmd_elo(el_judgments, el_k, el_init, el_epochs, el_seed);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = e.what();
    std::cerr << err.dump() << std::endl;
    return 1;
  }
  return 1;
}
