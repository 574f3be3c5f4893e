#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "idfm/checkpoint.hpp"
#include "idfm/config.hpp"
#include "idfm/flow.hpp"
#include "idfm/image.hpp"
#include "idfm/rng.hpp"
#include "idfm/synthbench.hpp"
#include "support/test_util.hpp"

using namespace idfm;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) { return fs::temp_directory_path() / name; }

ModelConfig small_config() {
  ModelConfig c;
  c.image_h = 24;
  c.image_w = 24;
  c.patch = 4;
  c.d_model = 16;
  c.heads = 2;
  c.num_layers = 2;
  c.early_count = 1;
  c.late_count = 1;
  c.embed_dim = 16;
  c.ff_hidden = 32;
  c.time_dim = 8;
  c.utility_len = 4;
  return c;
}

}  // namespace

TEST_CASE("ppm and pgm round-trip random images byte for byte") {
  Rng rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    const int w = rng.uniform_int(1, 40), h = rng.uniform_int(1, 40);
    Image rgb(w, h, 3);
    for (auto& p : rgb.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    const fs::path path = temp_file("idfm_io_test.ppm");
    write_ppm(rgb, path.string());
    CHECK(read_ppm(path.string()) == rgb);

    Image gray(w, h, 1);
    for (auto& p : gray.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    const fs::path gpath = temp_file("idfm_io_test.pgm");
    write_pgm(gray, gpath.string());
    CHECK(read_pgm(gpath.string()) == gray);
  }
}

TEST_CASE("pnm readers reject wrong headers") {
  const fs::path path = temp_file("idfm_io_bad.ppm");
  std::ofstream(path) << "P3\n2 2\n255\n";
  CHECK_THROWS(read_ppm(path.string()));
  CHECK_THROWS(read_ppm("/nonexistent/nowhere.ppm"));
}

TEST_CASE("checkpoints round-trip bitwise, adapters and optimizer included") {
  const ModelConfig cfg = small_config();
  ModelState m = ModelState::init(cfg, 17);
  testutil::randomize_params(m, 171, 0.3);
  lora_attach(m, {"block0.wo", "block1.w1"}, 3, 6.0, 18);
  Rng rng(62);
  for (auto& [name, adapter] : m.adapters)
    for (std::size_t i = 0; i < adapter.b.size(); ++i) adapter.b.data()[i] = rng.normal(0.0, 0.05);

  std::vector<Tensor> trainable = m.trainable_params();
  AdamState adam(AdamConfig{}, trainable);
  for (auto& moments : adam.first_moments())
    for (double& v : moments) v = rng.normal();
  for (auto& moments : adam.second_moments())
    for (double& v : moments) v = std::abs(rng.normal());
  adam.set_step_count(123);

  const fs::path path = temp_file("idfm_ckpt_test.ckpt");
  save_model_checkpoint(m, path.string(), &adam);
  LoadedCheckpoint loaded = load_model_checkpoint(path.string());

  CHECK(loaded.model.config == cfg);
  CHECK(loaded.model.adapters.size() == 2);
  std::vector<std::pair<std::string, Tensor>> original;
  m.visit_params([&](const std::string& n, Tensor& t) { original.emplace_back(n, t); });
  std::size_t idx = 0;
  loaded.model.visit_params([&](const std::string& n, Tensor& t) {
    REQUIRE(original[idx].first == n);
    CHECK(testutil::bitwise_equal(original[idx].second, t));
    ++idx;
  });
  CHECK(idx == original.size());

  REQUIRE(loaded.has_adam);
  CHECK(loaded.step_count == 123);
  AdamState restored = loaded.restore_adam(loaded.model);
  CHECK(restored.step_count() == 123);
  for (std::size_t i = 0; i < adam.first_moments().size(); ++i) {
    CHECK(restored.first_moments()[i] == adam.first_moments()[i]);
    CHECK(restored.second_moments()[i] == adam.second_moments()[i]);
  }

  // Saving the loaded state reproduces the file byte for byte.
  const fs::path path2 = temp_file("idfm_ckpt_test2.ckpt");
  save_model_checkpoint(loaded.model, path2.string(), &restored);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string bytes_b((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const fs::path path = temp_file("idfm_ckpt_bad.ckpt");
  std::ofstream(path, std::ios::binary) << "NOPE";
  CHECK_THROWS(load_raw_checkpoint(path.string()));
  std::ofstream(path, std::ios::binary) << "IDFM";  // truncated after magic
  CHECK_THROWS(load_raw_checkpoint(path.string()));
}

TEST_CASE("training resumes on the exact same trajectory") {
  const ModelConfig cfg = small_config();
  const GlyphFont font = GlyphFont::standard();
  SynthConfig synth;
  synth.image_w = 24;
  synth.image_h = 24;
  synth.max_boxes = 2;
  synth.max_str_len = 3;
  std::vector<PairedExample> data;
  for (int i = 0; i < 4; ++i) {
    const EditSample s = render_sample(derive_seed(31, 0xd5, static_cast<std::uint64_t>(i)), synth, font);
    data.push_back({s.ref, s.target, s.boxes});
  }
  const LayerSchedule sched = schedule(cfg.num_layers, cfg.early_count, cfg.late_count);
  TrainConfig tc;
  tc.batch_size = 2;
  tc.seed = 77;

  // Straight run: 6 steps.
  ModelState straight = ModelState::init(cfg, 9);
  Trainer t1(straight, data, sched, tc);
  std::vector<double> straight_losses;
  for (int step = 0; step < 6; ++step) straight_losses.push_back(t1.step(step));

  // Split run: 3 steps, checkpoint, reload, 3 more.
  ModelState first = ModelState::init(cfg, 9);
  Trainer t2(first, data, sched, tc);
  std::vector<double> split_losses;
  for (int step = 0; step < 3; ++step) split_losses.push_back(t2.step(step));
  const fs::path path = temp_file("idfm_resume_test.ckpt");
  save_model_checkpoint(first, path.string(), &t2.adam());

  LoadedCheckpoint loaded = load_model_checkpoint(path.string());
  Trainer t3(loaded.model, data, sched, tc);
  t3.adam() = loaded.restore_adam(loaded.model);
  CHECK(loaded.step_count == 3);
  for (int step = 3; step < 6; ++step) split_losses.push_back(t3.step(step));

  CHECK(straight_losses == split_losses);
  std::vector<std::pair<std::string, Tensor>> a;
  straight.visit_params([&](const std::string& n, Tensor& t) { a.emplace_back(n, t); });
  std::size_t idx = 0;
  loaded.model.visit_params([&](const std::string& n, Tensor& t) {
    REQUIRE(a[idx].first == n);
    CHECK(testutil::bitwise_equal(a[idx].second, t));
    ++idx;
  });
}

TEST_CASE("run config parsing is strict about unknown keys") {
  CHECK_THROWS_WITH_AS(parse_run_config_json("{\"traim\": {}}"), doctest::Contains("traim"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_run_config_json("{\"train\": {\"lr\": 0.001, \"momentum\": 0.9}}"),
                       doctest::Contains("momentum"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_run_config_json("{\"model\": {\"d_model\": \"big\"}}"),
                       doctest::Contains("d_model"), std::invalid_argument);

  const RunConfig defaults = parse_run_config_json("{}");
  CHECK(defaults.model.d_model == 64);
  CHECK(defaults.model.num_layers == 8);
  CHECK(defaults.adam.lr == 1e-3);
  CHECK(defaults.batch_size == 16);
  CHECK(defaults.train_steps == 5000);
  CHECK(defaults.sampler_steps == 16);
  CHECK(defaults.schedule == "har-dis-har");

  const RunConfig parsed = parse_run_config_json(
      "{\"seed\": 11, \"model\": {\"d_model\": 32, \"heads\": 4}, \"train\": {\"batch_size\": 8}}");
  CHECK(parsed.seed == 11);
  CHECK(parsed.model.d_model == 32);
  CHECK(parsed.batch_size == 8);

  // Round trip through the serializer.
  const RunConfig again = parse_run_config_json(run_config_json(parsed));
  CHECK(again.model.d_model == 32);
  CHECK(again.seed == 11);
}

TEST_CASE("schedule specs") {
  ModelConfig cfg;
  cfg.num_layers = 8;
  cfg.early_count = 2;
  cfg.late_count = 2;
  const LayerSchedule def = schedule_from_spec("har-dis-har", cfg);
  CHECK(def.regimes == schedule(8, 2, 2).regimes);
  CHECK(schedule_from_spec("default", cfg).regimes == def.regimes);
  const LayerSchedule all_dis = schedule_from_spec("all-dis", cfg);
  for (Regime r : all_dis.regimes) CHECK(r == Regime::dis);
  const LayerSchedule mixed = schedule_from_spec("dis-har-dis", cfg);
  CHECK(mixed.regimes[0] == Regime::dis);
  CHECK(mixed.regimes[3] == Regime::har);
  CHECK(mixed.regimes[7] == Regime::dis);
  CHECK_THROWS(schedule_from_spec("sometimes", cfg));
  CHECK_THROWS(schedule_from_spec("har-dis", cfg));
}

TEST_CASE("unit range conversion clamps and inverts") {
  Image img(4, 4, 3);
  Rng rng(63);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  const std::vector<double> unit = to_unit_range(img);
  for (double v : unit) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK(from_unit_range(unit, 4, 4, 3) == img);
  // Out-of-range values clamp.
  std::vector<double> wild(4 * 4 * 3, 9.0);
  const Image clamped = from_unit_range(wild, 4, 4, 3);
  for (auto p : clamped.pixels) CHECK(p == 255);
}
