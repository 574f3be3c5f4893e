#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "idfm/flow.hpp"
#include "idfm/model.hpp"
#include "idfm/ops.hpp"
#include "idfm/rng.hpp"
#include "support/finite_diff.hpp"
#include "support/test_util.hpp"

using namespace idfm;
using testutil::bitwise_equal;
using testutil::random_image_unit;
using testutil::randomize_params;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.image_h = 16;
  c.image_w = 16;
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

BoxSpec make_box(int x, int y, int w, int h, std::string tgt) {
  BoxSpec b;
  b.x = x;
  b.y = y;
  b.w = w;
  b.h = h;
  b.tgt = std::move(tgt);
  return b;
}

// Two boxes on disjoint patch rows: instance 0 owns patches {0,1},
// instance 1 owns patches {8,9}.
std::vector<BoxSpec> disjoint_boxes() {
  return {make_box(0, 0, 8, 4, "AB"), make_box(0, 8, 8, 4, "CD")};
}

void perturb_box_pixels(std::vector<double>& image, const ModelConfig& cfg, const BoxSpec& box, Rng& rng) {
  for (int y = box.y; y < box.y + box.h; ++y)
    for (int x = box.x; x < box.x + box.w; ++x)
      for (int c = 0; c < cfg.channels; ++c)
        image[(static_cast<std::size_t>(y) * cfg.image_w + x) * cfg.channels + c] = rng.uniform(-1.0, 1.0);
}

}  // namespace

TEST_CASE("patchify and unpatchify are exact inverses") {
  const ModelConfig cfg = tiny_config();
  Rng rng(5);
  const std::vector<double> img = random_image_unit(rng, cfg);
  const std::vector<double> back = unpatchify_image(patchify_image(img, cfg), cfg);
  CHECK(back == img);
}

TEST_CASE("embed shape contract and determinism") {
  const ModelConfig cfg = tiny_config();
  ModelState m = ModelState::init(cfg, 3);
  randomize_params(m, 40);
  Rng rng(9);
  const TaskContext ctx = make_task_context(cfg, disjoint_boxes());
  const Tensor xt = patchify_image(random_image_unit(rng, cfg), cfg);
  const Tensor ref = patchify_image(random_image_unit(rng, cfg), cfg);
  const Tensor h1 = embed(m, xt, ref, ctx.bundle, ctx.layout);
  CHECK(h1.rows() == ctx.layout.seq_len);
  CHECK(h1.cols() == cfg.d_model);
  const Tensor h2 = embed(m, xt, ref, ctx.bundle, ctx.layout);
  CHECK(bitwise_equal(h1, h2));
}

TEST_CASE("time enters only through the modulation pathway") {
  const ModelConfig cfg = tiny_config();
  ModelState m = ModelState::init(cfg, 3);
  randomize_params(m, 41);
  // Zero the time MLP output layer: every t now produces the same features,
  // so the whole forward becomes t-independent.
  for (std::size_t i = 0; i < m.time_w2.size(); ++i) m.time_w2.data()[i] = 0.0;
  for (std::size_t i = 0; i < m.time_b2.size(); ++i) m.time_b2.data()[i] = 0.0;

  Rng rng(10);
  const std::vector<double> x = random_image_unit(rng, cfg);
  const std::vector<double> ref = random_image_unit(rng, cfg);
  const TaskContext ctx = make_task_context(cfg, disjoint_boxes());
  const LayerSchedule sched = schedule(cfg.num_layers, cfg.early_count, cfg.late_count);
  const Tensor v0 = forward_velocity_patches(m, patchify_image(x, cfg), patchify_image(ref, cfg), ctx.bundle,
                                             0.0, ctx.layout, sched, &ctx.masks);
  const Tensor v1 = forward_velocity_patches(m, patchify_image(x, cfg), patchify_image(ref, cfg), ctx.bundle,
                                             1.0, ctx.layout, sched, &ctx.masks);
  CHECK(bitwise_equal(v0, v1));
}

TEST_CASE("zeroed value, output and feed-forward weights make a block a pure residual") {
  const ModelConfig cfg = tiny_config();
  ModelState m = ModelState::init(cfg, 3);
  randomize_params(m, 42);
  BlockWeights& bw = m.blocks[0];
  for (int mod = 0; mod < 3; ++mod) {
    for (std::size_t i = 0; i < bw.wv[mod].size(); ++i) bw.wv[mod].data()[i] = 0.0;
    for (std::size_t i = 0; i < bw.bv[mod].size(); ++i) bw.bv[mod].data()[i] = 0.0;
  }
  for (Tensor* t : {&bw.wo, &bw.bo, &bw.w1, &bw.b1, &bw.w2, &bw.b2})
    for (std::size_t i = 0; i < t->size(); ++i) t->data()[i] = 0.0;

  Rng rng(11);
  const TaskContext ctx = make_task_context(cfg, disjoint_boxes());
  const Tensor h = testutil::random_tensor(rng, {ctx.layout.seq_len, cfg.d_model});
  const Tensor t_feat = time_features(m, 0.35);
  const Tensor out = block_forward(m, 0, h, ctx.layout, ctx.masks.dis, t_feat);
  CHECK(bitwise_equal(out, h));
}

TEST_CASE("a full-allow mask reproduces the unmasked joint-attention block bitwise") {
  const ModelConfig cfg = tiny_config();
  ModelState m = ModelState::init(cfg, 3);
  randomize_params(m, 43);
  Rng rng(12);
  const TaskContext ctx = make_task_context(cfg, {});  // N=0: both masks are full-allow
  const Tensor h = testutil::random_tensor(rng, {ctx.layout.seq_len, cfg.d_model});
  const Tensor t_feat = time_features(m, 0.5);
  const Tensor masked = block_forward(m, 0, h, ctx.layout, ctx.masks.dis, t_feat);
  const Tensor vanilla = block_forward(m, 0, h, ctx.layout, nullptr, t_feat);
  CHECK(bitwise_equal(masked, vanilla));
}

TEST_CASE("with no instances the masked forward equals the vanilla forward bitwise") {
  const ModelConfig cfg = tiny_config();
  const LayerSchedule sched = schedule(cfg.num_layers, cfg.early_count, cfg.late_count);
  for (int draw = 0; draw < 20; ++draw) {
    ModelState m = ModelState::init(cfg, 3);
    randomize_params(m, derive_seed(500, 1, static_cast<std::uint64_t>(draw)));
    Rng rng(derive_seed(500, 2, static_cast<std::uint64_t>(draw)));
    const TaskContext ctx = make_task_context(cfg, {});
    const Tensor xt = patchify_image(random_image_unit(rng, cfg), cfg);
    const Tensor ref = patchify_image(random_image_unit(rng, cfg), cfg);
    const double t = rng.uniform();
    const Tensor with_masks = forward_velocity_patches(m, xt, ref, ctx.bundle, t, ctx.layout, sched, &ctx.masks);
    const Tensor vanilla = forward_velocity_patches(m, xt, ref, ctx.bundle, t, ctx.layout, sched, nullptr);
    CHECK(bitwise_equal(with_masks, vanilla));
  }
}

TEST_CASE("all-dis stack isolates instances exactly; har layers relax it") {
  const ModelConfig cfg = tiny_config();
  const LayerSchedule all_dis =
      schedule(cfg.num_layers, cfg.early_count, cfg.late_count,
               std::vector<Regime>(static_cast<std::size_t>(cfg.num_layers), Regime::dis));
  const LayerSchedule mixed = schedule(cfg.num_layers, cfg.early_count, cfg.late_count);

  int leaked_trials = 0;
  for (int trial = 0; trial < 30; ++trial) {
    ModelState m = ModelState::init(cfg, 3);
    randomize_params(m, derive_seed(600, 1, static_cast<std::uint64_t>(trial)));
    Rng rng(derive_seed(600, 2, static_cast<std::uint64_t>(trial)));

    const std::vector<BoxSpec> boxes = disjoint_boxes();
    std::vector<double> x = random_image_unit(rng, cfg);
    std::vector<double> ref = random_image_unit(rng, cfg);
    const double t = rng.uniform();

    // Perturb everything that belongs to instance 1: its prompt string
    // (same length), its latent pixels and its context pixels.
    std::vector<BoxSpec> boxes_p = boxes;
    boxes_p[1].tgt = "PO";
    std::vector<double> x_p = x;
    std::vector<double> ref_p = ref;
    perturb_box_pixels(x_p, cfg, boxes[1], rng);
    perturb_box_pixels(ref_p, cfg, boxes[1], rng);

    const TaskContext ctx = make_task_context(cfg, boxes);
    const TaskContext ctx_p = make_task_context(cfg, boxes_p);
    REQUIRE(ctx_p.layout.seq_len == ctx.layout.seq_len);

    auto run = [&](const LayerSchedule& sched, const TaskContext& tc, const std::vector<double>& xi,
                   const std::vector<double>& ri) {
      return forward_velocity_patches(m, patchify_image(xi, cfg), patchify_image(ri, cfg), tc.bundle, t,
                                      tc.layout, sched, &tc.masks);
    };

    // Instance 0 owns patches 0 and 1.
    const Tensor base = run(all_dis, ctx, x, ref);
    const Tensor pert = run(all_dis, ctx_p, x_p, ref_p);
    for (int p : {0, 1})
      for (int c = 0; c < cfg.patch_dim(); ++c) CHECK(base.at(p, c) - pert.at(p, c) == 0.0);

    const Tensor base_mixed = run(mixed, ctx, x, ref);
    const Tensor pert_mixed = run(mixed, ctx_p, x_p, ref_p);
    double change = 0.0;
    for (int p : {0, 1})
      for (int c = 0; c < cfg.patch_dim(); ++c) change += std::abs(base_mixed.at(p, c) - pert_mixed.at(p, c));
    if (change > 0.0) ++leaked_trials;
  }
  // Harmonization layers must actually relax isolation.
  CHECK(leaked_trials >= 1);
}

TEST_CASE("model gradients match finite differences end to end") {
  ModelConfig cfg;
  cfg.image_h = 8;
  cfg.image_w = 8;
  cfg.patch = 4;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.num_layers = 2;
  cfg.early_count = 1;
  cfg.late_count = 1;
  cfg.embed_dim = 8;
  cfg.ff_hidden = 16;
  cfg.time_dim = 4;
  cfg.utility_len = 2;
  ModelState m = ModelState::init(cfg, 3);
  randomize_params(m, 77, 0.25);

  Rng rng(13);
  const std::vector<BoxSpec> boxes = {make_box(0, 0, 4, 4, "A")};
  const TaskContext ctx = make_task_context(cfg, boxes);
  const Tensor xt = patchify_image(random_image_unit(rng, cfg), cfg);
  const Tensor ref = patchify_image(random_image_unit(rng, cfg), cfg);
  const LayerSchedule sched = schedule(cfg.num_layers, cfg.early_count, cfg.late_count);

  std::vector<Tensor> params = m.all_params();
  auto loss_fn = [&] {
    const Tensor v = forward_velocity_patches(m, xt, ref, ctx.bundle, 0.4, ctx.layout, sched, &ctx.masks);
    return scale(sum_sq(v), 1.0 / static_cast<double>(v.size()));
  };
  CHECK(testutil::grad_l2_rel_error(params, loss_fn) < 1e-6);
}

TEST_CASE("lora adapters") {
  const ModelConfig cfg = tiny_config();
  const LayerSchedule sched = schedule(cfg.num_layers, cfg.early_count, cfg.late_count);
  Rng rng(14);
  const TaskContext ctx = make_task_context(cfg, disjoint_boxes());
  const Tensor xt = patchify_image(random_image_unit(rng, cfg), cfg);
  const Tensor ref = patchify_image(random_image_unit(rng, cfg), cfg);

  ModelState m = ModelState::init(cfg, 3);
  randomize_params(m, 90);
  const Tensor before = forward_velocity_patches(m, xt, ref, ctx.bundle, 0.3, ctx.layout, sched, &ctx.masks);

  // Fresh adapters (b = 0) leave the forward untouched.
  lora_attach(m, lora_default_targets(cfg), /*rank=*/4, /*alpha=*/4.0, /*seed=*/5);
  const Tensor attached = forward_velocity_patches(m, xt, ref, ctx.bundle, 0.3, ctx.layout, sched, &ctx.masks);
  CHECK(bitwise_equal(before, attached));

  // Duplicate attachment is an error.
  CHECK_THROWS_AS(lora_attach(m, {"block0.wo"}, 4, 4.0, 6), std::invalid_argument);

  // Pretend training happened: give b random content, then check merge
  // reproduces the adapted forward.
  Rng brng(15);
  for (auto& [name, adapter] : m.adapters)
    for (std::size_t i = 0; i < adapter.b.size(); ++i) adapter.b.data()[i] = brng.normal(0.0, 0.05);
  const Tensor adapted = forward_velocity_patches(m, xt, ref, ctx.bundle, 0.3, ctx.layout, sched, &ctx.masks);
  lora_merge(m);
  CHECK(m.adapters.empty());
  const Tensor merged = forward_velocity_patches(m, xt, ref, ctx.bundle, 0.3, ctx.layout, sched, &ctx.masks);
  double worst = 0.0;
  for (std::size_t i = 0; i < merged.size(); ++i)
    worst = std::max(worst, std::abs(merged.data()[i] - adapted.data()[i]));
  CHECK(worst < 1e-12);

  // Reference-scale rank is 32; the toy default is smaller.
  CHECK(kLoraRankPaper == 32);
  CHECK(kLoraRankToy >= 1);
}

TEST_CASE("forward output is finite and image-shaped") {
  const ModelConfig cfg = tiny_config();
  ModelState m = ModelState::init(cfg, 3);
  randomize_params(m, 91);
  Rng rng(16);
  const TaskContext ctx = make_task_context(cfg, disjoint_boxes());
  const LayerSchedule sched = schedule(cfg.num_layers, cfg.early_count, cfg.late_count);
  const std::vector<double> v = forward_velocity(m, random_image_unit(rng, cfg), random_image_unit(rng, cfg),
                                                 ctx.bundle, 0.7, ctx.layout, sched, &ctx.masks);
  CHECK(v.size() == static_cast<std::size_t>(cfg.image_h) * cfg.image_w * cfg.channels);
  for (double x : v) CHECK(std::isfinite(x));
}
