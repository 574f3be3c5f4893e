#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "idfm/mask_oracle.hpp"
#include "idfm/masks.hpp"
#include "idfm/rng.hpp"

using namespace idfm;

namespace {

BoxSpec make_box(int x, int y, int w, int h) {
  BoxSpec b;
  b.x = x;
  b.y = y;
  b.w = w;
  b.h = h;
  return b;
}

// The 8-token layout used across the examples: tokens 0-1 global prompt,
// 2 and 3 the two instance prompts, 4/5 latent, 6/7 context.
PartitionLayout hand_layout() {
  return build_layout(2, {1, 1}, {make_box(0, 0, 4, 4), make_box(0, 4, 4, 4)}, 4, 2, 1);
}

PartitionLayout random_layout(Rng& rng, int max_seq = 256) {
  for (;;) {
    const int patch = 4;
    const int grid_h = rng.uniform_int(1, 8), grid_w = rng.uniform_int(1, 8);
    const int n = rng.uniform_int(0, 4);
    std::vector<BoxSpec> boxes;
    std::vector<int> lens;
    for (int b = 0; b < n; ++b) {
      BoxSpec box;
      box.w = rng.uniform_int(1, grid_w * patch);
      box.h = rng.uniform_int(1, grid_h * patch);
      box.x = rng.uniform_int(0, grid_w * patch - box.w);
      box.y = rng.uniform_int(0, grid_h * patch - box.h);
      boxes.push_back(box);  // overlaps allowed by construction
      lens.push_back(rng.uniform_int(1, 8));
    }
    const int global_len = rng.uniform_int(1, 8);
    PartitionLayout lay = build_layout(global_len, lens, boxes, patch, grid_h, grid_w);
    if (lay.seq_len <= max_seq) return lay;
  }
}

}  // namespace

TEST_CASE("disentanglement mask on the hand-enumerated layout") {
  const PartitionLayout lay = hand_layout();
  const AttnMask m = build_dis(lay);
  // Global prompt attends everything except instance prompts.
  CHECK(m.at(0, 4));
  CHECK(!m.at(0, 2));
  CHECK(m.at(0, 0));
  CHECK(m.at(0, 5));
  CHECK(m.at(0, 7));
  // Instance prompts are confined to their own group.
  CHECK(!m.at(2, 3));
  CHECK(m.at(2, 2));
  CHECK(m.at(2, 4));
  CHECK(m.at(2, 6));
  CHECK(!m.at(2, 0));
  CHECK(!m.at(2, 5));
  // Latent tokens of different instances are isolated.
  CHECK(!m.at(4, 5));
  CHECK(m.at(4, 2));
  CHECK(m.at(4, 6));
}

TEST_CASE("harmonization mask on the hand-enumerated layout") {
  const PartitionLayout lay = hand_layout();
  const AttnMask m = build_har(lay);
  // Latent tokens of different instances may interact.
  CHECK(m.at(4, 5));
  // But latent tokens do not see instance prompts, not even their own.
  CHECK(!m.at(4, 2));
  CHECK(!m.at(4, 3));
  // Instance prompts attend their own group only.
  CHECK(m.at(2, 4));
  CHECK(m.at(2, 2));
  CHECK(!m.at(2, 3));
  CHECK(!m.at(2, 0));
  // Global prompt still cannot see instance prompts.
  CHECK(!m.at(0, 2));
  CHECK(m.at(0, 4));
}

TEST_CASE("the harmonization mask is not a pointwise relaxation of the disentanglement mask") {
  // Latent-to-own-prompt edges exist under dis and are blocked under har;
  // pinned so a future "simplification" cannot silently change semantics.
  const PartitionLayout lay = hand_layout();
  const AttnMask dis = build_dis(lay);
  const AttnMask har = build_har(lay);
  CHECK(dis.at(4, 2));
  CHECK(!har.at(4, 2));
  CHECK(dis.at(5, 3));
  CHECK(!har.at(5, 3));
  // And in the other direction har allows cross-instance latent edges that
  // dis blocks.
  CHECK(!dis.at(4, 5));
  CHECK(har.at(4, 5));
}

TEST_CASE("masks match the brute-force oracle on random layouts") {
  Rng rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const PartitionLayout lay = random_layout(rng);
    CHECK(build_dis(lay) == oracle_mask(lay, Regime::dis));
    CHECK(build_har(lay) == oracle_mask(lay, Regime::har));
  }
}

TEST_CASE("mask invariants: full diagonal, no empty rows, prompt-key privacy") {
  Rng rng(103);
  for (int trial = 0; trial < 60; ++trial) {
    const PartitionLayout lay = random_layout(rng, 200);
    for (const AttnMask& m : {build_dis(lay), build_har(lay)}) {
      for (int i = 0; i < m.seq_len; ++i) {
        CHECK(m.at(i, i));
        bool any = false;
        for (int j = 0; j < m.seq_len; ++j) any = any || m.at(i, j);
        CHECK(any);
      }
    }
    // Column scan: a key inside instance prompt n is attended only by that
    // instance's group (dis) or only by that instance's prompt (har).
    const AttnMask dis = build_dis(lay);
    const AttnMask har = build_har(lay);
    for (int n = 0; n < lay.num_instances(); ++n) {
      const auto [p0, p1] = lay.inst_prompt[static_cast<std::size_t>(n)];
      for (int j = p0; j < p1; ++j) {
        for (int i = 0; i < lay.seq_len; ++i) {
          auto in_set = [&](const std::vector<int>& v) {
            return std::binary_search(v.begin(), v.end(), i);
          };
          const bool in_group = (i >= p0 && i < p1) ||
                                in_set(lay.latent_inst[static_cast<std::size_t>(n)]) ||
                                in_set(lay.context_inst[static_cast<std::size_t>(n)]);
          if (dis.at(i, j)) CHECK(in_group);
          if (har.at(i, j)) CHECK((i >= p0 && i < p1));
        }
      }
    }
  }
}

TEST_CASE("no instances degenerates to full-allow masks") {
  const PartitionLayout lay = build_layout(5, {}, {}, 4, 3, 3);
  for (Regime r : {Regime::dis, Regime::har}) {
    const AttnMask m = oracle_mask(lay, r);
    const AttnMask built = r == Regime::dis ? build_dis(lay) : build_har(lay);
    CHECK(m == built);
    for (std::size_t i = 0; i < m.allowed.size(); ++i) CHECK(m.allowed[i] == 1);
  }
}

TEST_CASE("schedule examples") {
  const LayerSchedule s = schedule(8, 2, 2);
  const std::vector<Regime> expect = {Regime::har, Regime::har, Regime::dis, Regime::dis,
                                      Regime::dis, Regime::dis, Regime::har, Regime::har};
  CHECK(s.regimes == expect);

  const LayerSchedule all_dis = schedule(8, 2, 2, std::vector<Regime>(8, Regime::dis));
  for (Regime r : all_dis.regimes) CHECK(r == Regime::dis);

  const LayerSchedule mid_only = schedule(4, 0, 0);
  for (Regime r : mid_only.regimes) CHECK(r == Regime::dis);

  CHECK_THROWS_AS(schedule(4, 3, 2), std::invalid_argument);
  CHECK_THROWS_AS(schedule(4, 0, 0, std::vector<Regime>(3, Regime::dis)), std::invalid_argument);

  // All 8 band assignments are expressible for the ablation harness.
  const LayerSchedule bands = schedule_bands(8, 2, 2, Regime::dis, Regime::har, Regime::dis);
  CHECK(bands.regimes[0] == Regime::dis);
  CHECK(bands.regimes[2] == Regime::har);
  CHECK(bands.regimes[7] == Regime::dis);
}

TEST_CASE("mask_to_image renders allowed as gray and blocked as black") {
  AttnMask full(3);
  for (auto& v : full.allowed) v = 1;
  const Image gray = mask_to_image(full);
  for (auto p : gray.pixels) CHECK(p == 128);

  AttnMask diag(4);
  for (int i = 0; i < 4; ++i) diag.set(i, i, true);
  const Image img = mask_to_image(diag);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(img.at(j, i, 0) == (i == j ? 128 : 0));

  // The hand-enumerated dis mask rendered pixel-per-entry matches the oracle.
  const PartitionLayout lay = hand_layout();
  const Image dis_img = mask_to_image(build_dis(lay));
  const AttnMask oracle = oracle_mask(lay, Regime::dis);
  CHECK(dis_img.width == 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) CHECK(dis_img.at(j, i, 0) == (oracle.at(i, j) ? 128 : 0));
}
