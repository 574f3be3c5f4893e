#include "idfm/model.hpp"

#include <cmath>
#include <stdexcept>

#include "idfm/ops.hpp"
#include "idfm/rng.hpp"

namespace idfm {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (image_h < 1 || image_w < 1) fail("image dimensions must be positive");
  if (channels != 3) fail("expected 3 channels");
  if (patch < 1) fail("patch must be positive");
  if (image_h % patch != 0 || image_w % patch != 0) fail("image dimensions must be divisible by patch");
  if (heads < 1 || d_model < 1 || d_model % heads != 0) fail("d_model must be divisible by heads");
  if (d_model % 4 != 0) fail("d_model must be divisible by 4 for the 2-D position encoding");
  if (embed_dim != d_model) fail("embed_dim must equal d_model");
  if (num_layers < 1) fail("need at least one layer");
  if (early_count < 0 || late_count < 0 || early_count + late_count > num_layers)
    fail("early/late counts exceed layer count");
  if (ff_hidden < 1) fail("ff_hidden must be positive");
  if (time_dim < 2 || time_dim % 2 != 0) fail("time_dim must be even and >= 2");
  if (utility_len < 1) fail("utility prompt needs at least one token");
  if (vocab_size < GlyphVocab::kVocabSize) fail("vocab too small for the glyph vocabulary");
  if (max_str_len < 1) fail("max_str_len must be positive");
}

namespace {

Tensor randn_param(Rng& rng, std::vector<int> dims, double stddev) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  std::vector<double> values(n);
  for (double& v : values) v = rng.normal(0.0, stddev);
  return Tensor::param(std::move(dims), std::move(values));
}

Tensor zeros_param(std::vector<int> dims) {
  Tensor t = Tensor::zeros(std::move(dims));
  t.ensure_grad();
  return t;
}

// Interleaved sin/cos over log-spaced frequencies; first half of the
// channels encodes the column, second half the row.
Tensor make_pos_enc(const ModelConfig& cfg) {
  const int g = cfg.grid_count(), d = cfg.d_model;
  const int half = d / 2, pairs = half / 2;
  Tensor pe = Tensor::zeros({g, d});
  for (int p = 0; p < g; ++p) {
    const int r = p / cfg.grid_w();
    const int c = p % cfg.grid_w();
    double* row = pe.data() + static_cast<std::size_t>(p) * d;
    for (int k = 0; k < pairs; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / pairs);
      row[2 * k] = std::sin(c * freq);
      row[2 * k + 1] = std::cos(c * freq);
      row[half + 2 * k] = std::sin(r * freq);
      row[half + 2 * k + 1] = std::cos(r * freq);
    }
  }
  return pe;
}

const char* kModalityNames[3] = {"text", "latent", "context"};

}  // namespace

ModelState ModelState::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, /*stream=*/0x6d6f64656cull));
  const int d = config.d_model, pd = config.patch_dim(), ff = config.ff_hidden, td = config.time_dim;

  ModelState m;
  m.config = config;
  m.token_emb = randn_param(rng, {config.vocab_size, d}, 0.02);
  m.modality_emb = randn_param(rng, {3, d}, 0.02);
  m.patch_w = randn_param(rng, {pd, d}, 1.0 / std::sqrt(static_cast<double>(pd)));
  m.patch_b = zeros_param({d});
  m.time_w1 = randn_param(rng, {td, td}, 1.0 / std::sqrt(static_cast<double>(td)));
  m.time_b1 = zeros_param({td});
  m.time_w2 = randn_param(rng, {td, td}, 1.0 / std::sqrt(static_cast<double>(td)));
  m.time_b2 = zeros_param({td});
  // Zero-initialized head: the model starts by predicting zero velocity.
  m.head_w = zeros_param({d, pd});
  m.head_b = zeros_param({pd});

  const double ws = 1.0 / std::sqrt(static_cast<double>(d));
  m.blocks.resize(static_cast<std::size_t>(config.num_layers));
  for (BlockWeights& bw : m.blocks) {
    for (int mod = 0; mod < 3; ++mod) {
      bw.wq[mod] = randn_param(rng, {d, d}, ws);
      bw.bq[mod] = zeros_param({d});
      bw.wk[mod] = randn_param(rng, {d, d}, ws);
      bw.bk[mod] = zeros_param({d});
      bw.wv[mod] = randn_param(rng, {d, d}, ws);
      bw.bv[mod] = zeros_param({d});
    }
    bw.wo = randn_param(rng, {d, d}, ws);
    bw.bo = zeros_param({d});
    bw.w1 = randn_param(rng, {d, ff}, ws);
    bw.b1 = zeros_param({ff});
    bw.w2 = randn_param(rng, {ff, d}, 1.0 / std::sqrt(static_cast<double>(ff)));
    bw.b2 = zeros_param({d});
    bw.mod_w = zeros_param({td, 6 * d});
    bw.mod_b = zeros_param({6 * d});
  }
  m.pos_enc = make_pos_enc(config);
  return m;
}

void ModelState::visit_params(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("token_emb", token_emb);
  fn("modality_emb", modality_emb);
  fn("patch_w", patch_w);
  fn("patch_b", patch_b);
  fn("time_w1", time_w1);
  fn("time_b1", time_b1);
  fn("time_w2", time_w2);
  fn("time_b2", time_b2);
  fn("head_w", head_w);
  fn("head_b", head_b);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    BlockWeights& bw = blocks[l];
    for (int mod = 0; mod < 3; ++mod) {
      const std::string suffix = std::string(".") + kModalityNames[mod];
      fn(p + "wq" + suffix, bw.wq[mod]);
      fn(p + "bq" + suffix, bw.bq[mod]);
      fn(p + "wk" + suffix, bw.wk[mod]);
      fn(p + "bk" + suffix, bw.bk[mod]);
      fn(p + "wv" + suffix, bw.wv[mod]);
      fn(p + "bv" + suffix, bw.bv[mod]);
    }
    fn(p + "wo", bw.wo);
    fn(p + "bo", bw.bo);
    fn(p + "w1", bw.w1);
    fn(p + "b1", bw.b1);
    fn(p + "w2", bw.w2);
    fn(p + "b2", bw.b2);
    fn(p + "mod_w", bw.mod_w);
    fn(p + "mod_b", bw.mod_b);
  }
  for (auto& [name, adapter] : adapters) {
    fn("lora." + name + ".a", adapter.a);
    fn("lora." + name + ".b", adapter.b);
  }
}

std::vector<Tensor> ModelState::all_params() {
  std::vector<Tensor> out;
  visit_params([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

std::vector<Tensor> ModelState::adapter_params() {
  std::vector<Tensor> out;
  for (auto& [name, adapter] : adapters) {
    out.push_back(adapter.a);
    out.push_back(adapter.b);
  }
  return out;
}

std::vector<Tensor> ModelState::trainable_params() {
  return adapters.empty() ? all_params() : adapter_params();
}

std::size_t ModelState::param_count() {
  std::size_t n = 0;
  visit_params([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

ModelState ModelState::training_shadow() const {
  ModelState shadow = *this;
  shadow.visit_params([](const std::string&, Tensor& t) { t = t.with_fresh_grad(); });
  return shadow;
}

Tensor ModelState::effective_weight(const std::string& name, const Tensor& base) const {
  const auto it = adapters.find(name);
  if (it == adapters.end()) return base;
  const LoraAdapter& ad = it->second;
  return add(base, scale(matmul(ad.a, ad.b), ad.scaling()));
}

MaskSet MaskSet::build(const PartitionLayout& layout) {
  MaskSet set;
  set.dis = std::make_shared<AttnMask>(build_dis(layout));
  set.har = std::make_shared<AttnMask>(build_har(layout));
  return set;
}

Tensor patchify_image(const std::vector<double>& image, const ModelConfig& config) {
  const int H = config.image_h, W = config.image_w, C = config.channels, P = config.patch;
  if (image.size() != static_cast<std::size_t>(H) * W * C)
    shape_error("patchify_image: image size does not match config");
  Tensor out = Tensor::zeros({config.grid_count(), config.patch_dim()});
  double* dst = out.data();
  for (int r = 0; r < config.grid_h(); ++r)
    for (int c = 0; c < config.grid_w(); ++c)
      for (int py = 0; py < P; ++py)
        for (int px = 0; px < P; ++px)
          for (int ch = 0; ch < C; ++ch)
            *dst++ = image[((static_cast<std::size_t>(r * P + py) * W) + (c * P + px)) * C + ch];
  return out;
}

std::vector<double> unpatchify_image(const Tensor& patches, const ModelConfig& config) {
  const int H = config.image_h, W = config.image_w, C = config.channels, P = config.patch;
  if (patches.rank() != 2 || patches.rows() != config.grid_count() || patches.cols() != config.patch_dim())
    shape_error("unpatchify_image: patches " + patches.shape_str() + " do not match config");
  std::vector<double> image(static_cast<std::size_t>(H) * W * C);
  const double* src = patches.data();
  for (int r = 0; r < config.grid_h(); ++r)
    for (int c = 0; c < config.grid_w(); ++c)
      for (int py = 0; py < P; ++py)
        for (int px = 0; px < P; ++px)
          for (int ch = 0; ch < C; ++ch)
            image[((static_cast<std::size_t>(r * P + py) * W) + (c * P + px)) * C + ch] = *src++;
  return image;
}

Tensor time_features(const ModelState& m, double t) {
  const int td = m.config.time_dim, half = td / 2;
  Tensor raw = Tensor::zeros({1, td});
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / half);
    const double arg = t * 1000.0 * freq;
    raw.data()[k] = std::sin(arg);
    raw.data()[half + k] = std::cos(arg);
  }
  Tensor f = add_rowvec(matmul(raw, m.effective_weight("time_w1", m.time_w1)), m.time_b1);
  f = silu(f);
  return add_rowvec(matmul(f, m.effective_weight("time_w2", m.time_w2)), m.time_b2);
}

namespace {

void check_layout(const ModelState& m, const PartitionLayout& lay, const PromptBundle& bundle) {
  if (lay.grid_h != m.config.grid_h() || lay.grid_w != m.config.grid_w() || lay.patch != m.config.patch)
    shape_error("layout grid does not match model config");
  if (bundle.global_len != lay.global_len || bundle.inst_lens != lay.inst_prompt_lens)
    shape_error("prompt bundle segments do not match layout");
}

}  // namespace

Tensor embed(const ModelState& m, const Tensor& xt_patches, const Tensor& ref_patches,
             const PromptBundle& bundle, const PartitionLayout& layout) {
  check_layout(m, layout, bundle);
  const int g = m.config.grid_count();
  if (xt_patches.rank() != 2 || xt_patches.rows() != g || xt_patches.cols() != m.config.patch_dim())
    shape_error("embed: latent patches " + xt_patches.shape_str());
  if (!ref_patches.same_shape(xt_patches)) shape_error("embed: context patches " + ref_patches.shape_str());

  const Tensor patch_w = m.effective_weight("patch_w", m.patch_w);
  Tensor prompt = rows_gather(m.token_emb, bundle.token_ids);
  prompt = add_rowvec(prompt, slice_rows(m.modality_emb, static_cast<int>(Modality::text), 1));

  Tensor lat = add_rowvec(matmul(xt_patches, patch_w), m.patch_b);
  lat = add(lat, m.pos_enc);
  lat = add_rowvec(lat, slice_rows(m.modality_emb, static_cast<int>(Modality::latent), 1));

  Tensor ctx = add_rowvec(matmul(ref_patches, patch_w), m.patch_b);
  ctx = add(ctx, m.pos_enc);
  ctx = add_rowvec(ctx, slice_rows(m.modality_emb, static_cast<int>(Modality::context), 1));

  return concat_rows({prompt, lat, ctx});
}

Tensor block_forward(const ModelState& m, int layer, const Tensor& h, const PartitionLayout& layout,
                     std::shared_ptr<const AttnMask> mask, const Tensor& t_feat) {
  if (layer < 0 || layer >= m.config.num_layers) shape_error("block_forward: layer out of range");
  if (h.rank() != 2 || h.rows() != layout.seq_len || h.cols() != m.config.d_model)
    shape_error("block_forward: states " + h.shape_str());
  if (mask && mask->seq_len != layout.seq_len) shape_error("block_forward: mask size mismatch");

  const BlockWeights& bw = m.blocks[static_cast<std::size_t>(layer)];
  const std::string p = "block" + std::to_string(layer) + ".";
  const int d = m.config.d_model;
  const int prompt_len = layout.prompt_len(), g = layout.grid_count();

  Tensor mod = add_rowvec(matmul(t_feat, bw.mod_w), bw.mod_b);
  const Tensor shift_a = slice_cols(mod, 0, d);
  const Tensor scale_a = slice_cols(mod, d, d);
  const Tensor gate_a = slice_cols(mod, 2 * d, d);
  const Tensor shift_f = slice_cols(mod, 3 * d, d);
  const Tensor scale_f = slice_cols(mod, 4 * d, d);
  const Tensor gate_f = slice_cols(mod, 5 * d, d);
  const Tensor ones = Tensor::full({1, d}, 1.0);

  Tensor u = layer_norm(h);
  u = mul_rowvec(u, add(ones, scale_a));
  u = add_rowvec(u, shift_a);

  // Queries, keys and values computed independently per modality, then
  // concatenated back into sequence order.
  const Tensor ut = slice_rows(u, 0, prompt_len);
  const Tensor ul = slice_rows(u, prompt_len, g);
  const Tensor uc = slice_rows(u, prompt_len + g, g);
  auto project = [&](const char* kind, const Tensor* w, const Tensor* b) {
    std::vector<Tensor> parts;
    const Tensor* inputs[3] = {&ut, &ul, &uc};
    for (int mod_i = 0; mod_i < 3; ++mod_i) {
      const std::string name = p + kind + "." + kModalityNames[mod_i];
      parts.push_back(add_rowvec(matmul(*inputs[mod_i], m.effective_weight(name, w[mod_i])), b[mod_i]));
    }
    return concat_rows(parts);
  };
  const Tensor q = project("wq", bw.wq, bw.bq);
  const Tensor k = project("wk", bw.wk, bw.bk);
  const Tensor v = project("wv", bw.wv, bw.bv);

  const int hd = m.config.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<std::size_t>(m.config.heads));
  for (int head = 0; head < m.config.heads; ++head) {
    const Tensor qh = slice_cols(q, head * hd, hd);
    const Tensor kh = slice_cols(k, head * hd, hd);
    const Tensor vh = slice_cols(v, head * hd, hd);
    const Tensor logits = matmul_nt(qh, kh, att_scale);
    const Tensor probs = mask ? masked_softmax(logits, mask) : softmax_rows(logits);
    head_outs.push_back(matmul(probs, vh));
  }
  Tensor attn = concat_cols(head_outs);
  attn = add_rowvec(matmul(attn, m.effective_weight(p + "wo", bw.wo)), bw.bo);
  Tensor out = add(h, mul_rowvec(attn, gate_a));

  Tensor u2 = layer_norm(out);
  u2 = mul_rowvec(u2, add(ones, scale_f));
  u2 = add_rowvec(u2, shift_f);
  Tensor ff = add_rowvec(matmul(u2, m.effective_weight(p + "w1", bw.w1)), bw.b1);
  ff = gelu(ff);
  ff = add_rowvec(matmul(ff, m.effective_weight(p + "w2", bw.w2)), bw.b2);
  return add(out, mul_rowvec(ff, gate_f));
}

Tensor forward_velocity_patches(const ModelState& m, const Tensor& xt_patches, const Tensor& ref_patches,
                                const PromptBundle& bundle, double t, const PartitionLayout& layout,
                                const LayerSchedule& sched, const MaskSet* masks) {
  if (sched.num_layers != m.config.num_layers) shape_error("schedule layer count does not match model");
  Tensor h = embed(m, xt_patches, ref_patches, bundle, layout);
  const Tensor t_feat = time_features(m, t);
  for (int layer = 0; layer < m.config.num_layers; ++layer) {
    std::shared_ptr<const AttnMask> mask = masks ? masks->pick(sched.at(layer)) : nullptr;
    h = block_forward(m, layer, h, layout, mask, t_feat);
  }
  // Only the latent tokens carry pixel predictions.
  Tensor lat = slice_rows(h, layout.prompt_len(), layout.grid_count());
  lat = layer_norm(lat);
  return add_rowvec(matmul(lat, m.effective_weight("head_w", m.head_w)), m.head_b);
}

std::vector<double> forward_velocity(const ModelState& m, const std::vector<double>& x_t,
                                     const std::vector<double>& ref, const PromptBundle& bundle, double t,
                                     const PartitionLayout& layout, const LayerSchedule& sched,
                                     const MaskSet* masks) {
  const Tensor xt_patches = patchify_image(x_t, m.config);
  const Tensor ref_patches = patchify_image(ref, m.config);
  const Tensor v = forward_velocity_patches(m, xt_patches, ref_patches, bundle, t, layout, sched, masks);
  return unpatchify_image(v, m.config);
}

}  // namespace idfm
