#include <stdexcept>
#include <unordered_map>

#include "idfm/model.hpp"
#include "idfm/ops.hpp"
#include "idfm/rng.hpp"

namespace idfm {

namespace {

std::unordered_map<std::string, Tensor*> weight_index(ModelState& m) {
  std::unordered_map<std::string, Tensor*> index;
  m.visit_params([&](const std::string& name, Tensor& t) { index.emplace(name, &t); });
  return index;
}

}  // namespace

std::vector<std::string> lora_default_targets(const ModelConfig& config) {
  std::vector<std::string> targets;
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    for (const char* mod : {"text", "latent", "context"}) {
      targets.push_back(p + "wq." + mod);
      targets.push_back(p + "wk." + mod);
      targets.push_back(p + "wv." + mod);
    }
    targets.push_back(p + "wo");
    targets.push_back(p + "w1");
    targets.push_back(p + "w2");
  }
  return targets;
}

void lora_attach(ModelState& m, const std::vector<std::string>& targets, int rank, double alpha,
                 std::uint64_t seed) {
  if (rank < 1) throw std::invalid_argument("lora: rank must be >= 1");
  auto index = weight_index(m);
  Rng rng(derive_seed(seed, /*stream=*/0x6c6f7261ull));
  for (const std::string& name : targets) {
    const auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("lora: no weight named '" + name + "'");
    if (m.adapters.count(name)) throw std::invalid_argument("lora: adapter already attached to '" + name + "'");
    const Tensor& base = *it->second;
    if (base.rank() != 2) throw std::invalid_argument("lora: target '" + name + "' is not a matrix");
    LoraAdapter ad;
    ad.rank = rank;
    ad.alpha = alpha;
    std::vector<double> a_init(static_cast<std::size_t>(base.rows()) * rank);
    for (double& v : a_init) v = rng.normal(0.0, 0.02);
    ad.a = Tensor::param({base.rows(), rank}, std::move(a_init));
    // b starts at zero: attaching changes nothing until training moves it.
    ad.b = Tensor::zeros({rank, base.cols()});
    ad.b.ensure_grad();
    m.adapters.emplace(name, std::move(ad));
  }
}

void lora_merge(ModelState& m) {
  auto index = weight_index(m);
  for (auto& [name, ad] : m.adapters) {
    Tensor& base = *index.at(name);
    std::vector<double> delta(base.size(), 0.0);
    kernels::gemm_nn_acc(ad.a.data(), ad.b.data(), delta.data(), ad.a.rows(), ad.rank, ad.b.cols());
    const double s = ad.scaling();
    for (std::size_t i = 0; i < base.size(); ++i) base.data()[i] += s * delta[i];
  }
  m.adapters.clear();
}

}  // namespace idfm
