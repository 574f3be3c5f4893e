#include "idfm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "idfm/config.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");

namespace idfm {

namespace {

constexpr char kMagic[4] = {'I', 'D', 'F', 'M'};

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void save_raw_checkpoint(const RawCheckpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 4);
  write_u32(out, kCheckpointVersion);
  write_u64(out, ckpt.config_json.size());
  out.write(ckpt.config_json.data(), static_cast<std::streamsize>(ckpt.config_json.size()));
  write_u64(out, ckpt.tensors.size());
  for (const auto& [name, tensor] : ckpt.tensors) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, static_cast<std::uint64_t>(tensor.rank()));
    for (int d : tensor.dims()) write_u64(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(tensor.data()), static_cast<std::streamsize>(tensor.size() * 8));
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

RawCheckpoint load_raw_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error(path + ": not an IDFM checkpoint");
  const std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  RawCheckpoint ckpt;
  ckpt.config_json.resize(read_u64(in));
  in.read(ckpt.config_json.data(), static_cast<std::streamsize>(ckpt.config_json.size()));
  const std::uint64_t count = read_u64(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(read_u64(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const std::uint64_t rank = read_u64(in);
    std::vector<int> dims;
    std::size_t n = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      dims.push_back(static_cast<int>(read_u64(in)));
      n *= static_cast<std::size_t>(dims.back());
    }
    std::vector<double> values(n);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * 8));
    if (!in) throw std::runtime_error(path + ": truncated tensor table");
    ckpt.tensors.emplace_back(std::move(name), Tensor::from_data(std::move(dims), std::move(values)));
  }
  return ckpt;
}

std::vector<std::string> trainable_param_names(ModelState& model) {
  std::vector<std::string> all_names;
  model.visit_params([&](const std::string& name, Tensor&) { all_names.push_back(name); });
  if (model.adapters.empty()) return all_names;
  std::vector<std::string> names;
  for (const auto& [target, _] : model.adapters) {
    names.push_back("lora." + target + ".a");
    names.push_back("lora." + target + ".b");
  }
  return names;
}

void save_model_checkpoint(ModelState& model, const std::string& path, const AdamState* adam) {
  nlohmann::json config;
  config["format"] = kCheckpointVersion;
  config["model"] = nlohmann::json::parse(model_config_json(model.config));
  if (!model.adapters.empty()) {
    nlohmann::json lora;
    lora["targets"] = nlohmann::json::array();
    int rank = 0;
    double alpha = 0.0;
    for (const auto& [target, adapter] : model.adapters) {
      lora["targets"].push_back(target);
      rank = adapter.rank;
      alpha = adapter.alpha;
    }
    lora["rank"] = rank;
    lora["alpha"] = alpha;
    config["lora"] = lora;
  }

  RawCheckpoint ckpt;
  model.visit_params([&](const std::string& name, Tensor& t) { ckpt.tensors.emplace_back(name, t); });
  if (adam != nullptr) {
    const AdamConfig& ac = adam->config();
    config["adam"] = {{"lr", ac.lr},       {"beta1", ac.beta1},           {"beta2", ac.beta2},
                      {"epsilon", ac.epsilon}, {"step_count", adam->step_count()}};
    const std::vector<std::string> names = trainable_param_names(model);
    AdamState& mutable_adam = const_cast<AdamState&>(*adam);
    if (names.size() != mutable_adam.first_moments().size())
      throw std::logic_error("checkpoint: optimizer does not match the trainable parameter set");
    for (std::size_t i = 0; i < names.size(); ++i) {
      std::vector<double> m = mutable_adam.first_moments()[i];
      std::vector<double> v = mutable_adam.second_moments()[i];
      const int n = static_cast<int>(m.size());
      ckpt.tensors.emplace_back("adam.m." + names[i], Tensor::from_data({n}, std::move(m)));
      ckpt.tensors.emplace_back("adam.v." + names[i], Tensor::from_data({n}, std::move(v)));
    }
  }
  ckpt.config_json = config.dump();
  save_raw_checkpoint(ckpt, path);
}

LoadedCheckpoint load_model_checkpoint(const std::string& path) {
  const RawCheckpoint raw = load_raw_checkpoint(path);
  nlohmann::json config = nlohmann::json::parse(raw.config_json);
  LoadedCheckpoint loaded;
  const ModelConfig mc = parse_model_config_json(config.at("model").dump());
  loaded.model = ModelState::init(mc, /*seed=*/0);
  if (config.contains("lora")) {
    std::vector<std::string> targets;
    for (const auto& t : config["lora"]["targets"]) targets.push_back(t.get<std::string>());
    lora_attach(loaded.model, targets, config["lora"]["rank"].get<int>(), config["lora"]["alpha"].get<double>(),
                /*seed=*/0);
  }

  std::unordered_map<std::string, const Tensor*> table;
  for (const auto& [name, tensor] : raw.tensors) table.emplace(name, &tensor);

  loaded.model.visit_params([&](const std::string& name, Tensor& t) {
    const auto it = table.find(name);
    if (it == table.end()) throw std::runtime_error(path + ": checkpoint is missing tensor '" + name + "'");
    const Tensor& stored = *it->second;
    if (stored.size() != t.size())
      throw std::runtime_error(path + ": tensor '" + name + "' has size " + std::to_string(stored.size()) +
                               ", expected " + std::to_string(t.size()));
    std::copy_n(stored.data(), stored.size(), t.data());
  });

  if (config.contains("adam")) {
    loaded.has_adam = true;
    const nlohmann::json& ja = config["adam"];
    loaded.adam_config.lr = ja.at("lr").get<double>();
    loaded.adam_config.beta1 = ja.at("beta1").get<double>();
    loaded.adam_config.beta2 = ja.at("beta2").get<double>();
    loaded.adam_config.epsilon = ja.at("epsilon").get<double>();
    loaded.step_count = ja.at("step_count").get<std::int64_t>();
    for (const std::string& name : trainable_param_names(loaded.model)) {
      const auto mi = table.find("adam.m." + name);
      const auto vi = table.find("adam.v." + name);
      if (mi == table.end() || vi == table.end())
        throw std::runtime_error(path + ": checkpoint is missing optimizer moments for '" + name + "'");
      loaded.adam_m.emplace_back(name, std::vector<double>(mi->second->data(), mi->second->data() + mi->second->size()));
      loaded.adam_v.emplace_back(name, std::vector<double>(vi->second->data(), vi->second->data() + vi->second->size()));
    }
  }
  return loaded;
}

AdamState LoadedCheckpoint::restore_adam(ModelState& model) const {
  std::vector<Tensor> trainable = model.trainable_params();
  AdamState adam(adam_config, trainable);
  if (adam_m.size() != trainable.size())
    throw std::logic_error("restore_adam: moment count does not match trainable parameters");
  for (std::size_t i = 0; i < adam_m.size(); ++i) {
    adam.first_moments()[i] = adam_m[i].second;
    adam.second_moments()[i] = adam_v[i].second;
  }
  adam.set_step_count(step_count);
  return adam;
}

}  // namespace idfm
