#include "idfm/config.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace idfm {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::invalid_argument("config: " + path + ": " + what);
}

void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> known) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok) fail(path + "." + key, "unknown key");
  }
}

template <typename T>
void read_field(const json& j, const std::string& path, const char* name, T& out) {
  if (!j.contains(name)) return;
  const json& v = j[name];
  if constexpr (std::is_same_v<T, int>) {
    if (!v.is_number_integer()) fail(path + "." + name, "expected an integer");
  } else if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) fail(path + "." + name, "expected a number");
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (!v.is_number_unsigned() && !v.is_number_integer()) fail(path + "." + name, "expected an integer");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) fail(path + "." + name, "expected a string");
  }
  out = v.get<T>();
}

json model_to_json(const ModelConfig& m) {
  return json{{"image_h", m.image_h},     {"image_w", m.image_w},       {"channels", m.channels},
              {"patch", m.patch},         {"d_model", m.d_model},       {"heads", m.heads},
              {"num_layers", m.num_layers}, {"early_count", m.early_count}, {"late_count", m.late_count},
              {"embed_dim", m.embed_dim}, {"ff_hidden", m.ff_hidden},   {"time_dim", m.time_dim},
              {"utility_len", m.utility_len}, {"vocab_size", m.vocab_size}, {"max_str_len", m.max_str_len}};
}

ModelConfig model_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  reject_unknown(j, path,
                 {"image_h", "image_w", "channels", "patch", "d_model", "heads", "num_layers", "early_count",
                  "late_count", "embed_dim", "ff_hidden", "time_dim", "utility_len", "vocab_size", "max_str_len"});
  ModelConfig m;
  read_field(j, path, "image_h", m.image_h);
  read_field(j, path, "image_w", m.image_w);
  read_field(j, path, "channels", m.channels);
  read_field(j, path, "patch", m.patch);
  read_field(j, path, "d_model", m.d_model);
  read_field(j, path, "heads", m.heads);
  read_field(j, path, "num_layers", m.num_layers);
  read_field(j, path, "early_count", m.early_count);
  read_field(j, path, "late_count", m.late_count);
  // embed_dim tracks d_model unless given explicitly
  m.embed_dim = m.d_model;
  read_field(j, path, "embed_dim", m.embed_dim);
  read_field(j, path, "ff_hidden", m.ff_hidden);
  read_field(j, path, "time_dim", m.time_dim);
  read_field(j, path, "utility_len", m.utility_len);
  read_field(j, path, "vocab_size", m.vocab_size);
  read_field(j, path, "max_str_len", m.max_str_len);
  m.validate();
  return m;
}

}  // namespace

std::string model_config_json(const ModelConfig& config) { return model_to_json(config).dump(); }

ModelConfig parse_model_config_json(const std::string& text) {
  return model_from_json(json::parse(text), "model");
}

RunConfig parse_run_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: parse error: ") + e.what());
  }
  if (!j.is_object()) fail("$", "expected an object");
  reject_unknown(j, "$", {"seed", "model", "sampler", "schedule", "train", "lora"});

  RunConfig rc;
  read_field(j, "$", "seed", rc.seed);
  read_field(j, "$", "schedule", rc.schedule);
  if (j.contains("model")) rc.model = model_from_json(j["model"], "model");
  if (j.contains("sampler")) {
    const json& js = j["sampler"];
    if (!js.is_object()) fail("sampler", "expected an object");
    reject_unknown(js, "sampler", {"steps"});
    read_field(js, "sampler", "steps", rc.sampler_steps);
    if (rc.sampler_steps < 1) fail("sampler.steps", "must be >= 1");
  }
  if (j.contains("train")) {
    const json& jt = j["train"];
    if (!jt.is_object()) fail("train", "expected an object");
    reject_unknown(jt, "train", {"lr", "beta1", "beta2", "epsilon", "batch_size", "steps"});
    read_field(jt, "train", "lr", rc.adam.lr);
    read_field(jt, "train", "beta1", rc.adam.beta1);
    read_field(jt, "train", "beta2", rc.adam.beta2);
    read_field(jt, "train", "epsilon", rc.adam.epsilon);
    read_field(jt, "train", "batch_size", rc.batch_size);
    read_field(jt, "train", "steps", rc.train_steps);
    if (rc.batch_size < 1) fail("train.batch_size", "must be >= 1");
    if (rc.train_steps < 0) fail("train.steps", "must be >= 0");
  }
  if (j.contains("lora")) {
    const json& jl = j["lora"];
    if (!jl.is_object()) fail("lora", "expected an object");
    reject_unknown(jl, "lora", {"rank", "alpha"});
    read_field(jl, "lora", "rank", rc.lora_rank);
    read_field(jl, "lora", "alpha", rc.lora_alpha);
    if (rc.lora_rank < 1) fail("lora.rank", "must be >= 1");
  }
  // Validates the schedule spec early so bad configs fail before training.
  schedule_from_spec(rc.schedule, rc.model);
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config_json(text);
}

std::string run_config_json(const RunConfig& config) {
  json j;
  j["seed"] = config.seed;
  j["model"] = model_to_json(config.model);
  j["sampler"] = {{"steps", config.sampler_steps}};
  j["schedule"] = config.schedule;
  j["train"] = {{"lr", config.adam.lr},           {"beta1", config.adam.beta1},
                {"beta2", config.adam.beta2},     {"epsilon", config.adam.epsilon},
                {"batch_size", config.batch_size}, {"steps", config.train_steps}};
  j["lora"] = {{"rank", config.lora_rank}, {"alpha", config.lora_alpha}};
  return j.dump(2) + "\n";
}

LayerSchedule schedule_from_spec(const std::string& spec, const ModelConfig& config) {
  auto parse_regime = [&](const std::string& tok) {
    if (tok == "dis") return Regime::dis;
    if (tok == "har") return Regime::har;
    throw std::invalid_argument("schedule spec: unknown regime '" + tok + "' in '" + spec + "'");
  };
  if (spec == "default")
    return schedule_bands(config.num_layers, config.early_count, config.late_count, Regime::har, Regime::dis,
                          Regime::har);
  if (spec == "all-dis")
    return schedule(config.num_layers, config.early_count, config.late_count,
                    std::vector<Regime>(static_cast<std::size_t>(config.num_layers), Regime::dis));
  if (spec == "all-har")
    return schedule(config.num_layers, config.early_count, config.late_count,
                    std::vector<Regime>(static_cast<std::size_t>(config.num_layers), Regime::har));
  const std::size_t d1 = spec.find('-');
  const std::size_t d2 = d1 == std::string::npos ? std::string::npos : spec.find('-', d1 + 1);
  if (d2 == std::string::npos)
    throw std::invalid_argument("schedule spec '" + spec + "': expected early-mid-late, all-dis or all-har");
  const Regime e = parse_regime(spec.substr(0, d1));
  const Regime m = parse_regime(spec.substr(d1 + 1, d2 - d1 - 1));
  const Regime l = parse_regime(spec.substr(d2 + 1));
  return schedule_bands(config.num_layers, config.early_count, config.late_count, e, m, l);
}

}  // namespace idfm
