#include <fstream>
#include <functional>
#include <map>

#include "l2tkt/cli.hpp"
#include "l2tkt/error.hpp"

namespace l2tkt::cli {

using nlohmann::json;

json to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  return json{
      {"layout_version", kRunLayoutVersion},
      {"seed", c.seed},
      {"data", c.data.string()},
      {"out", c.out.string()},
      {"baseline_ckpt", c.baseline_ckpt.string()},
      {"baseline_epochs", c.baseline_epochs},
      {"n_labeled", c.synth.n_labeled},
      {"n_auxiliary", c.synth.n_auxiliary},
      {"image_size", c.synth.image_size},
      {"label_noise_rate", c.synth.label_noise_rate},
      {"split", c.split},
      {"block_widths", c.encoder.block_widths},
      {"feature_dim", c.encoder.feature_dim},
      {"lambda_s", t.lambda_s},
      {"lambda_t", t.lambda_t},
      {"batch_size_aux", t.batch_size_aux},
      {"batch_size_tp", t.batch_size_tp},
      {"batch_size_qp", t.batch_size_qp},
      {"epochs", t.epochs},
      {"bce_epsilon", t.bce_epsilon},
      {"second_order", t.second_order},
      {"centered", t.centered},
      {"test_mode", t.test_mode},
      {"alpha", t.pool.alpha},
      {"gamma", t.pool.gamma},
      {"sigma", t.pool.sigma},
      {"mu", t.pool.mu},
      {"pool_fraction", t.pool.pool_fraction},
      {"cadence", to_string(t.pool.cadence)},
      {"pool", to_string(t.pool.mode)},
      {"student_optimizer", to_string(t.student_optimizer)},
      {"adam_lr", t.adam.lr},
  };
}

namespace {

template <typename T>
T as(const json& value, const std::string& key) {
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!value.is_number_integer() || value.get<long long>() < 0) throw UsageError("");
    } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!value.is_number_integer()) throw UsageError("");
    }
    return value.get<T>();
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "' has an invalid value " + value.dump());
  }
}

using Setter = std::function<void(RunConfig&, const json&, const std::string&)>;

template <typename T, typename Field>
Setter set(Field field) {
  return [field](RunConfig& c, const json& v, const std::string& key) {
    field(c) = as<T>(v, key);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table{
      {"layout_version",
       [](RunConfig&, const json& v, const std::string& key) {
         if (as<int>(v, key) != kRunLayoutVersion) {
           throw UsageError("unsupported run layout version " + v.dump());
         }
       }},
      {"seed", set<std::uint64_t>([](RunConfig& c) -> auto& { return c.seed; })},
      {"data", [](RunConfig& c, const json& v, const std::string& k) { c.data = as<std::string>(v, k); }},
      {"out", [](RunConfig& c, const json& v, const std::string& k) { c.out = as<std::string>(v, k); }},
      {"baseline_ckpt",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.baseline_ckpt = as<std::string>(v, k);
       }},
      {"baseline_epochs", set<int>([](RunConfig& c) -> auto& { return c.baseline_epochs; })},
      {"n_labeled", set<std::size_t>([](RunConfig& c) -> auto& { return c.synth.n_labeled; })},
      {"n_auxiliary", set<std::size_t>([](RunConfig& c) -> auto& { return c.synth.n_auxiliary; })},
      {"image_size",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.synth.image_size = as<std::size_t>(v, k);
         c.encoder.image_size = c.synth.image_size;
       }},
      {"label_noise_rate",
       set<double>([](RunConfig& c) -> auto& { return c.synth.label_noise_rate; })},
      {"split", set<std::array<double, 3>>([](RunConfig& c) -> auto& { return c.split; })},
      {"block_widths",
       set<std::vector<std::size_t>>([](RunConfig& c) -> auto& { return c.encoder.block_widths; })},
      {"feature_dim", set<std::size_t>([](RunConfig& c) -> auto& { return c.encoder.feature_dim; })},
      {"lambda_s", set<double>([](RunConfig& c) -> auto& { return c.train.lambda_s; })},
      {"lambda_t", set<double>([](RunConfig& c) -> auto& { return c.train.lambda_t; })},
      {"batch_size_aux",
       set<std::size_t>([](RunConfig& c) -> auto& { return c.train.batch_size_aux; })},
      {"batch_size_tp", set<std::size_t>([](RunConfig& c) -> auto& { return c.train.batch_size_tp; })},
      {"batch_size_qp", set<std::size_t>([](RunConfig& c) -> auto& { return c.train.batch_size_qp; })},
      {"epochs", set<int>([](RunConfig& c) -> auto& { return c.train.epochs; })},
      {"bce_epsilon", set<double>([](RunConfig& c) -> auto& { return c.train.bce_epsilon; })},
      {"second_order", set<bool>([](RunConfig& c) -> auto& { return c.train.second_order; })},
      {"centered", set<bool>([](RunConfig& c) -> auto& { return c.train.centered; })},
      {"test_mode", set<bool>([](RunConfig& c) -> auto& { return c.train.test_mode; })},
      {"alpha", set<double>([](RunConfig& c) -> auto& { return c.train.pool.alpha; })},
      {"gamma", set<double>([](RunConfig& c) -> auto& { return c.train.pool.gamma; })},
      {"sigma", set<double>([](RunConfig& c) -> auto& { return c.train.pool.sigma; })},
      {"mu", set<double>([](RunConfig& c) -> auto& { return c.train.pool.mu; })},
      {"pool_fraction", set<double>([](RunConfig& c) -> auto& { return c.train.pool.pool_fraction; })},
      {"cadence",
       [](RunConfig& c, const json& v, const std::string& k) {
         try {
           c.train.pool.cadence = parse_update_cadence(as<std::string>(v, k));
         } catch (const ValidationError& e) {
           throw UsageError(e.what());
         }
       }},
      {"student_optimizer",
       [](RunConfig& c, const json& v, const std::string& k) {
         try {
           c.train.student_optimizer = parse_student_optimizer(as<std::string>(v, k));
         } catch (const ValidationError& e) {
           throw UsageError(e.what());
         }
       }},
      {"adam_lr", set<double>([](RunConfig& c) -> auto& { return c.train.adam.lr; })},
      {"pool",
       [](RunConfig& c, const json& v, const std::string& k) {
         try {
           c.train.pool.mode = parse_pool_mode(as<std::string>(v, k));
         } catch (const ValidationError& e) {
           throw UsageError(e.what());
         }
       }},
  };
  return table;
}

}  // namespace

void merge_json(RunConfig& config, const json& flat) {
  if (!flat.is_object()) throw UsageError("config must be a JSON object");
  for (const auto& [key, value] : flat.items()) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw UsageError("unknown config key '" + key + "'");
    it->second(config, value, key);
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json parsed;
  try {
    parsed = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig config = experiment_defaults();
  merge_json(config, parsed);
  return config;
}

void finalize(RunConfig& config) {
  config.synth.seed = config.seed;
  config.train.seed = config.seed;
  config.encoder.input_channels = kImageChannels;
  config.encoder.image_size = config.synth.image_size;
  try {
    config.encoder.validate();
    config.train.validate();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  if (config.baseline_epochs < -1) throw UsageError("baseline_epochs must be >= 0");
}

RunConfig experiment_defaults() {
  RunConfig c;
  c.train.lambda_s = 0.01;
  c.train.lambda_t = 1e-5;
  c.train.epochs = 40;
  c.train.student_optimizer = StudentOptimizer::adam;
  c.train.adam.lr = 0.003;
  c.train.pool.pool_fraction = 0.05;
  return c;
}

}  // namespace l2tkt::cli
