#include "nfr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "nfr/checkpoint.hpp"
#include "nfr/csv.hpp"
#include "nfr/data.hpp"
#include "nfr/diagnostics.hpp"
#include "nfr/error.hpp"
#include "nfr/seeding.hpp"

namespace nfr {

using nlohmann::json;

bool DfrSchedule::fires_after(std::size_t epoch) const {
  if (std::find(epochs.begin(), epochs.end(), epoch) != epochs.end()) return true;
  if (every > 0 && epoch <= until && epoch % every == 0) return true;
  if (then_every > 0 && epoch > until && (epoch - until) % then_every == 0) return true;
  return false;
}

std::vector<std::size_t> TrainConfig::resolved_widths() const {
  if (!widths.empty()) return widths;
  std::vector<std::size_t> w;
  for (std::size_t l = 1; l <= depth; ++l) w.push_back(base_width << (depth - l));
  return w;
}

void TrainConfig::validate() const {
  if (depth == 0) throw ValueError("config: L must be at least 1");
  if (!widths.empty() && widths.size() != depth) throw ValueError("config: widths must list one entry per layer");
  for (auto w : resolved_widths())
    if (w == 0) throw ValueError("config: widths must be positive");
  if (batch_size == 0) throw ValueError("config: batch_size must be positive");
  if (loss != LossKind::Squared)
    throw ValueError("config: the synthetic regression task supports the squared loss only");
  optimizer.validate();
  regularizer.validate(depth);
  prox.validate();
  for (auto e : dfr.epochs)
    if (e == 0 || e > epochs) throw ValueError("config: DFR epoch " + std::to_string(e) + " is outside the run");
  if (data.train_csv.empty() && data.n_train == 0) throw ValueError("config: n_train must be positive");
  if (!(data.lo < data.hi)) throw ValueError("config: data range needs lo < hi");
  if (data.variance_batch == 0) throw ValueError("config: variance_batch must be positive");
  if (!(init_gain > 0.0)) throw ValueError("config: init_gain must be positive");
  if (!(init_const_gain > 0.0)) throw ValueError("config: init_const_gain must be positive");
}

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  if (!obj.is_object()) throw ValueError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ValueError("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

RegularizerSpec parse_regularizer(const json& j, std::size_t depth) {
  reject_unknown(j, {"preset", "lambda", "lambda_u", "o1", "o2", "o3"}, "regularizer");
  RegularizerSpec spec = RegularizerSpec::preset(j.value("preset", std::string("L12")), depth, 1e-4);
  read(j, "o1", spec.o1);
  read(j, "o2", spec.o2);
  read(j, "o3", spec.o3);
  if (j.contains("lambda")) {
    const auto& lam = j.at("lambda");
    if (lam.is_array()) {
      spec.lambda = lam.get<std::vector<double>>();
    } else {
      spec.lambda.assign(depth, lam.get<double>());
      if (!j.contains("lambda_u")) spec.lambda_u = lam.get<double>();
    }
  }
  read(j, "lambda_u", spec.lambda_u);
  return spec;
}

std::string preset_name(const RegularizerSpec& s) {
  if (s.o1 == 1.0 && s.o2 == 2.0 && s.o3 == 2.0) return "L12";
  if (s.o1 == 2.0 && s.o2 == 1.0 && s.o3 == 2.0) return "L21";
  if (s.o1 == 0.5 && s.o2 == 4.0 && s.o3 == 2.0) return "L_half_4";
  return "";
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValueError(std::string("config is not valid JSON: ") + e.what());
  }
  TrainConfig cfg;
  try {
    reject_unknown(j,
                   {"L", "base_width", "widths", "activation", "loss", "optimizer", "batch_size", "epochs",
                    "regularizer", "dfr", "prox", "seeds", "data", "init_gain", "init_const_gain", "record_wall_clock"},
                   "config");
    read(j, "L", cfg.depth);
    read(j, "base_width", cfg.base_width);
    read(j, "widths", cfg.widths);
    if (j.contains("activation")) cfg.activation = parse_activation(j.at("activation").get<std::string>());
    if (j.contains("loss")) {
      const auto name = j.at("loss").get<std::string>();
      if (name == "squared") cfg.loss = LossKind::Squared;
      else if (name == "logistic") cfg.loss = LossKind::Logistic;
      else throw ValueError("config: unknown loss '" + name + "'");
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      reject_unknown(o, {"kind", "lr", "beta1", "beta2", "eps", "fan_in_scaling"}, "optimizer");
      const auto kind = o.value("kind", std::string("adam"));
      if (kind == "adam") cfg.optimizer.kind = OptimizerKind::Adam;
      else if (kind == "sgd") cfg.optimizer.kind = OptimizerKind::Sgd;
      else throw ValueError("config: unknown optimizer '" + kind + "'");
      read(o, "lr", cfg.optimizer.lr);
      read(o, "beta1", cfg.optimizer.beta1);
      read(o, "beta2", cfg.optimizer.beta2);
      read(o, "eps", cfg.optimizer.eps);
      read(o, "fan_in_scaling", cfg.optimizer.fan_in_scaling);
    }
    read(j, "batch_size", cfg.batch_size);
    read(j, "epochs", cfg.epochs);
    cfg.regularizer = parse_regularizer(j.value("regularizer", json::object()), cfg.depth);
    if (j.contains("dfr")) {
      const auto& d = j.at("dfr");
      reject_unknown(d, {"epochs", "every", "until", "then_every"}, "dfr");
      read(d, "epochs", cfg.dfr.epochs);
      read(d, "every", cfg.dfr.every);
      read(d, "until", cfg.dfr.until);
      read(d, "then_every", cfg.dfr.then_every);
    }
    if (j.contains("prox")) {
      const auto& p = j.at("prox");
      reject_unknown(p, {"step", "iterations", "tolerance", "floor", "max_halvings"}, "prox");
      read(p, "step", cfg.prox.step);
      read(p, "iterations", cfg.prox.iterations);
      read(p, "tolerance", cfg.prox.tolerance);
      read(p, "floor", cfg.prox.floor);
      read(p, "max_halvings", cfg.prox.max_halvings);
    }
    if (j.contains("seeds")) {
      const auto& s = j.at("seeds");
      reject_unknown(s, {"init", "data", "resample"}, "seeds");
      read(s, "init", cfg.seeds.init);
      read(s, "data", cfg.seeds.data);
      read(s, "resample", cfg.seeds.resample);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      reject_unknown(d, {"n_train", "n_test", "lo", "hi", "constant_input", "train_csv", "test_csv", "variance_batch"},
                     "data");
      read(d, "n_train", cfg.data.n_train);
      read(d, "n_test", cfg.data.n_test);
      read(d, "lo", cfg.data.lo);
      read(d, "hi", cfg.data.hi);
      read(d, "constant_input", cfg.data.constant_input);
      read(d, "train_csv", cfg.data.train_csv);
      read(d, "test_csv", cfg.data.test_csv);
      read(d, "variance_batch", cfg.data.variance_batch);
    }
    read(j, "init_gain", cfg.init_gain);
    read(j, "init_const_gain", cfg.init_const_gain);
    read(j, "record_wall_clock", cfg.record_wall_clock);
  } catch (const json::exception& e) {
    throw ValueError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("config not found: '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string train_config_to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["L"] = cfg.depth;
  j["base_width"] = cfg.base_width;
  j["widths"] = cfg.resolved_widths();
  j["activation"] = to_string(cfg.activation);
  j["loss"] = cfg.loss == LossKind::Squared ? "squared" : "logistic";
  j["optimizer"] = {{"kind", cfg.optimizer.kind == OptimizerKind::Adam ? "adam" : "sgd"},
                    {"lr", cfg.optimizer.lr},
                    {"beta1", cfg.optimizer.beta1},
                    {"beta2", cfg.optimizer.beta2},
                    {"eps", cfg.optimizer.eps},
                    {"fan_in_scaling", cfg.optimizer.fan_in_scaling}};
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  nlohmann::ordered_json reg;
  if (const auto name = preset_name(cfg.regularizer); !name.empty()) reg["preset"] = name;
  reg["o1"] = cfg.regularizer.o1;
  reg["o2"] = cfg.regularizer.o2;
  reg["o3"] = cfg.regularizer.o3;
  reg["lambda"] = cfg.regularizer.lambda;
  reg["lambda_u"] = cfg.regularizer.lambda_u;
  j["regularizer"] = reg;
  j["dfr"] = {{"epochs", cfg.dfr.epochs},
              {"every", cfg.dfr.every},
              {"until", cfg.dfr.until},
              {"then_every", cfg.dfr.then_every}};
  j["prox"] = {{"step", cfg.prox.step},
               {"iterations", cfg.prox.iterations},
               {"tolerance", cfg.prox.tolerance},
               {"floor", cfg.prox.floor},
               {"max_halvings", cfg.prox.max_halvings}};
  j["seeds"] = {{"init", cfg.seeds.init}, {"data", cfg.seeds.data}, {"resample", cfg.seeds.resample}};
  j["data"] = {{"n_train", cfg.data.n_train},         {"n_test", cfg.data.n_test},
               {"lo", cfg.data.lo},                   {"hi", cfg.data.hi},
               {"constant_input", cfg.data.constant_input}, {"train_csv", cfg.data.train_csv},
               {"test_csv", cfg.data.test_csv},       {"variance_batch", cfg.data.variance_batch}};
  j["init_gain"] = cfg.init_gain;
  j["init_const_gain"] = cfg.init_const_gain;
  j["record_wall_clock"] = cfg.record_wall_clock;
  return j.dump(2);
}

void write_metrics_csv(const std::vector<MetricsRecord>& metrics, const std::string& path) {
  CsvWriter out(path, {"epoch", "train_rmse", "test_rmse", "reg_value", "variance", "seconds"});
  for (const auto& m : metrics) {
    const double values[] = {m.train_rmse, m.test_rmse, m.reg_value, m.variance, m.seconds};
    out.row(static_cast<long long>(m.epoch), values);
  }
}

double rmse(const Network& net, const Matrix& inputs, std::span<const double> targets) {
  const std::size_t n = inputs.rows(), k_out = net.output_dim();
  if (targets.size() != n * k_out) throw DimensionError("targets do not match the inputs");
  if (n == 0) return 0.0;
  constexpr std::size_t chunk = 256;
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t len = std::min(chunk, n - start);
    Matrix part(len, inputs.cols());
    std::copy_n(inputs.row(start).data(), len * inputs.cols(), part.data());
    const Matrix out = forward_batch(net, part).output;
    for (std::size_t b = 0; b < len; ++b)
      for (std::size_t c = 0; c < k_out; ++c) {
        const double d = out(b, c) - targets[(start + b) * k_out + c];
        total += d * d;
      }
  }
  return std::sqrt(total / static_cast<double>(n));
}

TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();

  const Dataset train_set = cfg.data.train_csv.empty()
                                ? gen_data(cfg.data.n_train, cfg.data.lo, cfg.data.hi, derive_seed(cfg.seeds.data, 1))
                                : read_dataset_csv(cfg.data.train_csv);
  const Dataset test_set = cfg.data.test_csv.empty()
                               ? gen_data(cfg.data.n_test, cfg.data.lo, cfg.data.hi, derive_seed(cfg.seeds.data, 2))
                               : read_dataset_csv(cfg.data.test_csv);
  const Dataset held_out = gen_data(cfg.data.variance_batch, cfg.data.lo, cfg.data.hi, derive_seed(cfg.seeds.data, 3));
  if (train_set.size() == 0) throw ValueError("training set is empty");

  const std::size_t input_dim = cfg.data.constant_input ? 2 : 1;
  const Matrix x_train = embed_inputs(train_set.x, input_dim);
  const Matrix x_test = embed_inputs(test_set.x, input_dim);
  const Matrix x_var = embed_inputs(held_out.x, input_dim);

  InitSpec init{input_dim, cfg.resolved_widths(), 1, cfg.activation, cfg.init_gain,
                cfg.data.constant_input ? cfg.init_const_gain : 1.0};
  TrainResult result{init_network(init, cfg.seeds.init), {}};
  Network& net = result.net;
  Network last_good = net;
  Optimizer opt(cfg.optimizer, net);
  Gradients grads = Gradients::zeros_like(net);

  std::mt19937_64 shuffle_rng(derive_seed(cfg.seeds.data, 4));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto fail = [&](const std::string& why) {
    if (!hooks.divergence_checkpoint.empty()) checkpoint_save(last_good, hooks.divergence_checkpoint);
    throw DivergenceError(why);
  };

  const std::size_t n = train_set.size(), batch = cfg.batch_size;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    try {
      for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t len = std::min(batch, n - start);
        Matrix xb(len, input_dim);
        for (std::size_t b = 0; b < len; ++b) std::ranges::copy(x_train.row(order[start + b]), xb.row(b).begin());
        const ForwardTrace trace = forward_batch(net, xb);
        Matrix d_out(len, 1);
        for (std::size_t b = 0; b < len; ++b)
          d_out(b, 0) = 2.0 * (trace.output(b, 0) - train_set.y[order[start + b]]) / static_cast<double>(len);
        grads.set_zero();
        accumulate_gradients(net, trace, d_out, grads);
        add_reg_grad(net, cfg.regularizer, 1.0, grads);
        opt.step(net, grads);
      }
    } catch (const DivergenceError& e) {
      fail("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }

    MetricsRecord rec;
    rec.epoch = epoch;
    if (cfg.dfr.fires_after(epoch)) {
      const ImportanceWeights p = solve_weights(net, cfg.regularizer, cfg.prox);
      net = resample(net, p, derive_seed(cfg.seeds.resample, epoch));
      opt.reset();
      rec.repopulated = true;
    }
    rec.train_rmse = rmse(net, x_train, train_set.y);
    rec.test_rmse = test_set.size() ? rmse(net, x_test, test_set.y) : 0.0;
    rec.reg_value = total_reg(net, cfg.regularizer);
    if (!std::isfinite(rec.train_rmse) || !std::isfinite(rec.reg_value))
      fail("training diverged in epoch " + std::to_string(epoch) + ": loss is not finite");
    rec.variance = approx_variance(net, x_var);
    if (cfg.record_wall_clock) rec.seconds = std::chrono::duration<double>(clock::now() - started).count();
    result.metrics.push_back(rec);
    last_good = net;
    if (hooks.on_epoch) hooks.on_epoch(rec, net);
  }
  return result;
}

}  // namespace nfr
