#include "nfr/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "nfr/checkpoint.hpp"
#include "nfr/csv.hpp"
#include "nfr/data.hpp"
#include "nfr/diagnostics.hpp"
#include "nfr/error.hpp"
#include "nfr/repopulation.hpp"
#include "nfr/sampling.hpp"
#include "nfr/seeding.hpp"
#include "nfr/trainer.hpp"

namespace nfr {

namespace fs = std::filesystem;

namespace {

constexpr double kTwoPi = 6.283185307179586;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Output files of one command; every name is checked before any work starts.
class Outputs {
 public:
  Outputs(const std::string& dir, bool force) : dir_(dir), force_(force) {}

  std::string claim(const std::string& name) {
    const fs::path path = dir_ / name;
    if (!force_ && fs::exists(path)) throw UsageError("refusing to overwrite '" + path.string() + "' (use --force)");
    return path.string();
  }

  void prepare() const { fs::create_directories(dir_); }

 private:
  fs::path dir_;
  bool force_;
};

TrainConfig config_or_default(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  if (!fs::exists(path)) throw UsageError("config not found: '" + path + "'");
  return load_train_config(path);
}

Network load_net(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("checkpoint not found: '" + path + "'");
  return checkpoint_load(path);
}

// The regularizer of a config, re-expanded if the config was written for a
// different depth than the checkpoint.
RegularizerSpec spec_for(const TrainConfig& cfg, const Network& net) {
  RegularizerSpec spec = cfg.regularizer;
  if (spec.lambda.size() != net.depth()) {
    const double lam = spec.lambda.empty() ? 0.0 : spec.lambda.front();
    if (!std::all_of(spec.lambda.begin(), spec.lambda.end(), [&](double v) { return v == lam; }))
      throw ValueError("config lists " + std::to_string(spec.lambda.size()) + " layer penalties but the network has " +
                       std::to_string(net.depth()) + " layers");
    spec.lambda.assign(net.depth(), lam);
  }
  spec.validate(net.depth());
  return spec;
}

Matrix scalar_inputs(const Network& net, std::span<const double> x) {
  if (net.input_dim() > 2) throw DimensionError("scalar-input commands need a network with input_dim 1 or 2");
  return embed_inputs(x, net.input_dim());
}

void write_json(const nlohmann::ordered_json& j, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Base seed for every random draw of the command");
  cmd->add_option("--out-dir", c.out_dir, "Directory for output files")->capture_default_str();
  cmd->add_flag("--force", c.force, "Overwrite existing output files");
}

struct GenDataArgs {
  Common common;
  std::size_t n = 0;
  double lo = -kTwoPi, hi = kTwoPi;
  std::string name = "data.csv";
};

int gen_data_cmd(const GenDataArgs& a, std::ostream& out) {
  Outputs files(a.common.out_dir, a.common.force);
  const std::string path = files.claim(a.name);
  files.prepare();
  write_dataset_csv(gen_data(a.n, a.lo, a.hi, a.common.seed.value_or(0)), path);
  out << "wrote " << path << '\n';
  return kExitOk;
}

struct TrainArgs {
  Common common;
  std::string config;
  std::optional<std::size_t> epochs;
  bool quiet = false;
};

int train_cmd(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = config_or_default(a.config);
  if (a.common.seed) {
    const std::uint64_t s = *a.common.seed;
    cfg.seeds = Seeds{derive_seed(s, 1), derive_seed(s, 2), derive_seed(s, 3)};
  }
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.validate();

  Outputs files(a.common.out_dir, a.common.force);
  const std::string metrics_path = files.claim("metrics.csv");
  const std::string ckpt_path = files.claim("checkpoint.nfr");
  const std::string config_path = files.claim("config.json");
  const std::string timing_path = files.claim("timing.json");
  const std::string diverged_path = files.claim("last_good.nfr");
  files.prepare();
  {
    std::ofstream cfg_out(config_path, std::ios::trunc);
    cfg_out << train_config_to_json(cfg) << '\n';
  }

  const auto started = std::chrono::steady_clock::now();
  TrainHooks hooks;
  hooks.divergence_checkpoint = diverged_path;
  if (!a.quiet)
    hooks.on_epoch = [&](const MetricsRecord& r, const Network&) {
      out << "epoch " << r.epoch << " train_rmse " << format_double(r.train_rmse) << " reg "
          << format_double(r.reg_value) << (r.repopulated ? " (repopulated)" : "") << '\n';
    };
  const TrainResult result = train(cfg, hooks);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  write_metrics_csv(result.metrics, metrics_path);
  checkpoint_save(result.net, ckpt_path);
  nlohmann::ordered_json timing;
  timing["seconds"] = seconds;
  timing["epochs"] = cfg.epochs;
  write_json(timing, timing_path);
  out << "wrote " << metrics_path << " and " << ckpt_path << '\n';
  return kExitOk;
}

struct RepopulateArgs {
  Common common;
  std::string checkpoint;
  std::string config;
};

int repopulate_cmd(const RepopulateArgs& a, std::ostream& out) {
  const TrainConfig cfg = config_or_default(a.config);
  const Network net = load_net(a.checkpoint);
  const RegularizerSpec spec = spec_for(cfg, net);

  Outputs files(a.common.out_dir, a.common.force);
  const std::string ckpt_path = files.claim("repopulated.nfr");
  std::vector<std::string> weight_paths;
  for (std::size_t l = 1; l <= net.depth(); ++l) weight_paths.push_back(files.claim("weights_layer" + std::to_string(l) + ".csv"));
  files.prepare();

  const ProxResult solved = solve_weights_traced(net, spec, cfg.prox);
  const Network next = resample(net, solved.weights, a.common.seed.value_or(0));
  checkpoint_save(next, ckpt_path);
  for (std::size_t l = 1; l <= net.depth(); ++l) {
    CsvWriter csv(weight_paths[l - 1], {"neuron_index", "p_value"});
    const auto& p = solved.weights.layers[l - 1];
    for (std::size_t j = 0; j < p.size(); ++j) csv.row(static_cast<long long>(j), std::span<const double>(&p[j], 1));
  }
  out << "weighted regularizer " << format_double(solved.objective.front()) << " -> "
      << format_double(solved.objective.back()) << " in " << solved.objective.size() - 1 << " iterations\n";
  out << "wrote " << ckpt_path << '\n';
  return kExitOk;
}

struct DiagnoseArgs {
  Common common;
  std::string checkpoint;
  std::string config;
  std::string metrics;
  std::size_t epoch = 0;
  std::size_t thresholds = 101;
};

bool is_l12(const RegularizerSpec& s) { return s.o1 == 1.0 && s.o2 == 2.0 && s.o3 == 2.0; }

int diagnose_cmd(const DiagnoseArgs& a, std::ostream& out) {
  const TrainConfig cfg = config_or_default(a.config);
  const Network net = load_net(a.checkpoint);
  const RegularizerSpec spec = spec_for(cfg, net);
  if (a.thresholds < 2) throw UsageError("--thresholds needs at least 2 points");

  Outputs files(a.common.out_dir, a.common.force);
  const std::string variance_path = files.claim("variance.csv");
  std::vector<std::string> kkt_paths, sparsity_paths;
  for (std::size_t l = 1; l <= net.depth(); ++l) {
    if (is_l12(spec)) kkt_paths.push_back(files.claim("kkt_layer" + std::to_string(l) + ".csv"));
    sparsity_paths.push_back(files.claim("sparsity_layer" + std::to_string(l) + ".csv"));
  }
  files.prepare();

  {
    CsvWriter csv(variance_path, {"epoch", "V"});
    if (!a.metrics.empty()) {
      const CsvTable table = read_csv(a.metrics);
      const auto col = [&](const std::string& name) {
        const auto it = std::find(table.header.begin(), table.header.end(), name);
        if (it == table.header.end()) throw FormatError("metrics file has no '" + name + "' column");
        return static_cast<std::size_t>(it - table.header.begin());
      };
      const std::size_t e = col("epoch"), v = col("variance");
      for (const auto& row : table.rows) csv.row(std::llround(row[e]), std::span<const double>(&row[v], 1));
    } else {
      const std::uint64_t data_seed = a.common.seed.value_or(cfg.seeds.data);
      const Dataset held_out = gen_data(cfg.data.variance_batch, cfg.data.lo, cfg.data.hi, derive_seed(data_seed, 3));
      const double v = approx_variance(net, scalar_inputs(net, held_out.x));
      csv.row(static_cast<long long>(a.epoch), std::span<const double>(&v, 1));
      out << "V = " << format_double(v) << '\n';
    }
  }

  for (std::size_t l = 1; l <= net.depth(); ++l) {
    if (is_l12(spec)) {
      const auto pairs = kkt_pairs(net, spec, l);
      CsvWriter csv(kkt_paths[l - 1], {"neuron", "u_val", "v_val"});
      for (const auto& p : pairs) {
        const double vals[] = {p.u_val, p.v_val};
        csv.row(static_cast<long long>(p.neuron), vals);
      }
      try {
        out << "layer " << l << " kkt pearson " << format_double(pearson(pairs)) << '\n';
      } catch (const ValueError& e) {
        out << "layer " << l << " kkt pearson undefined: " << e.what() << '\n';
      }
    }
    const Matrix& w = net.weights[l - 1];
    double top = 0.0;
    for (double v : w.values()) top = std::max(top, std::fabs(v));
    std::vector<double> ts(a.thresholds);
    for (std::size_t i = 0; i < ts.size(); ++i)
      ts[i] = i + 1 == ts.size() ? top : top * static_cast<double>(i) / static_cast<double>(ts.size() - 1);
    const auto fractions = sparsity_cdf(w, ts);
    CsvWriter csv(sparsity_paths[l - 1], {"threshold", "fraction"});
    for (std::size_t i = 0; i < ts.size(); ++i) csv.row({ts[i], fractions[i]});
  }
  if (!is_l12(spec)) out << "kkt estimates need the L12 exponents; kkt_layer files skipped\n";
  out << "wrote diagnostics to " << a.common.out_dir << '\n';
  return kExitOk;
}

struct StudyArgs {
  Common common;
  std::string checkpoint;
  std::vector<std::size_t> widths{64, 128, 256, 512};
  std::size_t trials = 200;
  std::size_t batch = 64;
  double lo = -kTwoPi, hi = kTwoPi;
  bool omit_slope = false;
};

int study_cmd(const StudyArgs& a, std::ostream& out) {
  const Network net = load_net(a.checkpoint);
  if (a.trials < 2) throw UsageError("--trials needs at least 2 for standard errors");
  if (a.widths.empty()) throw UsageError("--widths is empty");

  Outputs files(a.common.out_dir, a.common.force);
  const std::string study_path = files.claim("study.csv");
  const std::string terms_path = files.claim("leading_terms.csv");
  const std::string summary_path = files.claim("summary.json");
  files.prepare();

  const std::uint64_t seed = a.common.seed.value_or(0);
  const Matrix inputs = scalar_inputs(net, gen_data(a.batch, a.lo, a.hi, derive_seed(seed, 1)).x);
  const MasterSurrogate master{net};
  const StudyResult study = variance_study(master, a.widths, a.trials, inputs, derive_seed(seed, 2));
  const LeadingTerms terms = leading_terms(master, inputs, !a.omit_slope);

  {
    CsvWriter csv(study_path, {"m", "mean_l1", "se_l1", "mean_mse", "se_mse"});
    for (const auto& r : study.rows) {
      const double vals[] = {r.mean_l1, r.se_l1.value_or(NAN), r.mean_mse, r.se_mse.value_or(NAN)};
      csv.row(static_cast<long long>(r.width), vals);
    }
  }
  {
    CsvWriter csv(terms_path, {"layer", "C_value"});
    for (std::size_t l = 0; l < terms.layer.size(); ++l)
      csv.row(static_cast<long long>(l + 1), std::span<const double>(&terms.layer[l], 1));
    csv.row(static_cast<long long>(net.depth()), std::span<const double>(&terms.top, 1));
  }
  nlohmann::ordered_json summary;
  summary["slope"] = study.slope ? nlohmann::ordered_json(*study.slope) : nlohmann::ordered_json(nullptr);
  summary["trials"] = a.trials;
  summary["widths"] = a.widths;
  summary["leading_total"] = terms.total();
  auto& predicted = summary["predicted_m_mse"] = nlohmann::ordered_json::array();
  for (const auto& r : study.rows) {
    const std::vector<std::size_t> w(net.depth(), r.width);
    predicted.push_back({{"m", r.width},
                         {"measured", static_cast<double>(r.width) * r.mean_mse},
                         {"predicted", static_cast<double>(r.width) * terms.predicted_mse(w)}});
  }
  write_json(summary, summary_path);
  if (study.slope) out << "log-log slope " << format_double(*study.slope) << '\n';
  out << "wrote " << study_path << '\n';
  return kExitOk;
}

struct FeaturesArgs {
  Common common;
  std::string checkpoint;
  std::size_t grid = 201;
  double lo = -kTwoPi, hi = kTwoPi;
  std::size_t neurons = 16;
};

int export_features_cmd(const FeaturesArgs& a, std::ostream& out) {
  const Network net = load_net(a.checkpoint);
  if (a.grid < 2) throw UsageError("--grid needs at least 2 points");

  Outputs files(a.common.out_dir, a.common.force);
  std::vector<std::string> paths;
  for (std::size_t l = 1; l <= net.depth(); ++l) paths.push_back(files.claim("features_layer" + std::to_string(l) + ".csv"));
  files.prepare();

  std::vector<double> xs(a.grid);
  for (std::size_t i = 0; i < a.grid; ++i)
    xs[i] = i + 1 == a.grid ? a.hi : a.lo + (a.hi - a.lo) * static_cast<double>(i) / static_cast<double>(a.grid - 1);
  const Matrix grid = scalar_inputs(net, xs);
  std::mt19937_64 rng(a.common.seed.value_or(0));
  for (std::size_t l = 1; l <= net.depth(); ++l) {
    std::vector<std::size_t> all(net.width(l));
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::size_t> chosen;
    if (a.neurons >= all.size()) {
      chosen = all;
    } else {
      std::sample(all.begin(), all.end(), std::back_inserter(chosen), a.neurons, rng);
    }
    const Matrix f = feature_functions(net, l, grid, chosen);
    std::vector<std::string> header{"x"};
    for (auto j : chosen) header.push_back("f_" + std::to_string(j));
    CsvWriter csv(paths[l - 1], header);
    std::vector<double> row(chosen.size() + 1);
    for (std::size_t i = 0; i < a.grid; ++i) {
      row[0] = xs[i];
      for (std::size_t c = 0; c < chosen.size(); ++c) row[c + 1] = f(i, c);
      csv.row(row);
    }
  }
  out << "wrote features for " << net.depth() << " layers\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mean-field deep networks: training, feature repopulation and diagnostics", "nfr"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic x,y dataset");
  add_common(gen_cmd, gen.common);
  gen_cmd->add_option("--n", gen.n, "Number of samples")->required();
  gen_cmd->add_option("--lo", gen.lo, "Lower end of the x range")->capture_default_str();
  gen_cmd->add_option("--hi", gen.hi, "Upper end of the x range")->capture_default_str();
  gen_cmd->add_option("--name", gen.name, "Output file name")->capture_default_str();

  TrainArgs tr;
  auto* train_sub = app.add_subcommand("train", "Train a network from a JSON config");
  add_common(train_sub, tr.common);
  train_sub->add_option("--config", tr.config, "Training config (JSON)")->required();
  train_sub->add_option("--epochs", tr.epochs, "Override the configured epoch count");
  train_sub->add_flag("--quiet", tr.quiet, "No per-epoch progress lines");

  RepopulateArgs rep;
  auto* rep_sub = app.add_subcommand("repopulate", "Solve importance weights and resample a checkpoint");
  add_common(rep_sub, rep.common);
  rep_sub->add_option("--checkpoint", rep.checkpoint, "Input checkpoint")->required();
  rep_sub->add_option("--config", rep.config, "Config supplying the regularizer and prox settings");

  DiagnoseArgs diag;
  auto* diag_sub = app.add_subcommand("diagnose", "Variance, KKT and sparsity diagnostics of a checkpoint");
  add_common(diag_sub, diag.common);
  diag_sub->add_option("--checkpoint", diag.checkpoint, "Checkpoint to analyse")->required();
  diag_sub->add_option("--config", diag.config, "Config supplying the regularizer and data range");
  diag_sub->add_option("--metrics", diag.metrics, "Take the variance series from this metrics.csv");
  diag_sub->add_option("--epoch", diag.epoch, "Epoch label for the checkpoint's variance row")->capture_default_str();
  diag_sub->add_option("--thresholds", diag.thresholds, "Points of each sparsity curve")->capture_default_str();

  StudyArgs st;
  auto* study_sub = app.add_subcommand("study", "Subsampling study of a master network");
  add_common(study_sub, st.common);
  study_sub->add_option("--checkpoint", st.checkpoint, "Master network")->required();
  study_sub->add_option("--widths", st.widths, "Subsample widths")->delimiter(',')->capture_default_str();
  study_sub->add_option("--trials", st.trials, "Trials per width")->capture_default_str();
  study_sub->add_option("--batch", st.batch, "Input points")->capture_default_str();
  study_sub->add_option("--lo", st.lo, "Lower end of the x range")->capture_default_str();
  study_sub->add_option("--hi", st.hi, "Upper end of the x range")->capture_default_str();
  study_sub->add_flag("--omit-slope", st.omit_slope, "Leading terms without the activation slope factor");

  FeaturesArgs feat;
  auto* feat_sub = app.add_subcommand("export-features", "Tabulate hidden feature functions on an x grid");
  add_common(feat_sub, feat.common);
  feat_sub->add_option("--checkpoint", feat.checkpoint, "Checkpoint")->required();
  feat_sub->add_option("--grid", feat.grid, "Grid points")->capture_default_str();
  feat_sub->add_option("--lo", feat.lo, "Lower end of the grid")->capture_default_str();
  feat_sub->add_option("--hi", feat.hi, "Upper end of the grid")->capture_default_str();
  feat_sub->add_option("--neurons", feat.neurons, "Neurons per layer (random subset when fewer than the width)")
      ->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return gen_data_cmd(gen, out);
    if (*train_sub) return train_cmd(tr, out);
    if (*rep_sub) return repopulate_cmd(rep, out);
    if (*diag_sub) return diagnose_cmd(diag, out);
    if (*study_sub) return study_cmd(st, out);
    if (*feat_sub) return export_features_cmd(feat, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace nfr
