#include "cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "dctm/complexity.hpp"
#include "dctm/pipeline.hpp"
#include "dctm/synth.hpp"

namespace dctm::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool starts_with(const std::vector<std::uint8_t>& bytes, std::string_view prefix) {
  return bytes.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), bytes.begin());
}

void write_predictions(const std::string& path, const PatchSet& set, const std::vector<int>& preds) {
  std::vector<int> labels;
  for (int p : preds) labels.push_back(p + 1);
  write_label_map(path, set.coords(), labels);
}

void write_outputs(const fs::path& dir, const Evaluation& e, const PreparedData& data) {
  fs::create_directories(dir);
  write_report(e.scores, data.class_names, (dir / "report").string());
  write_predictions((dir / "predictions.csv").string(), data.split.test, e.predictions);
}

// ---- commands -----------------------------------------------------------

struct ConvertArgs {
  std::string input, output, cube_var, label_var;
};

int cmd_convert(const ConvertArgs& a, std::ostream& out) {
  const auto bytes = read_file(a.input);
  HsiCube cube;
  if (starts_with(bytes, "HSIC")) {
    cube = decode_container(bytes);
    write_file(a.output, bytes);
  } else {
    if (a.cube_var.empty() || a.label_var.empty())
      throw UsageError("MAT input needs --cube-var and --label-var");
    cube = cube_from_mat(parse_mat_v5(bytes), a.cube_var, a.label_var);
    write_container(a.output, cube);
  }
  out << "wrote " << a.output << ": " << cube.height << "x" << cube.width << "x" << cube.bands << ", "
      << cube.num_classes() << " classes\n";
  return 0;
}

int cmd_synth(const SynthConfig& cfg, const std::string& output, std::ostream& out) {
  const auto cube = synthesize(cfg);
  write_container(output, cube);
  out << "wrote " << output << ": " << cube.height << "x" << cube.width << "x" << cube.bands << ", "
      << cube.num_classes() << " classes, adjacent-band noise correlation "
      << adjacent_band_noise_correlation(cube) << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, std::ostream& out) {
  const auto cfg = load_run_config(config_path);
  const auto cube = read_container(cfg.data);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const auto ck_path = (dir / "checkpoint.dcm").string();

  RunHooks hooks;
  std::size_t steps_in_epoch = 0;
  double epoch_loss = 0;
  hooks.on_step = [&](const StepInfo& s) {
    ++steps_in_epoch;
    epoch_loss += s.loss;
  };
  hooks.on_epoch = [&](const TrainState& s, const RunConfig& rc, const PreparedData& data) {
    out << "epoch " << s.epoch << " step " << s.step << " mean loss " << epoch_loss / double(steps_in_epoch) << "\n";
    steps_in_epoch = 0;
    epoch_loss = 0;
    if (rc.checkpoint_every && s.epoch % rc.checkpoint_every == 0)
      save_checkpoint(ck_path, make_checkpoint(s, rc, checkpoint_meta(data)));
  };
  const auto r = run_experiment(cfg, cube, hooks);
  save_checkpoint(ck_path, make_checkpoint(r.state, r.config, checkpoint_meta(r.data)));
  write_loss_csv((dir / "loss.csv").string(), r.loss_curve);
  write_outputs(dir, r.test, r.data);
  out << "test OA " << percent(r.test.scores.oa) << " AA " << percent(r.test.scores.aa) << " Kappa "
      << percent(r.test.scores.kappa) << " (n=" << r.test.scores.n << ")\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& out_dir, std::ostream& out) {
  const auto ck = load_checkpoint(checkpoint);
  const auto cfg = checkpoint_config(ck);
  const auto state = restore_state(ck);
  const auto cube = read_container(data);
  resolve_model_config(cfg.model, cube);
  const auto prepared =
      prepare_data(cube, cfg.model.ssdm.patch_spatial, cfg.train_fraction, cfg.seed, stats_from_meta(ck.meta));
  const auto e = evaluate(state.model, prepared.split.test, cfg.eval_batch);
  write_outputs(out_dir, e, prepared);
  out << "test OA " << percent(e.scores.oa) << " AA " << percent(e.scores.aa) << " Kappa " << percent(e.scores.kappa)
      << " (n=" << e.scores.n << ")\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& mode, const std::vector<std::uint64_t>& seeds_in,
               std::string out_path, std::ostream& out) {
  const auto cfg = load_run_config(config_path);
  const auto cube = read_container(cfg.data);
  std::vector<Ablation> modes;
  if (mode == "all") {
    modes = all_ablations();
  } else {
    try {
      modes = {parse_ablation(mode)};
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  const auto seeds = seeds_in.empty() ? std::vector<std::uint64_t>{cfg.seed} : seeds_in;
  if (out_path.empty()) out_path = (fs::path(cfg.output_dir) / "ablation.csv").string();
  if (const auto parent = fs::path(out_path).parent_path(); !parent.empty()) fs::create_directories(parent);
  const auto rows = run_ablation(cfg, cube, modes, seeds, [&](const std::string& line) { out << line << "\n"; });
  write_ablation_csv(out_path, rows);
  for (const auto& r : rows) out << to_string(r.mode) << ": OA " << percent(r.oa) << "\n";
  return 0;
}

int cmd_heatmap(const std::string& data, const std::string& stage, const std::string& checkpoint,
                const std::string& out_path, std::ostream& out) {
  if (stage != "raw" && stage != "ssdm") throw UsageError("--stage must be raw or ssdm");
  if (stage == "ssdm" && checkpoint.empty()) throw UsageError("--stage ssdm requires --checkpoint");
  const auto cube = read_container(data);
  Eigen::MatrixXd m;
  if (stage == "raw") {
    m = raw_band_correlation(cube);
  } else {
    const auto ck = load_checkpoint(checkpoint);
    const auto state = restore_state(ck);
    const auto stats = stats_from_meta(ck.meta);
    m = ssdm_channel_correlation(normalize(cube, stats), state.model.stem, state.model.config.ssdm);
  }
  write_correlation_csv(out_path, m);
  out << "mean |off-diagonal|: " << std::setprecision(6) << mean_abs_off_diagonal(m) << "\n";
  return 0;
}

int cmd_complexity(const std::string& config_path, const std::string& out_path, std::ostream& out) {
  auto cfg = load_run_config(config_path);
  if (cfg.model.bands == 0 || cfg.model.num_classes == 0) cfg.model = resolve_model_config(cfg.model, read_container(cfg.data));
  const auto table = complexity_csv(count_complexity(cfg.model));
  out << table;
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("cannot write " + out_path);
    f << table;
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hyperspectral classification with a DCT decorrelation stage and bidirectional state-space blocks"};
  app.require_subcommand(1);

  ConvertArgs conv;
  auto* convert = app.add_subcommand("convert", "Convert a MAT-v5 or HSIC file into an HSIC container");
  convert->add_option("--input", conv.input, "Input file")->required()->check(CLI::ExistingFile);
  convert->add_option("--output", conv.output, "Output container")->required();
  convert->add_option("--cube-var", conv.cube_var, "MAT variable holding the H x W x C cube");
  convert->add_option("--label-var", conv.label_var, "MAT variable holding the H x W labels");

  SynthConfig synth_cfg;
  std::vector<std::size_t> size{64, 64};
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene");
  synth->add_option("--classes", synth_cfg.classes, "Number of classes")->capture_default_str();
  synth->add_option("--bands", synth_cfg.bands, "Number of bands")->capture_default_str();
  synth->add_option("--size", size, "Height and width")->expected(2)->capture_default_str();
  synth->add_option("--band-correlation", synth_cfg.band_correlation, "Adjacent-band AR(1) coefficient")
      ->capture_default_str();
  synth->add_option("--noise", synth_cfg.noise, "Noise standard deviation")->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed, "Random seed")->capture_default_str();
  synth->add_option("--output", synth_out, "Output container")->required();

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train on the configured scene and evaluate the test split");
  train->add_option("--config", config_path, "Run configuration (JSON)")->required();

  std::string checkpoint, data, eval_out = "eval";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split of a scene");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "Scene container")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "Output directory")->capture_default_str();

  std::string mode = "all", ablate_out;
  std::vector<std::uint64_t> seeds;
  auto* ablate = app.add_subcommand("ablate", "Train every ablation mode and tabulate test scores");
  ablate->add_option("--config", config_path, "Run configuration (JSON)")->required();
  ablate->add_option("--mode", mode, "all, full, ssdm_only, mamba_only or no_gre")->capture_default_str();
  ablate->add_option("--seeds", seeds, "Seeds to average over (default: config seed)")->delimiter(',');
  ablate->add_option("--out", ablate_out, "Output CSV (default: <output_dir>/ablation.csv)");

  std::string stage = "raw", heat_out;
  auto* heatmap = app.add_subcommand("heatmap", "Export a Spearman band-correlation matrix");
  heatmap->add_option("--data", data, "Scene container")->required()->check(CLI::ExistingFile);
  heatmap->add_option("--stage", stage, "raw or ssdm")->capture_default_str();
  heatmap->add_option("--checkpoint", checkpoint, "Checkpoint (required for --stage ssdm)");
  heatmap->add_option("--out", heat_out, "Output CSV")->required();

  std::string complexity_out;
  auto* complexity = app.add_subcommand("complexity", "Count parameters and multiply-adds per module");
  complexity->add_option("--config", config_path, "Run configuration (JSON)")->required();
  complexity->add_option("--out", complexity_out, "Optional CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (convert->parsed()) return cmd_convert(conv, out);
    if (synth->parsed()) {
      if (size.size() != 2) throw UsageError("--size takes height and width");
      synth_cfg.height = size[0];
      synth_cfg.width = size[1];
      try {
        synth_cfg.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      return cmd_synth(synth_cfg, synth_out, out);
    }
    if (train->parsed()) return cmd_train(config_path, out);
    if (eval->parsed()) return cmd_eval(checkpoint, data, eval_out, out);
    if (ablate->parsed()) return cmd_ablate(config_path, mode, seeds, ablate_out, out);
    if (heatmap->parsed()) return cmd_heatmap(data, stage, checkpoint, heat_out, out);
    if (complexity->parsed()) return cmd_complexity(config_path, complexity_out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace dctm::cli
