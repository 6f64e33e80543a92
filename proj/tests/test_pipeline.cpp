#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <set>

#include "dctm/checkpoint.hpp"
#include "dctm/complexity.hpp"
#include "dctm/config.hpp"
#include "dctm/pipeline.hpp"
#include "dctm/synth.hpp"
#include "fixtures.hpp"

using namespace dctm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string pointer_of(const json& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError& e) {
    return e.pointer();
  }
  return "";
}

RunConfig micro_run() {
  RunConfig cfg;
  cfg.data = "unused.hsic";
  cfg.model = testing::micro_config();
  cfg.model.lambda_reg = 0.1;
  cfg.optimizer.batch_size = 8;
  cfg.optimizer.epochs = 1;
  return cfg;
}

std::vector<std::size_t> first(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

TEST_CASE("config: defaults and strictness") {
  const auto c = parse_run_config({{"data", "scene.hsic"}});
  CHECK(c.data == "scene.hsic");
  CHECK(c.seed == 0);
  CHECK(c.train_fraction == 0.1);
  CHECK(c.model.ssdm.stem_channels == 27);
  CHECK(c.model.ssdm.patch_spatial == 13);
  CHECK(c.model.mamba.d_model == 64);
  CHECK(c.model.mamba.d_state == 16);
  CHECK(c.model.ablation == Ablation::full);
  CHECK(c.optimizer.lr == 1e-3);
  CHECK(c.optimizer.batch_size == 64);
  CHECK(c.optimizer.epochs == 100);

  CHECK(pointer_of(json::object()) == "/data");
  CHECK(pointer_of({{"data", ""}}) == "/data");
  CHECK(pointer_of({{"data", "x"}, {"sead", 1}}) == "/sead");
  CHECK(pointer_of({{"data", "x"}, {"model", {{"d_modle", 8}}}}) == "/model/d_modle");
  CHECK(pointer_of({{"data", "x"}, {"optimizer", {{"lr", "fast"}}}}) == "/optimizer/lr");
  CHECK(pointer_of({{"data", "x"}, {"seed", -1}}) == "/seed");
  CHECK(pointer_of({{"data", "x"}, {"seed", 1.5}}) == "/seed");
  CHECK(pointer_of({{"data", 3}}) == "/data");
  CHECK(pointer_of({{"data", "x"}, {"model", {{"patch_spatial", 4}}}}) == "/model/patch_spatial");
  CHECK(pointer_of({{"data", "x"}, {"model", {{"stem_channels", 16}}}}) == "/model/stem_channels");
  CHECK(pointer_of({{"data", "x"}, {"model", {{"ablation", "half"}}}}) == "/model/ablation");
  CHECK(pointer_of({{"data", "x"}, {"model", 7}}) == "/model");
  CHECK(pointer_of({{"data", "x"}, {"train_fraction", 0.0}}) == "/train_fraction");
  CHECK(pointer_of({{"data", "x"}, {"optimizer", {{"beta2", 1.0}}}}) == "/optimizer/beta2");
  CHECK_THROWS_AS(parse_run_config(json::array()), ConfigError);

  // to_json is the inverse of parsing.
  RunConfig r = micro_run();
  r.seed = 77;
  r.model.ablation = Ablation::no_gre;
  r.optimizer.max_steps = 9;
  const auto back = parse_run_config(to_json(r));
  CHECK(to_json(back) == to_json(r));
}

TEST_CASE("checkpoint: byte identity and resumption") {
  auto cube = std::make_shared<HsiCube>(testing::random_cube(6, 6, 8, 2, 5));
  const auto set = extract_patches(cube, 5);
  const auto cfg = micro_run();
  auto state = TrainState::init(cfg.model, cfg.optimizer, 11);
  auto opt = cfg.optimizer;
  opt.max_steps = 3;
  train(state, set, opt);
  REQUIRE(state.adam.steps() == 3);

  const json meta = {{"note", "x"}};
  const auto ck = make_checkpoint(state, cfg, meta);
  const auto bytes = encode_checkpoint(ck);
  CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);

  const auto path = (fs::temp_directory_path() / "dctm_ck.dcm").string();
  save_checkpoint(path, ck);
  CHECK(read_file(path) == bytes);
  const auto loaded = load_checkpoint(path);
  CHECK(loaded.meta == meta);
  CHECK(loaded.step == 3);
  CHECK(to_json(checkpoint_config(loaded)) == to_json(cfg));

  auto restored = restore_state(loaded);
  CHECK(encode_checkpoint(make_checkpoint(restored, cfg, meta)) == bytes);

  const auto idx = first(6);
  const auto x = set.batch<float>(idx);
  const auto a = state.model.forward(x).logits;
  const auto b = restored.model.forward(x).logits;
  REQUIRE(a.numel() == b.numel());
  CHECK(std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0);

  // Continuing from the restored state follows the uninterrupted run.
  opt.max_steps = 6;
  const auto cont_a = train(state, set, opt);
  const auto cont_b = train(restored, set, opt);
  CHECK(cont_a == cont_b);
  CHECK(cont_a.size() == 3);

  auto broken = bytes;
  broken[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(broken), FormatError);
  broken = bytes;
  broken.pop_back();
  CHECK_THROWS_AS(decode_checkpoint(broken), FormatError);
  CHECK_THROWS(ck.tensor("param.nope"));
}

TEST_CASE("synth: determinism and band correlation") {
  SynthConfig sc;
  sc.height = sc.width = 32;
  sc.seed = 4;
  const auto a = synthesize(sc);
  CHECK(encode_container(a) == encode_container(synthesize(sc)));
  sc.seed = 5;
  CHECK(encode_container(a) != encode_container(synthesize(sc)));

  std::set<int> present(a.labels.begin(), a.labels.end());
  CHECK(present == std::set<int>{1, 2, 3, 4});
  CHECK(a.num_classes() == 4);

  sc.band_correlation = 0.0;
  CHECK(std::abs(adjacent_band_noise_correlation(synthesize(sc))) < 0.1);
  sc.band_correlation = 0.9;
  CHECK(adjacent_band_noise_correlation(synthesize(sc)) == doctest::Approx(0.9).epsilon(0.05));

  sc.band_correlation = 1.0;
  CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
  sc.band_correlation = -0.1;
  CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
  sc.band_correlation = 0.5;
  sc.classes = 0;
  CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
}

TEST_CASE("complexity: parameters match the model") {
  for (auto mode : all_ablations()) {
    CAPTURE(to_string(mode));
    auto cfg = testing::micro_config(mode);
    Rng rng(1);
    auto model = Model<float>::init(cfg, rng);
    std::map<std::string, std::uint64_t> counted;
    model.visit([&](const std::string& name, Tensor<float>& p) {
      std::string m = module_of(name);
      const bool ssdm_head = name.rfind("head.ssdm", 0) == 0;
      const bool wired = mode == Ablation::ssdm_only ? (m == "ssdm" || ssdm_head)
                                                      : !ssdm_head && !(mode == Ablation::no_gre && m == "gre");
      if (wired) counted[m] += p.numel();
    });
    const auto c = count_complexity(cfg);
    REQUIRE(c.modules.size() == 4);
    for (const auto& row : c.modules) CHECK(row.params == counted[row.module]);
  }
}

TEST_CASE("complexity: hand counts") {
  auto cfg = testing::micro_config();
  const auto c = count_complexity(cfg);
  std::map<std::string, ModuleCost> by;
  for (const auto& m : c.modules) by[m.module] = m;
  // 27 stem outputs over 8 x 5 x 5 voxels, then 27 kernels of 27 taps.
  CHECK(by["ssdm"].macs == 27ull * 200 + 27ull * 27 * 200);
  CHECK(by["ssdm"].params == 4 * 27);
  CHECK(by["head"].params == 4 * 2 + 2);
  CHECK(by["head"].macs == 4 * 2);
  CHECK(by["gre"].params == 27 * 4 + 4 + 1);
  CHECK(by["gre"].macs == 200ull * 27 * 4);
  CHECK(c.total_params() == by["ssdm"].params + by["mamba3d"].params + by["gre"].params + by["head"].params);

  cfg.ablation = Ablation::mamba_only;
  CHECK(count_complexity(cfg).modules[0].macs == 27ull * 200);
  cfg.ablation = Ablation::no_gre;
  CHECK(count_complexity(cfg).modules[2].params == 0);
  cfg.ablation = Ablation::ssdm_only;
  const auto s = count_complexity(cfg);
  CHECK(s.modules[1].params == 0);
  CHECK(s.modules[3].params == 27 * 2 + 2);

  // A single scan direction costs tokens * (d^2 + 5dn + d); doubling d_state
  // adds 5 d n per token for each of the four scans.
  auto wide = testing::micro_config();
  wide.mamba.d_state = 4;
  const std::uint64_t d = 4, n = 2, tokens = 2 * 25 + 2 * 8;
  CHECK(count_complexity(wide).modules[1].macs - by["mamba3d"].macs == tokens * 5 * d * n);

  const auto csv = complexity_csv(c);
  CHECK(csv.rfind("module,params,macs\n", 0) == 0);
  CHECK(csv.find("total," + std::to_string(c.total_params()) + "," + std::to_string(c.total_macs())) !=
        std::string::npos);
}

TEST_CASE("pipeline: csv files and experiment determinism") {
  const auto dir = fs::temp_directory_path() / "dctm_pipeline";
  fs::create_directories(dir);
  const std::vector<double> curve{0.6931471805599453, 0.1 + 0.2, 1e-300, 12345.678};
  write_loss_csv((dir / "loss.csv").string(), curve);
  CHECK(read_loss_csv((dir / "loss.csv").string()) == curve);

  const auto cube = testing::random_cube(8, 8, 8, 2, 3);
  auto cfg = micro_run();
  cfg.train_fraction = 0.5;
  cfg.optimizer.max_steps = 4;
  const auto a = run_experiment(cfg, cube);
  const auto b = run_experiment(cfg, cube);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.test.predictions == b.test.predictions);
  CHECK(a.loss_curve.size() == 4);
  CHECK(a.data.split.train.size() + a.data.split.test.size() == 64);
  CHECK(stats_from_meta(checkpoint_meta(a.data)).mean == a.data.stats.mean);

  const auto rows = run_ablation(cfg, cube, all_ablations(), {0, 1});
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) CHECK(r.seeds == 2);
  write_ablation_csv((dir / "ablation.csv").string(), rows);
  std::ifstream in(dir / "ablation.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "mode,oa,aa,kappa,seeds");
  CHECK(lines[1].rfind("full,", 0) == 0);
}

TEST_CASE("pipeline: correlation heatmaps") {
  auto cube = testing::random_cube(6, 7, 5, 2, 8);
  // Band 3 duplicates band 1.
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 7; ++c) cube.reflectance[(r * 7 + c) * 5 + 3] = cube.at(r, c, 1);
  const auto m = raw_band_correlation(cube);
  REQUIRE(m.rows() == 5);
  CHECK(m(1, 3) == doctest::Approx(1.0));
  for (int i = 0; i < 5; ++i) {
    CHECK(m(i, i) == doctest::Approx(1.0));
    for (int j = 0; j < 5; ++j) CHECK(m(i, j) == m(j, i));
  }

  auto mc = testing::micro_config();
  mc.bands = 5;
  Rng rng(2);
  const auto model = Model<float>::init(mc, rng);
  const auto s = ssdm_channel_correlation(cube, model.stem, mc.ssdm);
  CHECK(s.rows() == 27);
  CHECK(s(4, 4) == doctest::Approx(1.0));
}
