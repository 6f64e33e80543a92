// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <chrono>
#include <cli.hpp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "dctm/checkpoint.hpp"
#include "dctm/dct3d.hpp"
#include "dctm/metrics.hpp"
#include "dctm/pipeline.hpp"
#include "dctm/synth.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dctm;
using namespace dctm::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

fs::path workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "dctm_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int cli_run(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "dctm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str() + e.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---- 1: DCT ---------------------------------------------------------------

void dct_correctness(Outcome& o) {
  const auto basis = DctBasis3D::make(3, 3, 3);
  double gram = 0;
  for (std::size_t p = 0; p < 27; ++p)
    for (std::size_t q = 0; q < 27; ++q) {
      double dot = 0;
      for (std::size_t v = 0; v < 27; ++v) dot += basis.kernel(p)[v] * basis.kernel(q)[v];
      gram = std::max(gram, std::abs(dot - (p == q ? 1.0 : 0.0)));
    }
  o.require(gram <= 1e-6, "Gram");

  Rng rng(101);
  double round_trip = 0, parseval = 0, direct = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t nd = 1 + rng.index(8), nh = 1 + rng.index(8), nw = 1 + rng.index(8);
    const auto b = DctBasis3D::make(nd, nh, nw);
    const auto x = random_tensor({nd, nh, nw}, rng, -5, 5);
    const auto f = dct3_forward(x, b);
    const auto back = dct3_inverse(f, b);
    double ex = 0, ef = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      round_trip = std::max(round_trip, std::abs(back[i] - x[i]));
      ex += x[i] * x[i];
      ef += f.coefficients[i] * f.coefficients[i];
    }
    parseval = std::max(parseval, std::abs(ex - ef) / ex);
    for (std::size_t i = 0; i < nd; ++i)
      for (std::size_t j = 0; j < nh; ++j)
        for (std::size_t k = 0; k < nw; ++k)
          direct = std::max(direct, std::abs(f.coefficients[(i * nh + j) * nw + k] -
                                             direct_coefficient(x, nd, nh, nw, i, j, k)));
  }
  o.require(round_trip <= 1e-6, "round trip");
  o.require(parseval <= 1e-5, "Parseval");
  o.require(direct <= 1e-6, "separable vs direct");
  o.detail << "gram " << gram << ", round trip " << round_trip << ", parseval " << parseval << ", direct " << direct;
}

// ---- 2: scan ----------------------------------------------------------------

void scan_correctness(Outcome& o) {
  Rng rng(202);
  double worst = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t L = 1 + rng.index(8), n = 1 + rng.index(2), d = 1 + rng.index(4), B = 1 + rng.index(2);
    const auto p = random_ssm_params(d, n, rng);
    const auto u = random_tensor({B, L, d}, rng, -2, 2);
    for (auto dir : {ScanDirection::forward, ScanDirection::backward}) {
      const auto y = selective_scan(u, p, dir);
      const auto ref = unrolled_scan(u, p, dir == ScanDirection::backward);
      for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(y[i] - ref[i]));
    }
    const auto back = selective_scan(u, p, ScanDirection::backward);
    const auto mirrored = reverse_tokens(selective_scan(reverse_tokens(u), p, ScanDirection::forward));
    o.require(std::memcmp(back.data().data(), mirrored.data().data(), back.numel() * sizeof(double)) == 0,
              "reversal identity");
  }
  o.require(worst <= 1e-6, "recurrence");

  // d y_s / d u_t vanishes for s < t in the forward direction and for s > t
  // in the backward direction, and is nonzero on the permitted side.
  bool causal = true, reaches = true;
  for (auto dir : {ScanDirection::forward, ScanDirection::backward}) {
    const auto p = random_ssm_params(3, 2, rng);
    const std::size_t L = 7;
    for (std::size_t s = 0; s < L; ++s) {
      auto u = random_tensor({1, L, 3}, rng).set_requires_grad(true);
      Tape tape;
      TapeScope scope(tape);
      const auto y = selective_scan(u, p, dir);
      Tensor<double> mask({1, L, 3}, 0.0);
      for (std::size_t c = 0; c < 3; ++c) mask[s * 3 + c] = 1.0;
      tape.backward(sum(mul(y, mask)));
      for (std::size_t t = 0; t < L; ++t) {
        double mass = 0;
        for (std::size_t c = 0; c < 3; ++c) mass += std::abs(u.grad()[t * 3 + c]);
        const bool allowed = dir == ScanDirection::forward ? t <= s : t >= s;
        if (!allowed && mass != 0.0) causal = false;
        if (allowed && mass == 0.0) reaches = false;
      }
    }
  }
  o.require(causal, "causality");
  o.require(reaches, "gradient reaches earlier tokens");
  o.detail << "max |scan - unrolled| " << worst << " over 500 draws";
}

// ---- 3: gradients -----------------------------------------------------------

void gradient_integrity(Outcome& o) {
  Rng rng(303);
  double worst = 0;
  std::string worst_name;
  auto check = [&](const std::string& name, std::vector<Tensor<double>> params, auto&& loss, double h = 1e-5) {
    const auto r = grad_check(std::move(params), loss, h);
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = name + " " + r.worst;
    }
    o.require(r.max_rel_error <= 1e-3, name + " " + r.worst);
  };

  auto x = random_tensor({2, 3, 4}, rng, -2, 2);
  auto g3 = random_tensor({3}, rng), b3 = random_tensor({3}, rng), g4 = random_tensor({4}, rng);
  check("silu", {x}, [&] { return probe(silu(x), 1); });
  check("softplus", {x}, [&] { return probe(softplus(x), 2); });
  check("layer_norm", {x, g3, b3}, [&] { return probe(layer_norm(x, 1, g3, b3, 1e-5), 3); });
  check("softmax", {x}, [&] { return probe(softmax(x, 2), 4); });
  check("mean_axis", {x}, [&] { return probe(mean_axis(x, 1), 5); });
  check("permute", {x}, [&] { return probe(permute(x, {2, 0, 1}), 6); });
  check("scale_channels", {x, g4}, [&] { return probe(scale_channels(x, g4), 7); });
  auto a = random_tensor({3, 5}, rng), m = random_tensor({5, 2}, rng), bias = random_tensor({2}, rng);
  check("matmul", {a, m}, [&] { return probe(matmul(a, m), 8); });
  check("linear", {a, m, bias}, [&] { return probe(linear(a, m, bias), 9); });
  {
    auto in = random_tensor({2, 2, 4, 5, 4}, rng);
    auto k = random_tensor({3, 2, 3, 2, 3}, rng);
    auto kb = random_tensor({3}, rng);
    Conv3dOptions opt;
    opt.stride = 2;
    opt.padding = 1;
    check("conv3d strided", {in, k, kb}, [&] { return probe(conv3d(in, k, opt, kb), 10); });
    auto gin = random_tensor({1, 4, 3, 4, 4}, rng);
    auto gk = random_tensor({4, 1, 3, 3, 3}, rng);
    Conv3dOptions ropt;
    ropt.padding = 1;
    ropt.mode = Padding::reflect;
    ropt.groups = 4;
    check("conv3d grouped reflect", {gin, gk}, [&] { return probe(conv3d(gin, gk, ropt), 11); });
  }
  auto logits = random_tensor({5, 3}, rng, -3, 3);
  const std::vector<int> labels{0, 2, 1, 1, 0};
  check("cross_entropy", {logits}, [&] { return cross_entropy(logits, labels); });
  auto feats = random_tensor({6, 4}, rng);
  check("correlation_penalty", {feats}, [&] { return correlation_penalty(feats); });

  {
    Rng r(3);
    auto sp = StemParams<double>::init(27, r);
    for (auto& v : sp.norm.gain.data()) v = r.uniform(0.5, 1.5);
    for (auto& v : sp.norm.bias.data()) v = r.uniform(-0.5, 0.5);
    auto in = random_tensor({2, 1, 2, 3, 3}, r);
    check("stem", {in, sp.weight, sp.bias, sp.norm.gain, sp.norm.bias}, [&] { return probe(stem(in, sp, 1e-5), 12); });
    auto s = random_tensor({1, 27, 3, 3, 3}, r);
    const auto basis = DctBasis3D::make(3, 3, 3);
    check("ssdm", {s}, [&] { return probe(ssdm_forward(s, basis), 13); });
  }
  {
    auto p = random_ssm_params(3, 2, rng);
    auto u = random_tensor({2, 5, 3}, rng);
    for (auto dir : {ScanDirection::forward, ScanDirection::backward})
      check("selective_scan", {u, p.a_log, p.delta.weight, p.delta.bias, p.b_proj.weight, p.b_proj.bias,
                               p.c_proj.weight, p.c_proj.bias, p.d_skip},
            [&] { return probe(selective_scan(u, p, dir), 14); });
    auto bi = BidirectionalSsm<double>::init(3, 2, rng);
    std::vector<Tensor<double>> params{u};
    bi.visit("bi", [&](const std::string&, Tensor<double>& t) { params.push_back(t); });
    check("bidirectional_ssm", params, [&] { return probe(bidirectional_ssm(u, bi, 1e-5), 15); });
  }
  {
    auto e = PatchEmbedding<double>::init(2, 3, 3, 2, rng);
    auto v = random_tensor({2, 3, 3, 3, 2}, rng);
    std::vector<Tensor<double>> params{v};
    e.visit("e", [&](const std::string&, Tensor<double>& t) { params.push_back(t); });
    check("patch_embeddings", params, [&] {
      auto out = patch_embeddings(v, e);
      return add(add(probe(out.spatial, 16), probe(out.spectral, 17)), probe(out.residual, 18));
    });
    auto agg = AggregationParams<double>::init(4, 0.1);
    auto hs = random_tensor({2, 6, 4}, rng), hv = random_tensor({2, 3, 4}, rng);
    auto res = random_tensor({2, 3, 2, 3, 4}, rng);
    std::vector<Tensor<double>> ap{hs, hv, res};
    agg.visit("a", [&](const std::string&, Tensor<double>& t) { ap.push_back(t); });
    check("aggregate", ap, [&] { return probe(aggregate(hs, hv, res, agg, 1e-5), 19); });

    MambaConfig mc;
    mc.d_model = 4;
    mc.d_state = 2;
    auto block = MambaBlock<double>::init(3, 4, 3, mc, rng);
    auto in = random_tensor({1, 4, 3, 3, 3}, rng);
    std::vector<Tensor<double>> bp{in};
    block.visit("m", [&](const std::string&, Tensor<double>& t) { bp.push_back(t); });
    check("mamba block", bp, [&] { return probe(block.forward(in, 1e-5), 20); });
  }
  {
    auto proj = Linear<double>::init(5, 4, rng);
    auto xf = random_tensor({2, 3, 5}, rng), ym = random_tensor({2, 3, 4}, rng);
    auto alpha = Tensor<double>::scalar(0.3);
    check("gre", {ym, xf, proj.weight, proj.bias, alpha}, [&] { return probe(gre_fuse(ym, xf, proj, alpha), 21); });
    auto pooled = random_tensor({2, 3, 2, 4}, rng);
    check("global_pool", {pooled}, [&] { return probe(global_pool(pooled), 22); });
    auto lg = random_tensor({4, 3}, rng), ft = random_tensor({4, 5}, rng);
    const std::vector<int> l4{0, 1, 2, 1};
    check("composite_loss", {lg, ft}, [&] { return composite_loss(lg, l4, ft, 0.1); });
  }

  for (auto mode : all_ablations()) {
    Rng r(31);
    auto cfg = micro_config(mode);
    cfg.lambda_reg = 0.1;
    auto model = Model<double>::init(cfg, r);
    auto in = random_tensor({2, 1, 8, 5, 5}, r);
    const std::vector<int> l2{1, 0};
    std::vector<Tensor<double>> params;
    model.visit([&](const std::string&, Tensor<double>& t) { params.push_back(t); });
    check("micro model " + to_string(mode), params, [&] { return model.loss(model.forward(in), l2); });
  }
  o.detail << "worst rel err " << worst << " (" << worst_name << ")";
}

// ---- 4: decorrelation -------------------------------------------------------

void decorrelation(Outcome& o) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig sc;
    sc.band_correlation = 0.95;
    sc.seed = seed;
    const auto cube = synthesize(sc);
    std::vector<Coord> all;
    for (std::size_t r = 0; r < cube.height; ++r)
      for (std::size_t c = 0; c < cube.width; ++c) all.push_back({r, c});
    auto cfg = ModelConfig{}.ssdm;
    Rng rng(seed);
    const auto stem_params = StemParams<float>::init(cfg.stem_channels, rng);
    const double raw = mean_abs_off_diagonal(raw_band_correlation(cube));
    const double freq =
        mean_abs_off_diagonal(ssdm_channel_correlation(normalize(cube, band_stats(cube, all)), stem_params, cfg));
    o.require(freq < raw, "seed " + std::to_string(seed));
    o.detail << "seed " << seed << ": raw " << raw << " ssdm " << freq << "; ";
  }
}

// ---- 5, 6: desk-scale learning ---------------------------------------------

constexpr std::size_t kDeskEpochs = 100;

const HsiCube& desk_scene() {
  static const HsiCube cube = [] {
    const auto path = (workdir() / "desk.hsic").string();
    if (cli_run({"synth", "--classes", "4", "--bands", "16", "--size", "64", "64", "--band-correlation", "0.9",
                 "--output", path}) != 0)
      throw std::runtime_error("synth command failed");
    return read_container(path);
  }();
  return cube;
}

RunConfig desk_config() {
  RunConfig cfg;
  cfg.data = "desk.hsic";
  cfg.train_fraction = 0.1;
  cfg.model.ssdm.patch_spatial = 5;
  cfg.model.mamba.d_model = 32;
  cfg.model.mamba.d_state = 8;
  cfg.optimizer.epochs = kDeskEpochs;
  return cfg;
}

void desk_learning(Outcome& o) {
  const auto r = run_experiment(desk_config(), desk_scene());
  const auto& curve = r.loss_curve;
  std::size_t rises = 0;
  double window = 0, previous = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    window += curve[i];
    if (i >= 20) window -= curve[i - 20];
    if (i >= 20 && window > previous) ++rises;
    if (i >= 19) previous = window;
  }
  // Means of consecutive disjoint 20-step blocks, reported alongside.
  std::size_t block_rises = 0;
  double last_block = 0;
  for (std::size_t b = 0; b + 20 <= curve.size(); b += 20) {
    double m = 0;
    for (std::size_t i = b; i < b + 20; ++i) m += curve[i] / 20;
    if (b > 0 && m > last_block) ++block_rises;
    last_block = m;
  }
  o.require(r.test.scores.oa >= 0.95, "OA >= 95%");
  o.require(curve.size() >= 21, "at least 21 steps");
  o.require(rises == 0, "monotone moving average");
  o.detail << "OA " << percent(r.test.scores.oa) << " after " << kDeskEpochs << " epochs, " << curve.size()
           << " steps, sliding-average rises " << rises << ", block-mean rises " << block_rises
           << ", loss " << curve.front() << " -> " << curve.back();
}

void ablation_ordering(Outcome& o) {
  const auto rows = run_ablation(desk_config(), desk_scene(), all_ablations(), {0, 1, 2});
  double full = 0;
  for (const auto& r : rows)
    if (r.mode == Ablation::full) full = r.oa;
  for (const auto& r : rows) {
    o.detail << to_string(r.mode) << " " << percent(r.oa) << " ";
    if (r.mode != Ablation::full) o.require(full >= r.oa, "full >= " + to_string(r.mode));
  }
}

// ---- 7: metrics -------------------------------------------------------------

void metrics_oracle(Outcome& o) {
  ConfusionMatrix cm(2);
  cm(0, 0) = 40;
  cm(0, 1) = 10;
  cm(1, 0) = 20;
  cm(1, 1) = 30;
  const auto s = scores(cm);
  o.require(s.oa == 0.7 && percent(s.oa) == "70.00", "OA 0.7000");
  o.require(std::abs(s.kappa - 0.4) <= 1e-15 && percent(s.kappa) == "40.00", "Kappa 0.4000");
  o.detail << "OA " << s.oa << " Kappa " << s.kappa << "; ";

  Rng rng(707);
  bool ranges = true, equivariant = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng.index(8);
    ConfusionMatrix c(k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) c(i, j) = rng.uniform(0, 1) < 0.3 ? 0 : rng.index(40);
    if (c.total() == 0) c(0, 0) = 1;
    const auto a = scores(c);
    ranges = ranges && a.oa >= 0 && a.oa <= 1 && a.aa >= 0 && a.aa <= 1 && a.kappa >= -1 && a.kappa <= 1;
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    ConfusionMatrix moved(k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) moved(perm[i], perm[j]) = c(i, j);
    const auto b = scores(moved);
    equivariant = equivariant && std::abs(a.oa - b.oa) <= 1e-12 && std::abs(a.aa - b.aa) <= 1e-12 &&
                  std::abs(a.kappa - b.kappa) <= 1e-12;
    for (std::size_t i = 0; i < k; ++i)
      equivariant = equivariant && std::abs(a.f1[i] - b.f1[perm[i]]) <= 1e-12;
  }
  o.require(ranges, "ranges");
  o.require(equivariant, "relabeling equivariance");
  o.detail << "1000 random matrices checked";
}

// ---- 8: formats -------------------------------------------------------------

void format_fidelity(Outcome& o) {
  const auto cube = random_cube(7, 5, 11, 3, 808, true);
  const auto bytes = encode_container(cube);
  o.require(encode_container(decode_container(bytes)) == bytes, "container re-encode");
  const auto path = (workdir() / "fidelity.hsic").string();
  write_container(path, cube);
  o.require(read_file(path) == bytes, "container file");
  o.require(encode_container(read_container(path)) == bytes, "container reload");

  auto cfg = desk_config();
  cfg.model = micro_config();
  auto state = TrainState::init(cfg.model, cfg.optimizer, 5);
  auto set = extract_patches(std::make_shared<HsiCube>(random_cube(6, 6, 8, 2, 9)), 5);
  auto opt = cfg.optimizer;
  opt.batch_size = 8;
  opt.max_steps = 2;
  train(state, set, opt);
  const auto ck = encode_checkpoint(make_checkpoint(state, cfg, {{"k", 1}}));
  const auto ck_path = (workdir() / "fidelity.dcm").string();
  save_checkpoint(ck_path, decode_checkpoint(ck));
  o.require(read_file(ck_path) == ck, "checkpoint file");
  o.require(encode_checkpoint(make_checkpoint(restore_state(load_checkpoint(ck_path)), cfg, {{"k", 1}})) == ck,
            "checkpoint restore");

  const auto arrays = parse_mat_v5(mat_fixture());
  const bool mat_ok = arrays.size() == 2 && arrays[0].name == "A" && arrays[0].mclass == "double" &&
                      arrays[0].dims == std::vector<std::size_t>{2, 3} &&
                      arrays[0].values == std::vector<double>{1, 4, 2, 5, 3, 6} && arrays[1].name == "n" &&
                      arrays[1].mclass == "int32" && arrays[1].values == std::vector<double>{42};
  o.require(mat_ok, "MAT fixture");

  std::size_t named = 0;
  const auto fixtures = malformed_fixtures();
  for (const auto& f : fixtures) {
    try {
      if (f.mat)
        parse_mat_v5(f.bytes);
      else
        decode_container(f.bytes);
      o.require(false, f.name + " accepted");
    } catch (const FormatError& e) {
      const bool ok = e.kind() == f.kind && std::string(e.what()).find(f.message) != std::string::npos;
      o.require(ok, f.name + ": " + e.what());
      named += ok;
    }
  }
  o.detail << named << "/" << fixtures.size() << " malformed fixtures named";
}

// ---- 9: determinism ---------------------------------------------------------

void determinism(Outcome& o) {
  const auto dir = workdir() / "determinism";
  fs::create_directories(dir);
  const auto scene = (dir / "scene.hsic").string();
  o.require(cli_run({"synth", "--size", "24", "24", "--seed", "9", "--output", scene}) == 0, "synth");
  std::string files[2][4];
  for (int run = 0; run < 2; ++run) {
    const auto out = dir / ("run" + std::to_string(run));
    nlohmann::json cfg = {{"data", scene},
                          {"output_dir", out.string()},
                          {"seed", 3},
                          {"train_fraction", 0.2},
                          {"model", {{"patch_spatial", 5}, {"d_model", 8}, {"d_state", 4}, {"lambda_reg", 0.05}}},
                          {"optimizer", {{"epochs", 3}, {"batch_size", 32}}}};
    const auto cfg_path = dir / ("cfg" + std::to_string(run) + ".json");
    std::ofstream(cfg_path) << cfg.dump(2);
    std::string log;
    o.require(cli_run({"train", "--config", cfg_path.string()}, &log) == 0, "train " + log);
    files[run][0] = slurp(out / "loss.csv");
    files[run][1] = slurp(out / "report/summary.json");
    files[run][2] = slurp(out / "report/per_class.csv");
    files[run][3] = slurp(out / "predictions.csv");
  }
  o.require(!files[0][0].empty(), "loss.csv written");
  o.require(files[0][0] == files[1][0], "loss.csv identical");
  o.require(files[0][1] == files[1][1] && files[0][2] == files[1][2], "reports identical");
  o.require(files[0][3] == files[1][3], "predictions identical");
  o.detail << "loss.csv " << files[0][0].size() << " bytes, reports and predictions compared";
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  const std::vector<Criterion> criteria{
      {1, "DCT correctness", 5, dct_correctness},
      {2, "scan correctness", 30, scan_correctness},
      {3, "gradient integrity", 120, gradient_integrity},
      {4, "decorrelation", 60, decorrelation},
      {5, "desk-scale learning", 600, desk_learning},
      {6, "ablation ordering", 2400, ablation_ordering},
      {7, "metrics oracle", 60, metrics_oracle},
      {8, "format fidelity", 60, format_fidelity},
      {9, "determinism", 300, determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.require(secs < c.budget_s, "runtime budget " + std::to_string(static_cast<int>(c.budget_s)) + " s");
    failures += !o.pass;
    std::printf("criterion %d: %s %s (%.1f s) %s\n", c.id, o.pass ? "PASS" : "FAIL", c.name, secs,
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
