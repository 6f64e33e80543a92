#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dctm/ops.hpp"
#include "dctm/ssdm.hpp"
#include "gradcheck.hpp"

using namespace dctm;
using dctm::testing::grad_check;
using dctm::testing::random_tensor;

namespace {

Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed = 31) {
  Rng rng(seed);
  auto w = random_tensor(y.shape(), rng);
  return sum(mul(y, w));
}

double silu_ref(double v) { return v / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("config validation") {
  SsdmConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.patch_spatial = 12;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SsdmConfig{};
  cfg.stem_channels = 30;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.stem_channels = 54;
  CHECK_NOTHROW(cfg.validate());
  cfg.norm_eps = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("stem") {
  Rng rng(1);
  auto params = StemParams<double>::init(27, rng);
  SUBCASE("shape") {
    auto out = stem(Tensor<double>({2, 1, 30, 13, 13}, 0.5), params, 1e-5);
    CHECK(out.shape() == Shape{2, 27, 30, 13, 13});
  }
  SUBCASE("zero input isolates the bias path") {
    auto out = stem(Tensor<double>({1, 1, 2, 3, 3}, 0.0), params, 1e-5);
    // Oracle: layer norm of the bias vector, then SiLU.
    double mu = 0, var = 0;
    for (double b : params.bias.data()) mu += b;
    mu /= 27;
    for (double b : params.bias.data()) var += (b - mu) * (b - mu);
    var /= 27;
    const std::size_t plane = 2 * 3 * 3;
    for (std::size_t s = 0; s < 27; ++s) {
      const double expect = silu_ref((params.bias[s] - mu) / std::sqrt(var + 1e-5));
      for (std::size_t p = 0; p < plane; ++p) CHECK(out[s * plane + p] == doctest::Approx(expect).epsilon(1e-10));
    }
  }
  SUBCASE("rank error") { CHECK_THROWS_AS(stem(Tensor<double>({1, 30, 13, 13}), params, 1e-5), ShapeError); }
  SUBCASE("gradient") {
    Rng r(2);
    auto small = StemParams<double>::init(27, r);
    for (auto& v : small.norm.gain.data()) v = r.uniform(0.5, 1.5);
    for (auto& v : small.norm.bias.data()) v = r.uniform(-0.5, 0.5);
    auto x = random_tensor({2, 1, 2, 3, 3}, r);
    auto res = grad_check({x, small.weight, small.bias, small.norm.gain, small.norm.bias},
                          [&] { return probe(stem(x, small, 1e-5)); });
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("ssdm forward") {
  auto basis = DctBasis3D::make(3, 3, 3);
  SUBCASE("constant input excites only DC") {
    auto out = ssdm_forward(Tensor<double>({1, 27, 5, 7, 7}, 1.7), basis);
    REQUIRE(out.shape() == Shape{1, 27, 5, 7, 7});
    const std::size_t plane = 5 * 7 * 7;
    for (std::size_t p = 0; p < plane; ++p) CHECK(out[p] == doctest::Approx(1.7 * std::sqrt(27.0)));
    double worst = 0;
    for (std::size_t i = plane; i < out.numel(); ++i) worst = std::max(worst, std::abs(out[i]));
    CHECK(worst <= 1e-5);
  }
  SUBCASE("channel count and extents") {
    auto out = ssdm_forward(Tensor<double>({2, 54, 4, 5, 6}, 0.1), basis);
    CHECK(out.shape() == Shape{2, 27, 4, 5, 6});
  }
  SUBCASE("group averaging with direct oracle") {
    Rng rng(3);
    auto x = random_tensor({1, 54, 3, 4, 4}, rng);
    auto out = ssdm_forward(x, basis);
    const std::size_t C = 3, H = 4, W = 4, plane = C * H * W;
    auto reflect = [](long i, long n) {
      if (i < 0) return -i;
      if (i >= n) return 2 * (n - 1) - i;
      return i;
    };
    for (std::size_t g = 0; g < 27; ++g) {
      const auto k = basis.kernel(g);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t z = 0; z < W; ++z) {
            double acc = 0;
            for (long a = 0; a < 3; ++a)
              for (long b = 0; b < 3; ++b)
                for (long e = 0; e < 3; ++e) {
                  const auto ic = reflect(long(c) + a - 1, C), iy = reflect(long(y) + b - 1, H),
                             iz = reflect(long(z) + e - 1, W);
                  const std::size_t off = (ic * H + iy) * W + iz;
                  const double mean_plane = 0.5 * (x[(2 * g) * plane + off] + x[(2 * g + 1) * plane + off]);
                  acc += k[(a * 3 + b) * 3 + e] * mean_plane;
                }
            CHECK(out[g * plane + (c * H + y) * W + z] == doctest::Approx(acc).epsilon(1e-12));
          }
    }
  }
  SUBCASE("linear in its input") {
    Rng rng(4);
    auto x = random_tensor({1, 27, 3, 3, 3}, rng);
    auto y = random_tensor({1, 27, 3, 3, 3}, rng);
    auto fx = ssdm_forward(x, basis), fy = ssdm_forward(y, basis);
    auto f = ssdm_forward(add(scale(x, 2.5), scale(y, -0.5)), basis);
    for (std::size_t i = 0; i < f.numel(); ++i) CHECK(f[i] == doctest::Approx(2.5 * fx[i] - 0.5 * fy[i]));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(ssdm_forward(Tensor<double>({1, 30, 3, 3, 3}), basis), ShapeError);
    CHECK_THROWS_AS(ssdm_forward(Tensor<double>({1, 27, 1, 3, 3}), basis), ShapeError);
    auto even = DctBasis3D::make(2, 2, 2);
    CHECK_THROWS_AS(ssdm_forward(Tensor<double>({1, 8, 3, 3, 3}), even), ShapeError);
  }
  SUBCASE("kernels take no gradient, input does") {
    Rng rng(5);
    auto bank = basis_as_filter_bank<double>(basis);
    auto x = random_tensor({1, 27, 3, 3, 3}, rng);
    auto res = grad_check({x}, [&] { return probe(ssdm_forward(x, bank)); });
    CHECK(res.max_rel_error < 1e-4);
    CHECK_FALSE(bank.has_grad());
  }
}

TEST_CASE("spearman") {
  SUBCASE("duplicate and negated channels") {
    std::vector<double> m;
    for (int s = 0; s < 10; ++s) {
      const double v = std::sin(1.3 * s) + 0.1 * s;
      m.insert(m.end(), {v, v, -v});
    }
    auto c = spearman_matrix(m, 10, 3);
    CHECK(c(0, 1) == doctest::Approx(1.0));
    CHECK(c(0, 2) == doctest::Approx(-1.0));
    CHECK(c(2, 2) == 1.0);
  }
  SUBCASE("ties use average ranks") {
    // x = [1,2,2,3], y = [1,2,3,4]; ranks x = [1,2.5,2.5,4].
    std::vector<double> m{1, 1, 2, 2, 2, 3, 3, 4};
    auto c = spearman_matrix(m, 4, 2);
    const double rx[] = {1, 2.5, 2.5, 4}, ry[] = {1, 2, 3, 4};
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < 4; ++i) {
      sxy += (rx[i] - 2.5) * (ry[i] - 2.5);
      sxx += (rx[i] - 2.5) * (rx[i] - 2.5);
      syy += (ry[i] - 2.5) * (ry[i] - 2.5);
    }
    CHECK(c(0, 1) == doctest::Approx(sxy / std::sqrt(sxx * syy)));
  }
  SUBCASE("constant column") {
    std::vector<double> m{1, 5, 2, 5, 3, 5};
    auto c = spearman_matrix(m, 3, 2);
    CHECK(c(0, 1) == 0.0);
    CHECK(c(1, 1) == 1.0);
  }
  SUBCASE("errors") {
    std::vector<double> one{1, 2};
    CHECK_THROWS_AS(spearman_matrix(one, 1, 2), std::invalid_argument);
    CHECK_THROWS_AS(band_correlation(Tensor<double>({1, 3}), Tensor<double>({4, 3})), std::invalid_argument);
  }
  SUBCASE("symmetric and bounded") {
    Rng rng(6);
    auto x = random_tensor({40, 6}, rng);
    auto pair = band_correlation(x, x);
    CHECK(pair.before.isApprox(pair.before.transpose()));
    CHECK(pair.before.cwiseAbs().maxCoeff() <= 1.0);
    CHECK(pair.before.isApprox(pair.after));
  }
}

TEST_CASE("channels_last_matrix") {
  Tensor<double> x({2, 3, 2});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = double(i);
  auto m = channels_last_matrix(x, 1);
  CHECK(m.shape() == Shape{4, 3});
  // Row (b=0, t=1) holds x[0, :, 1].
  CHECK(m[1 * 3 + 0] == x[1]);
  CHECK(m[1 * 3 + 2] == x[5]);
}

TEST_CASE("correlation csv round trip") {
  Eigen::MatrixXd m(3, 3);
  m << 1, 0.123456789012345, -0.3, 0.123456789012345, 1, 0.9, -0.3, 0.9, 1;
  const auto path = std::filesystem::temp_directory_path() / "dctm_corr_test.csv";
  write_correlation_csv(path.string(), m);
  auto back = read_correlation_csv(path.string());
  CHECK(back == m);
  std::filesystem::remove(path);
  CHECK(mean_abs_off_diagonal(m) == doctest::Approx((0.123456789012345 + 0.3 + 0.9) * 2 / 6));
}

TEST_CASE("decorrelates AR(1) bands") {
  // Cube whose bands follow an AR(1) process with adjacent correlation 0.95.
  const std::size_t C = 12, H = 9, W = 9;
  Rng rng(7);
  Tensor<double> cube({1, 1, C, H, W});
  const double rho = 0.95;
  for (std::size_t p = 0; p < H * W; ++p) {
    double v = rng.normal();
    for (std::size_t c = 0; c < C; ++c) {
      if (c > 0) v = rho * v + std::sqrt(1 - rho * rho) * rng.normal();
      cube[c * H * W + p] = v;
    }
  }
  Rng prng(8);
  auto params = StemParams<double>::init(27, prng);
  auto basis = DctBasis3D::make(3, 3, 3);
  auto freq = ssdm_forward(stem(cube, params, 1e-5), basis);
  auto pair = band_correlation(channels_last_matrix(cube, 2), channels_last_matrix(freq, 1));
  CHECK(mean_abs_off_diagonal(pair.after) < mean_abs_off_diagonal(pair.before));
}
