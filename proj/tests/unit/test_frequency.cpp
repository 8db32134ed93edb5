#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fmv2/errors.hpp"
#include "fmv2/frequency.hpp"
#include "fmv2/ops.hpp"
#include "helpers.hpp"

using namespace fmv2;
using namespace fmv2::frequency;
using fmv2::test::random_tensor;

namespace {

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, 1, n}, std::move(v));
}

double norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("dct of fixed slices against scipy orthonormal DCT-II") {
  // oracle: scipy.fft.dct(x, norm="ortho")
  const Tensor a_t = dct(row({1, 2, 3, 4}), 2).coeffs;
  const auto a = a_t.data();
  const double ea[] = {5.000000000000001, -2.2304424973876635, 0.0, -0.15851266778110706};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(a[i] - ea[i]) < 1e-12);

  const Tensor b_t = dct(row({0.5, -1.0, 2.0, 0.25, 3.0, -0.75}), 2).coeffs;
  const auto b = b_t.data();
  const double eb[] = {1.632993161855452,  -0.6743950626915962, -1.25,
                       1.4288690166235205, -0.5773502691896257, 2.7957154062512384};
  for (int i = 0; i < 6; ++i) CHECK(std::abs(b[i] - eb[i]) < 1e-12);
}

TEST_CASE("dct of a unit impulse matches a direct double loop") {
  const std::size_t F = 4;
  const Tensor c_t = dct(row({1, 0, 0, 0}), 2).coeffs;
  const auto c = c_t.data();
  for (std::size_t i = 0; i < F; ++i) {
    double acc = 0.0;
    for (std::size_t f = 0; f < F; ++f)
      acc += (f == 0 ? 1.0 : 0.0) * std::cos(std::numbers::pi * (2.0 * f + 1.0) * i / (2.0 * F));
    acc *= std::sqrt(2.0 / F) * (i == 0 ? 1.0 / std::sqrt(2.0) : 1.0);
    CHECK(std::abs(c[i] - acc) < 1e-12);
  }
}

TEST_CASE("constant slices put everything in the DC coefficient") {
  const double c = 1.75;
  const std::size_t F = 9;
  const Tensor s_t = dct(row(std::vector<double>(F, c)), 2).coeffs;
  const auto s = s_t.data();
  CHECK(std::abs(s[0] - c * std::sqrt(double(F))) < 1e-12);
  for (std::size_t i = 1; i < F; ++i) CHECK(std::abs(s[i]) < 1e-12);

  std::vector<double> dc(F, 0.0);
  dc[0] = c * std::sqrt(double(F));
  const Tensor back = idct({row(dc), 2});
  for (double v : back.data()) CHECK(std::abs(v - c) < 1e-12);
}

TEST_CASE("degenerate and empty axes") {
  CHECK(dct(row({3.5}), 2).coeffs.data()[0] == doctest::Approx(3.5).epsilon(1e-15));
  const Tensor zeros = idct({Tensor::zeros({2, 3, 5}), 2});
  for (double v : zeros.data()) CHECK(v == 0.0);
}

TEST_CASE("round trip, linearity and energy on random tensors") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Tensor x = random_tensor({25, 3, 64}, seed);
    const Tensor y = random_tensor({25, 3, 64}, seed + 100);
    for (std::size_t axis : {std::size_t{0}, std::size_t{2}}) {
      const auto s = dct(x, axis);
      CHECK(max_abs_diff(idct(s), x) < 1e-9);
      CHECK(std::abs(norm(s.coeffs) - norm(x)) < 1e-9);
      const Tensor lhs = dct(add(scale(x, 2.0), scale(y, -0.5)), axis).coeffs;
      const Tensor rhs = add(scale(s.coeffs, 2.0), scale(dct(y, axis).coeffs, -0.5));
      CHECK(max_abs_diff(lhs, rhs) < 1e-9);
    }
  }
}

TEST_CASE("dct gradient is the transpose") {
  std::vector<Tensor> in{random_tensor({2, 2, 6}, 7, -1, 1, true)};
  const auto r = fmv2::test::check_op([](const auto& p) { return dct(p[0], 2).coeffs; }, in);
  CHECK(r.passed);
}

TEST_CASE("band operators scale the documented coefficients") {
  FrequencyConfig cfg;
  cfg.partition = 2;
  const SpectralTensor ones{Tensor::full({1, 1, 4}, 1.0), 2};
  const Tensor hi_t = apply_high_operator(ones, cfg).coeffs;
  const auto hi = hi_t.data();
  const double eh[] = {1, 1, 1.2, 1.2};
  for (int i = 0; i < 4; ++i) CHECK(hi[i] == doctest::Approx(eh[i]).epsilon(1e-15));
  const Tensor lo_t = apply_low_operator(ones, cfg).coeffs;
  const auto lo = lo_t.data();
  const double el[] = {0.2, 0.2, 1, 1};
  for (int i = 0; i < 4; ++i) CHECK(lo[i] == doctest::Approx(el[i]).epsilon(1e-15));
}

TEST_CASE("operators commute and reduce to the identity in test mode") {
  FrequencyConfig cfg;
  cfg.partition = 13;
  const SpectralTensor s = dct(random_tensor({25, 3, 64}, 11), 2);
  const Tensor hl = apply_high_operator(apply_low_operator(s, cfg), cfg).coeffs;
  const Tensor lh = apply_low_operator(apply_high_operator(s, cfg), cfg).coeffs;
  CHECK(bitwise_equal(hl, lh));

  cfg.test_mode = true;
  cfg.h = 1.0;
  cfg.ell = 1.0;
  CHECK(bitwise_equal(apply_high_operator(s, cfg).coeffs, s.coeffs));
  CHECK(bitwise_equal(apply_low_operator(s, cfg).coeffs, s.coeffs));
  CHECK(bitwise_equal(apply_high_operator(apply_low_operator(s, cfg), cfg).coeffs, s.coeffs));
}

TEST_CASE("operating point N=13, l=0.2, h=1.2 on a 25-long axis") {
  FrequencyConfig cfg;
  CHECK(cfg.partition == 13);
  CHECK(cfg.ell == 0.2);
  CHECK(cfg.h == 1.2);
  CHECK_NOTHROW(cfg.validate(25));
  const SpectralTensor ones{Tensor::full({25, 1, 1}, 1.0), 0};
  const Tensor hi_t = apply_high_operator(ones, cfg).coeffs;
  const auto hi = hi_t.data();
  const Tensor lo_t = apply_low_operator(ones, cfg).coeffs;
  const auto lo = lo_t.data();
  for (int i = 0; i < 25; ++i) {
    CHECK(hi[i] == (i < 13 ? 1.0 : 1.2));
    CHECK(lo[i] == (i < 13 ? 0.2 : 1.0));
  }
}

TEST_CASE("operator and partition validation") {
  FrequencyConfig cfg;
  CHECK_THROWS_AS(cfg.validate(13), ContractError);
  cfg.h = 1.0;
  CHECK_THROWS_AS(cfg.validate(25), ContractError);
  cfg.test_mode = true;
  CHECK_NOTHROW(cfg.validate(25));
  cfg.h = 1.21;
  CHECK_THROWS_AS(cfg.validate(25), ContractError);
  cfg = {};
  cfg.ell = 1.0;
  CHECK_THROWS_AS(cfg.validate(25), ContractError);
  cfg = {};
  cfg.partition = 0;
  CHECK_THROWS_AS(cfg.validate(25), ContractError);
}

TEST_CASE("map_partition") {
  CHECK(map_partition(13, 25) == 13);
  CHECK(map_partition(13, 64) == 33);  // round(13/25·64) = round(33.28)
  CHECK(map_partition(1, 2) == 1);
  CHECK(map_partition(25, 25) == 24);
  CHECK_THROWS_AS(map_partition(0, 25), ContractError);
  CHECK_THROWS_AS(map_partition(26, 25), ContractError);
  CHECK_THROWS_AS(map_partition(5, 1), ContractError);
}

TEST_CASE("band energy splits a two-tone signal") {
  // joint 0: pure DC-free low tone at index 2, joint 1: high tone at index 12
  const std::size_t F = 16;
  std::vector<double> v(2 * F);
  for (std::size_t f = 0; f < F; ++f) {
    v[f] = std::cos(std::numbers::pi * 2 * (f + 0.5) / F);
    v[F + f] = 3.0 * std::cos(std::numbers::pi * 12 * (f + 0.5) / F);
  }
  const auto e = band_energy(Tensor({2, 1, F}, v), 8);
  REQUIRE(e.size() == 2);
  CHECK(e[0].low == doctest::Approx(F / 2.0).epsilon(1e-12));
  CHECK(e[0].high == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(e[1].low == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(e[1].high == doctest::Approx(9.0 * F / 2.0).epsilon(1e-12));
}
