#include <cstring>
#include <vector>

#include "a2n/kernels.hpp"
#include "a2n/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using a2n::kernels::ConvDims;

namespace {

struct ConvCase {
  ConvDims d;
  std::vector<double> in, w, bias;
};

ConvCase make_case(const ConvDims& d, uint64_t seed) {
  ConvCase c{d, {}, {}, {}};
  a2n::Rng rng(seed);
  c.in.resize(static_cast<size_t>(d.batch * d.in_c * d.in_h * d.in_w));
  c.w.resize(static_cast<size_t>(d.out_c * d.in_c * d.k_h * d.k_w));
  c.bias.resize(static_cast<size_t>(d.out_c));
  for (double& v : c.in) v = rng.uniform(-1.0, 1.0);
  for (double& v : c.w) v = rng.normal(0.0, 0.5);
  for (double& v : c.bias) v = rng.uniform(-0.5, 0.5);
  return c;
}

bool bytes_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

const ConvDims kDims[] = {
    {2, 3, 5, 7, 4, 3, 3, 1},   // padded 3x3
    {1, 4, 4, 4, 2, 3, 3, 0},   // valid 3x3
    {2, 5, 6, 3, 3, 1, 1, 0},   // pointwise
    {1, 1, 3, 3, 1, 3, 3, 1},   // single plane
    {3, 2, 8, 8, 2, 3, 3, 1},   // batch > 1
};

}  // namespace

TEST_CASE("conv2d forward matches the direct-summation oracle") {
  for (const ConvDims& d : kDims) {
    ConvCase c = make_case(d, 101 + d.in_h);
    std::vector<double> out(
        static_cast<size_t>(d.batch * d.out_c * d.out_h() * d.out_w()));
    a2n::kernels::serial::conv2d_forward(d, c.in.data(), c.w.data(),
                                         c.bias.data(), out.data());
    const std::vector<double> ref = oracles::conv_forward(d, c.in, c.w, c.bias);
    REQUIRE(out.size() == ref.size());
    for (size_t i = 0; i < out.size(); ++i)
      CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d input gradient matches the scatter oracle") {
  for (const ConvDims& d : kDims) {
    ConvCase c = make_case(d, 202 + d.in_w);
    a2n::Rng rng(7);
    std::vector<double> gout(
        static_cast<size_t>(d.batch * d.out_c * d.out_h() * d.out_w()));
    for (double& v : gout) v = rng.uniform(-1.0, 1.0);

    std::vector<double> gin(c.in.size(), 0.0);
    a2n::kernels::serial::conv2d_grad_input(d, gout.data(), c.w.data(),
                                            gin.data());
    const std::vector<double> ref = oracles::conv_grad_input(d, gout, c.w);
    for (size_t i = 0; i < gin.size(); ++i)
      CHECK(gin[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d weight/bias gradients match the scatter oracle") {
  for (const ConvDims& d : kDims) {
    ConvCase c = make_case(d, 303 + d.out_c);
    a2n::Rng rng(9);
    std::vector<double> gout(
        static_cast<size_t>(d.batch * d.out_c * d.out_h() * d.out_w()));
    for (double& v : gout) v = rng.uniform(-1.0, 1.0);

    std::vector<double> gw(c.w.size(), 0.0), gbias(c.bias.size(), 0.0);
    a2n::kernels::serial::conv2d_grad_weight(d, gout.data(), c.in.data(),
                                             gw.data(), gbias.data());
    const oracles::ConvWeightGrads ref =
        oracles::conv_grad_weight(d, gout, c.in);
    for (size_t i = 0; i < gw.size(); ++i)
      CHECK(gw[i] == doctest::Approx(ref.gw[i]).epsilon(1e-12));
    for (size_t i = 0; i < gbias.size(); ++i)
      CHECK(gbias[i] == doctest::Approx(ref.gbias[i]).epsilon(1e-12));
  }
}

TEST_CASE("gradient accumulation adds instead of overwriting") {
  const ConvDims d{1, 2, 4, 4, 2, 3, 3, 1};
  ConvCase c = make_case(d, 11);
  std::vector<double> gout(
      static_cast<size_t>(d.batch * d.out_c * d.out_h() * d.out_w()), 0.25);

  std::vector<double> once(c.in.size(), 0.0), twice(c.in.size(), 0.0);
  a2n::kernels::serial::conv2d_grad_input(d, gout.data(), c.w.data(),
                                          once.data());
  a2n::kernels::serial::conv2d_grad_input(d, gout.data(), c.w.data(),
                                          twice.data());
  a2n::kernels::serial::conv2d_grad_input(d, gout.data(), c.w.data(),
                                          twice.data());
  for (size_t i = 0; i < once.size(); ++i)
    CHECK(twice[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-12));
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  const int saved = a2n::kernels::num_threads();
  for (const ConvDims& d : kDims) {
    ConvCase c = make_case(d, 404 + d.batch);
    a2n::Rng rng(13);
    std::vector<double> gout(
        static_cast<size_t>(d.batch * d.out_c * d.out_h() * d.out_w()));
    for (double& v : gout) v = rng.uniform(-1.0, 1.0);

    std::vector<double> out_s(gout.size()), gin_s(c.in.size(), 0.0);
    std::vector<double> gw_s(c.w.size(), 0.0), gb_s(c.bias.size(), 0.0);
    a2n::kernels::serial::conv2d_forward(d, c.in.data(), c.w.data(),
                                         c.bias.data(), out_s.data());
    a2n::kernels::serial::conv2d_grad_input(d, gout.data(), c.w.data(),
                                            gin_s.data());
    a2n::kernels::serial::conv2d_grad_weight(d, gout.data(), c.in.data(),
                                             gw_s.data(), gb_s.data());

    for (int threads : {1, 2, 4, 8}) {
      a2n::kernels::set_num_threads(threads);
      std::vector<double> out_p(gout.size()), gin_p(c.in.size(), 0.0);
      std::vector<double> gw_p(c.w.size(), 0.0), gb_p(c.bias.size(), 0.0);
      a2n::kernels::conv2d_forward(d, c.in.data(), c.w.data(), c.bias.data(),
                                   out_p.data());
      a2n::kernels::conv2d_grad_input(d, gout.data(), c.w.data(),
                                      gin_p.data());
      a2n::kernels::conv2d_grad_weight(d, gout.data(), c.in.data(),
                                       gw_p.data(), gb_p.data());
      CHECK(bytes_equal(out_s, out_p));
      CHECK(bytes_equal(gin_s, gin_p));
      CHECK(bytes_equal(gw_s, gw_p));
      CHECK(bytes_equal(gb_s, gb_p));
    }
  }
  a2n::kernels::set_num_threads(saved);
}

TEST_CASE("thread setting round-trips") {
  const int saved = a2n::kernels::num_threads();
  a2n::kernels::set_num_threads(3);
  CHECK(a2n::kernels::num_threads() == 3);
  a2n::kernels::set_num_threads(saved);
}
