// Times the serial and OpenMP convolution kernels on training-sized
// workloads and verifies that their outputs are bit-identical.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "a2n/kernels.hpp"
#include "a2n/rng.hpp"

namespace {

using a2n::kernels::ConvDims;

double seconds_per_call(const std::function<void()>& fn, int reps) {
  // One warmup, then the best of three timed batches.
  fn();
  double best = 1e300;
  for (int t = 0; t < 3; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count() /
                              static_cast<double>(reps));
  }
  return best;
}

bool bytes_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

int main(int argc, char** argv) {
  int threads = a2n::kernels::num_threads();
  int reps = 5;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--threads" && i + 1 < argc) threads = std::stoi(argv[++i]);
    if (arg == "--reps" && i + 1 < argc) reps = std::stoi(argv[++i]);
  }

  std::printf("openmp: %s, threads for parallel path: %d\n",
              a2n::kernels::openmp_available() ? "yes" : "no", threads);
  std::printf("%-28s %10s %10s %8s %6s\n", "case", "serial_ms", "omp_ms",
              "speedup", "equal");

  struct Case {
    const char* name;
    ConvDims d;
  };
  const Case cases[] = {
      {"b1_c40x40_48x48_k3", {1, 40, 48, 48, 40, 3, 3, 1}},
      {"b4_c16x16_32x32_k3", {4, 16, 32, 32, 16, 3, 3, 1}},
      {"b1_c40x40_96x96_k1", {1, 40, 96, 96, 40, 1, 1, 0}},
  };

  bool all_equal = true;
  for (const Case& c : cases) {
    const ConvDims& d = c.d;
    a2n::Rng rng(7);
    std::vector<double> in(static_cast<size_t>(d.batch * d.in_c * d.in_h *
                                               d.in_w));
    std::vector<double> w(static_cast<size_t>(d.out_c * d.in_c * d.k_h *
                                              d.k_w));
    std::vector<double> bias(static_cast<size_t>(d.out_c));
    for (double& v : in) v = rng.uniform(-1.0, 1.0);
    for (double& v : w) v = rng.normal(0.0, 0.1);
    for (double& v : bias) v = rng.uniform(-0.1, 0.1);

    const size_t out_n =
        static_cast<size_t>(d.batch * d.out_c * d.out_h() * d.out_w());
    std::vector<double> out_s(out_n), out_p(out_n);

    const double ts = seconds_per_call(
        [&]() {
          a2n::kernels::serial::conv2d_forward(d, in.data(), w.data(),
                                               bias.data(), out_s.data());
        },
        reps);
    a2n::kernels::set_num_threads(threads);
    const double tp = seconds_per_call(
        [&]() {
          a2n::kernels::par::conv2d_forward(d, in.data(), w.data(),
                                            bias.data(), out_p.data());
        },
        reps);

    const bool eq = bytes_equal(out_s, out_p);
    all_equal = all_equal && eq;
    std::printf("%-28s %10.3f %10.3f %7.2fx %6s\n", c.name, ts * 1e3, tp * 1e3,
                ts / tp, eq ? "yes" : "NO");
  }

  if (!all_equal) {
    std::printf("FAIL: parallel kernels diverge from serial reference\n");
    return 1;
  }
  return 0;
}
