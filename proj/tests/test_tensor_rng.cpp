#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "vrg/errors.hpp"
#include "vrg/rng.hpp"
#include "vrg/tensor.hpp"

using vrg::RngStream;
using vrg::Tensor;

TEST_CASE("tensor construction and views") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.dim(0) == 2);
  CHECK(t.at(5) == 1.5);

  Tensor r = t.reshaped({3, 2});
  CHECK(r.dim(0) == 3);
  r.at(0) = 9.0;
  CHECK(t.at(0) == 9.0);  // reshape shares storage

  Tensor c = t.clone();
  c.at(0) = -1.0;
  CHECK(t.at(0) == 9.0);

  CHECK_THROWS_AS(t.reshaped({4, 2}), vrg::ArgumentError);
  CHECK_THROWS_AS(Tensor::scalar(1.0).reshaped({2}), vrg::ArgumentError);
  CHECK(Tensor::from({2}, {3.0, -4.0}).min() == -4.0);
  CHECK(Tensor::from({2}, {3.0, -4.0}).max() == 3.0);

  Tensor nf = Tensor::from({2}, {1.0, std::nan("")});
  CHECK(!nf.all_finite());
  CHECK(Tensor::ones({4}).all_finite());
}

TEST_CASE("rng reproducibility and substream independence") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  // Substreams derive from the key, not consumed state.
  RngStream parent(7);
  parent.next_u64();
  parent.next_u64();
  RngStream s1 = parent.substream("noise");
  RngStream s2 = RngStream(7).substream("noise");
  for (int i = 0; i < 10; ++i) CHECK(s1.next_u64() == s2.next_u64());

  // Distinct names give distinct streams.
  CHECK(parent.substream("a").next_u64() != parent.substream("b").next_u64());
  CHECK(parent.substream(uint64_t{0}).next_u64() != parent.substream(uint64_t{1}).next_u64());
  CHECK(parent.for_epoch(3, "z").next_u64() == RngStream(7).for_epoch(3, "z").next_u64());
  CHECK(parent.for_epoch(3, "z").next_u64() != parent.for_epoch(4, "z").next_u64());
}

TEST_CASE("uniform stays in [0,1) and uniform_int is unbiased enough") {
  RngStream r(123);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);

  int counts[5] = {0, 0, 0, 0, 0};
  for (int i = 0; i < 50000; ++i) ++counts[r.uniform_int(5)];
  for (int c : counts) CHECK(std::fabs(c / 50000.0 - 0.2) < 0.01);
}

TEST_CASE("normal moments match N(0,1)") {
  RngStream r(99);
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s1 += x;
    s2 += x * x;
    s3 += x * x * x;
    s4 += x * x * x * x;
  }
  CHECK(std::fabs(s1 / n) < 0.01);
  CHECK(std::fabs(s2 / n - 1.0) < 0.02);
  CHECK(std::fabs(s3 / n) < 0.05);
  CHECK(std::fabs(s4 / n - 3.0) < 0.1);
}

TEST_CASE("tensor fills are deterministic per seed") {
  RngStream a(5), b(5);
  Tensor ta = a.normal_tensor({3, 4});
  Tensor tb = b.normal_tensor({3, 4});
  for (int64_t i = 0; i < ta.size(); ++i) CHECK(ta.at(i) == tb.at(i));
}
