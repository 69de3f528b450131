#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <set>
#include <stdexcept>

#include "vmfcoop/parallel.hpp"
#include "vmfcoop/random.hpp"

using namespace vmfcoop;

TEST(Rng, UniformRangeAndDeterminism) {
  Rng a(5), b(5);
  for (int i = 0; i < 10'000; ++i) {
    const double u = a.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_EQ(u, b.uniform());
    const double p = a.uniform_pos();
    ASSERT_GT(p, 0.0);
    ASSERT_LE(p, 1.0);
    b.uniform_pos();
  }
}

TEST(Rng, IndexIsUnbiasedEnough) {
  Rng rng(1);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70'000; ++i) ++counts[rng.index(7)];
  for (int c : counts) EXPECT_NEAR(c, 10'000, 400);
}

TEST(Rng, NormalMoments) {
  Rng rng(2);
  double s = 0.0, s2 = 0.0;
  const int n = 200'000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Rng, GammaAndBetaMeans) {
  Rng rng(3);
  for (double shape : {0.4, 1.0, 7.5}) {
    double s = 0.0;
    for (int i = 0; i < 100'000; ++i) s += rng.gamma(shape);
    EXPECT_NEAR(s / 100'000, shape, 0.02 * std::max(1.0, shape));
  }
  double s = 0.0;
  for (int i = 0; i < 100'000; ++i) s += rng.beta(2.0, 5.0);
  EXPECT_NEAR(s / 100'000, 2.0 / 7.0, 0.005);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng rng(4);
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  rng.shuffle(std::span<int>(w));
  EXPECT_NE(w, v);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(w, v);
}

TEST(Substreams, DistinctAndStable) {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t root : {0ULL, 1ULL, 2ULL})
    for (const char* name : {"init", "shuffle", "support", "prompts", "images"})
      for (std::uint64_t k = 0; k < 4; ++k) seeds.insert(substream_seed(root, name, k));
  EXPECT_EQ(seeds.size(), 3u * 5u * 4u);
  EXPECT_EQ(substream_seed(7, "init"), substream_seed(7, "init", 0));
}

TEST(ParallelFor, ResultIndependentOfThreads) {
  std::vector<double> ref(257);
  parallel_for(ref.size(), [&](std::size_t i) { ref[i] = Rng(substream_seed(9, "x", i)).normal(); }, 1);
  for (std::size_t t : {2u, 3u, 16u}) {
    std::vector<double> out(257);
    parallel_for(out.size(), [&](std::size_t i) { out[i] = Rng(substream_seed(9, "x", i)).normal(); }, t);
    EXPECT_EQ(out, ref);
  }
}

TEST(ParallelFor, RethrowsLowestIndexFailure) {
  for (std::size_t t : {1u, 4u}) {
    try {
      parallel_for(50, [](std::size_t i) {
        if (i % 10 == 7) throw std::runtime_error("index " + std::to_string(i));
      }, t);
      FAIL();
    } catch (const std::runtime_error& e) {
      EXPECT_STREQ(e.what(), "index 7");
    }
  }
}

TEST(ParallelFor, ThreadCountFromEnvironment) {
  const char* old = std::getenv("VMFCOOP_THREADS");
  const std::string saved = old ? old : "";
  setenv("VMFCOOP_THREADS", "3", 1);
  EXPECT_EQ(default_thread_count(), 3u);
  setenv("VMFCOOP_THREADS", "zero", 1);
  EXPECT_GE(default_thread_count(), 1u);
  setenv("VMFCOOP_THREADS", "-2", 1);
  EXPECT_GE(default_thread_count(), 1u);
  if (old)
    setenv("VMFCOOP_THREADS", saved.c_str(), 1);
  else
    unsetenv("VMFCOOP_THREADS");
}
