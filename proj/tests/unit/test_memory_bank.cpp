#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "oracles.hpp"
#include "vthcl/memory_bank.hpp"

using namespace vthcl;

namespace {

MemoryBank<double> bank2(std::vector<double> row0, std::vector<double> row1, double m) {
  auto b = MemoryBank<double>::init(2, row0.size(), 0, m);
  std::vector<double> all = row0;
  all.insert(all.end(), row1.begin(), row1.end());
  b.assign(Tensor<double>({2, row0.size()}, all));
  return b;
}

}  // namespace

TEST(MemoryBankInit, UnitRowsAndSeeded) {
  const auto a = MemoryBank<float>::init(50, 16, 3), b = MemoryBank<float>::init(50, 16, 3);
  EXPECT_TRUE(a.entries() == b.entries());
  for (std::size_t i = 0; i < a.size(); ++i) {
    double n = 0;
    for (std::size_t k = 0; k < 16; ++k) n += a.row(i)[k] * a.row(i)[k];
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
  EXPECT_FALSE(a.entries() == MemoryBank<float>::init(50, 16, 4).entries());
}

TEST(MemoryBankInit, RowsAreSpreadOut) {
  // For uniform directions in d=128, E|cos| = sqrt(2/(pi d)) ~ 0.0705.
  const auto b = MemoryBank<double>::init(1000, 128, 1);
  double s = 0;
  std::size_t cnt = 0;
  for (std::size_t i = 0; i < 1000; i += 3)
    for (std::size_t j = i + 1; j < 1000; j += 7, ++cnt) {
      double c = 0;
      for (std::size_t k = 0; k < 128; ++k) c += b.row(i)[k] * b.row(j)[k];
      s += std::abs(c);
    }
  EXPECT_LT(s / cnt, 0.15);
  EXPECT_NEAR(s / cnt, std::sqrt(2 / (M_PI * 128)), 0.01);
}

TEST(MemoryBankInit, RejectsEmpty) {
  EXPECT_THROW(MemoryBank<float>::init(0, 4, 0), ConfigError);
  EXPECT_THROW(MemoryBank<float>::init(4, 0, 0), ConfigError);
}

TEST(MemoryBankUpdate, HandArithmetic) {
  auto b = bank2({1, 0}, {0, 0}, 0.5);
  std::vector<int> idx{0};
  b.update(idx, Tensor<double>({1, 2}, {0, 1}));
  EXPECT_NEAR(b.row(0)[0], std::sqrt(2.0) / 2, 1e-15);
  EXPECT_NEAR(b.row(0)[1], std::sqrt(2.0) / 2, 1e-15);

  auto raw = bank2({1, 0}, {0, 0}, 0.5);
  raw.update(idx, Tensor<double>({1, 2}, {0, 1}), false);
  EXPECT_DOUBLE_EQ(raw.row(0)[0], 0.5);
  EXPECT_DOUBLE_EQ(raw.row(0)[1], 0.5);
}

TEST(MemoryBankUpdate, MomentumOneIsNoOp) {
  auto b = bank2({0.6, 0.8}, {1, 0}, 1.0);
  const auto before = b.entries();
  std::vector<int> idx{0, 1};
  b.update(idx, Tensor<double>({2, 2}, {0, 1, 0, 1}));
  EXPECT_TRUE(b.entries() == before);
}

TEST(MemoryBankUpdate, MomentumZeroCopies) {
  auto b = bank2({0.6, 0.8}, {1, 0}, 0.0);
  std::vector<int> idx{1};
  const Tensor<double> e({1, 2}, {0.28, 0.96});
  b.update(idx, e);
  EXPECT_EQ(b.row(1)[0], 0.28);
  EXPECT_EQ(b.row(1)[1], 0.96);
  EXPECT_EQ(b.row(0)[0], 0.6);  // untouched row
}

TEST(MemoryBankUpdate, DuplicateIndicesRejected) {
  auto b = bank2({1, 0}, {0, 1}, 0.5);
  std::vector<int> idx{1, 1};
  EXPECT_THROW(b.update(idx, Tensor<double>({2, 2}, {1, 0, 1, 0})), ValidationError);
  std::vector<int> bad{2};
  EXPECT_THROW(b.update(bad, Tensor<double>({1, 2}, {1, 0})), LookupError);
  std::vector<int> one{0};
  EXPECT_THROW(b.update(one, Tensor<double>({1, 3}, {1, 0, 0})), ShapeError);
}

TEST(MemoryBankUpdate, ClosedFormWithoutRenormalization) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  oracle::Vec x0(8), x(8);
  for (auto& v : x0) v = n(rng);
  for (auto& v : x) v = n(rng);
  auto b = MemoryBank<double>::init(1, 8, 0, 0.7);
  b.assign(Tensor<double>({1, 8}, x0));
  std::vector<int> idx{0};
  for (int k = 1; k <= 20; ++k) {
    b.update(idx, Tensor<double>({1, 8}, x), false);
    const auto want = oracle::bank_closed_form(x0, x, 0.7, k);
    for (std::size_t i = 0; i < 8; ++i) ASSERT_NEAR(b.row(0)[i], want[i], 1e-10) << "k=" << k;
  }
}

TEST(SampleNegatives, ForcedSelection) {
  auto b = MemoryBank<double>::init(3, 4, 1);
  Rng rng(0);
  const auto idx = sample_negative_indices(3, 0, 2, rng);
  EXPECT_EQ(std::set<int>(idx.begin(), idx.end()), (std::set<int>{1, 2}));
  const auto rowsN = sample_negatives(b, 0, 2, rng);
  EXPECT_EQ(rowsN.dim(0), 2u);
  EXPECT_THROW(sample_negatives(b, 0, 3, rng), ConfigError);
}

TEST(SampleNegatives, ExcludedNeverReturnedAndUniform) {
  Rng rng(5);
  std::vector<int> hits(10, 0);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto idx = sample_negative_indices(10, 3, 2, rng);  // Floyd path: 2*4 < 9
    ASSERT_EQ(std::set<int>(idx.begin(), idx.end()).size(), 2u);
    for (int i : idx) {
      ASSERT_NE(i, 3);
      ++hits[i];
    }
  }
  EXPECT_EQ(hits[3], 0);
  for (int i = 0; i < 10; ++i)
    if (i != 3) EXPECT_NEAR(hits[i], 20000.0 / 9, 200) << i;
}

TEST(SampleNegatives, DensePathExcludes) {
  Rng rng(6);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto idx = sample_negative_indices(6, 5, 4, rng);
    ASSERT_EQ(std::set<int>(idx.begin(), idx.end()).size(), 4u);
    for (int i : idx) ASSERT_TRUE(i >= 0 && i < 5);
  }
}

TEST(SampleNegatives, SeededIsReproducible) {
  Rng a(9), b(9);
  EXPECT_EQ(sample_negative_indices(100, 7, 16, a), sample_negative_indices(100, 7, 16, b));
}

TEST(Lookup, CopiesAndReflectsUpdates) {
  auto b = bank2({1, 0}, {0, 1}, 0.0);
  std::vector<int> idx{1};
  auto first = b.lookup(idx);
  EXPECT_TRUE(first == b.lookup(idx));
  first[0] = 42;
  EXPECT_EQ(b.row(1)[0], 0.0);
  b.update(idx, Tensor<double>({1, 2}, {0.6, 0.8}));
  EXPECT_EQ(b.lookup(idx)[0], 0.6);
  std::vector<int> bad{-1};
  EXPECT_THROW(b.lookup(bad), LookupError);
}
