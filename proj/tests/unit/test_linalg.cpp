#include "jacreg/error.hpp"
#include "jacreg/matrix.hpp"
#include "jacreg/rng.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>

using namespace jacreg;

namespace {

Matrix random_matrix(RngStream& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.span()) v = rng.symmetric_uniform();
  return m;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  RngStream rng(1, 0);
  const Matrix a = random_matrix(rng, 3, 4);
  EXPECT_EQ(matmul(Matrix::identity(3), a), a);
}

TEST(Matmul, ZeroAnnihilates) {
  RngStream rng(2, 0);
  const Matrix a = random_matrix(rng, 3, 4);
  EXPECT_EQ(matmul(Matrix(2, 3), a), Matrix(2, 4));
}

TEST(Matmul, HandExample) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{5}, {6}};
  EXPECT_EQ(matmul(a, b), (Matrix{{17}, {39}}));
}

TEST(Matmul, DimensionMismatchNamesBothShapes) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_EQ(e.kind(), "dimension_mismatch");
  }
}

TEST(Matmul, AssociativeOnRandomTriples) {
  RngStream rng(3, 0);
  for (int t = 0; t < 50; ++t) {
    const Matrix a = random_matrix(rng, 5, 5);
    const Matrix b = random_matrix(rng, 5, 5);
    const Matrix c = random_matrix(rng, 5, 5);
    const Matrix l = matmul(matmul(a, b), c);
    const Matrix r = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < l.size(); ++i) EXPECT_NEAR(l.span()[i], r.span()[i], 1e-10);
  }
}

TEST(Matmul, DeterministicAcrossCalls) {
  RngStream rng(4, 0);
  const Matrix a = random_matrix(rng, 17, 9);
  const Matrix b = random_matrix(rng, 9, 13);
  EXPECT_EQ(matmul(a, b), matmul(a, b));
}

TEST(Matrix, RejectsNonFiniteProduct) {
  const Matrix a{{1e308, 1e308}};
  const Matrix b{{1e308}, {1e308}};
  EXPECT_THROW(matmul(a, b), NumericError);
}

TEST(Philox, KnownAnswerVectors) {
  using Block = std::array<std::uint32_t, 4>;
  EXPECT_EQ(RngStream::philox_block({0, 0, 0, 0}, {0, 0}),
            (Block{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(RngStream::philox_block({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                                    {0xffffffff, 0xffffffff}),
            (Block{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(RngStream::philox_block({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                                    {0xa4093822, 0x299f31d0}),
            (Block{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(RngStream, WordFixture) {
  RngStream rng(42, 0);
  EXPECT_EQ(rng.next_u64(), 0x77f5493b9ceaf053ULL);
  EXPECT_EQ(rng.next_u64(), 0x5742b3d712bf50adULL);
  EXPECT_EQ(rng.next_u64(), 0x53ba6cfdfcdb2127ULL);
}

TEST(RngStream, UniformRanges) {
  RngStream rng(5, 1);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double s = rng.symmetric_uniform();
    ASSERT_GT(s, -1.0);
    ASSERT_LT(s, 1.0);
    ASSERT_LT(rng.uniform_index(7), 7u);
  }
}

TEST(RngStream, StreamsDiffer) {
  RngStream a(9, 0), b(9, 1), c(10, 0);
  const auto x = a.next_u64();
  EXPECT_NE(x, b.next_u64());
  EXPECT_NE(x, c.next_u64());
}

TEST(RngStream, CopyReplays) {
  RngStream a(11, 3);
  a.gaussian();
  RngStream b = a;
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.gaussian(), b.gaussian());
}

TEST(GaussianVector, ZeroSigmaGivesZeros) {
  RngStream rng(1, 0);
  EXPECT_EQ(gaussian_vector(rng, 5, 0.0), Vector(5));
}

TEST(GaussianVector, RejectsBadArguments) {
  RngStream rng(1, 0);
  EXPECT_THROW(gaussian_vector(rng, 3, -0.1), ParameterError);
  EXPECT_THROW(gaussian_vector(rng, 0, 0.1), ParameterError);
}

TEST(GaussianVector, SeedFixture) {
  RngStream rng(42, 0);
  const Vector v = gaussian_vector(rng, 3, 1.0);
  EXPECT_EQ(v[0], -0.4109468672693219);
  EXPECT_EQ(v[1], -2.081827428370166);
  EXPECT_EQ(v[2], -1.9605079702666064);

  RngStream scaled(7, 3);
  const Vector w = gaussian_vector(scaled, 4, 0.1);
  EXPECT_EQ(w[0], -0.09674549409978361);
  EXPECT_EQ(w[1], 0.025659121656135344);
  EXPECT_EQ(w[2], -0.2705061619503018);
  EXPECT_EQ(w[3], 0.14963037802638568);
}

TEST(GaussianVector, MomentsAtMillionDraws) {
  constexpr std::size_t n = 1000000;
  constexpr std::size_t dim = 4;
  constexpr double sigma = 0.1;
  RngStream rng(2024, 0);
  std::array<double, dim> sum{};
  std::array<std::array<double, dim>, dim> cross{};
  for (std::size_t s = 0; s < n; ++s) {
    const Vector v = gaussian_vector(rng, dim, sigma);
    for (std::size_t i = 0; i < dim; ++i) {
      sum[i] += v[i];
      for (std::size_t j = 0; j < dim; ++j) cross[i][j] += v[i] * v[j];
    }
  }
  const double root_n = std::sqrt(static_cast<double>(n));
  for (std::size_t i = 0; i < dim; ++i) {
    EXPECT_LT(std::abs(sum[i] / n), 4 * sigma / root_n);
    // Var of eps_i^2 is 2 sigma^4.
    EXPECT_LT(std::abs(cross[i][i] / n - sigma * sigma), 4 * std::sqrt(2.0) * sigma * sigma / root_n);
    for (std::size_t j = 0; j < dim; ++j) {
      if (i != j) EXPECT_LT(std::abs(cross[i][j] / n), 4 * sigma * sigma / root_n);
    }
  }
}

TEST(GaussianVector, UniformNoiseHasRequestedVariance) {
  RngStream rng(8, 0);
  constexpr std::size_t n = 200000;
  double s2 = 0, s4 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = uniform_noise_vector(rng, 1, 0.2)[0];
    ASSERT_LE(std::abs(e), 0.2 * std::sqrt(3.0));
    s2 += e * e;
    s4 += e * e * e * e;
  }
  EXPECT_NEAR(s2 / n, 0.04, 4 * std::sqrt(0.8 * 0.04 * 0.04 / n));
  EXPECT_NEAR(s4 / n, 9.0 / 5.0 * 0.04 * 0.04, 4 * 2.4 * 0.04 * 0.04 / std::sqrt(double(n)));
}

TEST(GaussianVector, BitIdenticalAcrossProcesses) {
  auto run = [] {
    std::string out;
    FILE* p = popen(JACREG_RNG_DUMP " 42 5 6 0.1", "r");
    if (p == nullptr) return out;
    char buf[64];
    while (std::fgets(buf, sizeof buf, p)) out += buf;
    pclose(p);
    return out;
  };
  const std::string first = run();
  const std::string second = run();
  ASSERT_FALSE(first.empty());
  EXPECT_EQ(first, second);

  RngStream rng(42, 5);
  const Vector v = gaussian_vector(rng, 6, 0.1);
  std::string local;
  for (double x : v.span()) {
    unsigned long long bits;
    std::memcpy(&bits, &x, sizeof bits);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx\n", bits);
    local += buf;
  }
  EXPECT_EQ(first, local);
}
