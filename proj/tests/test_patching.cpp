#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "s2tx/patching.hpp"
#include "test_util.hpp"

namespace s2tx {
namespace {

PatchSpec spec(Index pl, Index str, PatchAnchor anchor = PatchAnchor::start) {
  return PatchSpec{pl, str, Scale::local, anchor};
}

TEST(PatchCount, DefaultGeometry) {
  EXPECT_EQ(patch_count(336, spec(48, 16)), 18);
  EXPECT_EQ(patch_count(168, spec(16, 8)), 19);
}

TEST(PatchCount, ExchangeGeometry) {
  EXPECT_EQ(patch_count(192, spec(16, 8)), 22);
  EXPECT_EQ(patch_count(96, spec(4, 2)), 46);
}

TEST(PatchCount, SingleFullLengthPatch) { EXPECT_EQ(patch_count(48, spec(48, 16)), 1); }

TEST(PatchCount, WindowShorterThanPatchIsInvalid) {
  EXPECT_THROW(patch_count(40, spec(48, 16)), InvalidSpecError);
  EXPECT_THROW(patch_count(40, spec(8, 0)), InvalidSpecError);
}

TEST(PatchCount, MonotoneInStrideAndLength) {
  for (Index len = 8; len <= 80; len += 3) {
    for (Index pl = 1; pl <= len; ++pl) {
      for (Index str = 1; str <= 12; ++str) {
        const Index n = patch_count(len, spec(pl, str));
        EXPECT_GE(n, patch_count(len, spec(pl, str + 1)));
        if (pl + 1 <= len) {
          EXPECT_GE(n, patch_count(len, spec(pl + 1, str)));
        }
      }
    }
  }
}

TEST(Patchify, HandEnumeratedPatches) {
  Matrix<double> w(1, 64);
  for (Index t = 0; t < 64; ++t) w(0, t) = static_cast<double>(t + 1);
  auto p = patchify<double>(w, spec(16, 8));
  ASSERT_EQ(p.patches(), 6);
  ASSERT_EQ(p.patch_len(), 16);
  for (Index k = 0; k < 16; ++k) {
    EXPECT_EQ(p.values(0, 0, k), static_cast<double>(k + 1));
    EXPECT_EQ(p.values(0, 1, k), static_cast<double>(k + 9));
  }
}

TEST(Patchify, WindowEqualToPatchIsSinglePatch) {
  Rng rng(1);
  Matrix<double> w = testing::random_matrix(1, 12, rng);
  auto p = patchify<double>(w, spec(12, 5));
  ASSERT_EQ(p.patches(), 1);
  for (Index k = 0; k < 12; ++k) EXPECT_EQ(p.values(0, 0, k), w(0, k));
}

TEST(Patchify, DefaultGlobalShape) {
  Rng rng(2);
  Matrix<double> w = testing::random_matrix(7, 336, rng);
  auto p = patchify<double>(w, spec(48, 16));
  EXPECT_EQ(p.variates(), 7);
  EXPECT_EQ(p.patches(), 18);
  EXPECT_EQ(p.patch_len(), 48);
}

TEST(Patchify, RejectsNonFinite) {
  Matrix<double> w = Matrix<double>::Zero(2, 20);
  w(1, 3) = std::nan("");
  EXPECT_THROW(patchify<double>(w, spec(4, 2)), DataError);
}

TEST(Patchify, EndAnchorCoversNewestStep) {
  Matrix<double> w(1, 50);
  for (Index t = 0; t < 50; ++t) w(0, t) = static_cast<double>(t);
  auto p = patchify<double>(w, spec(16, 8, PatchAnchor::end));
  ASSERT_EQ(p.patches(), patch_count(50, spec(16, 8)));
  EXPECT_EQ(p.values(0, p.patches() - 1, 15), 49.0);
  EXPECT_EQ(p.span_end, 50);
  // Patches stay on the stride grid.
  for (Index i = 1; i < p.patches(); ++i) EXPECT_EQ(p.values(0, i, 0) - p.values(0, i - 1, 0), 8.0);
}

// Every time index reached by (patch, offset) lies in the reported span;
// within it, coverage is gap-free iff stride <= patch length, and some index
// is read twice iff stride < patch length.
TEST(Patchify, CoverageProperty) {
  for (Index len = 4; len <= 60; len += 7) {
    for (Index pl = 1; pl <= len; pl += 2) {
      for (Index str = 1; str <= 9; ++str) {
        for (auto anchor : {PatchAnchor::start, PatchAnchor::end}) {
          const auto s = spec(pl, str, anchor);
          const Index n = patch_count(len, s);
          const Index off = patch_offset(len, s);
          std::vector<int> hits(static_cast<std::size_t>(len), 0);
          for (Index i = 0; i < n; ++i)
            for (Index k = 0; k < pl; ++k) ++hits[static_cast<std::size_t>(std::min(off + i * str + k, len - 1))];
          const bool overlap = std::any_of(hits.begin(), hits.end(), [](int h) { return h > 1; });
          if (n > 1) {
            EXPECT_EQ(overlap, str < pl) << len << " " << pl << " " << str;
          }
          Index first = 0;
          while (hits[static_cast<std::size_t>(first)] == 0) ++first;
          EXPECT_EQ(first, off);
          if (str <= pl) {
            Index last = len - 1;
            while (hits[static_cast<std::size_t>(last)] == 0) --last;
            for (Index t = first; t <= last; ++t) EXPECT_GT(hits[static_cast<std::size_t>(t)], 0);
            if (anchor == PatchAnchor::end) {
              EXPECT_EQ(last, len - 1);
            }
          }
        }
      }
    }
  }
}

TEST(Patchify, PermutationEquivariantAcrossVariates) {
  Rng rng(5);
  Matrix<double> w = testing::random_matrix(4, 40, rng);
  std::vector<Index> perm{2, 0, 3, 1};
  Matrix<double> pw(4, 40);
  for (Index i = 0; i < 4; ++i) pw.row(i) = w.row(perm[static_cast<std::size_t>(i)]);
  auto a = patchify<double>(w, spec(8, 4));
  auto b = patchify<double>(pw, spec(8, 4));
  for (Index i = 0; i < 4; ++i) EXPECT_EQ(Matrix<double>(b.values.slice(i)), Matrix<double>(a.values.slice(perm[static_cast<std::size_t>(i)])));
  // Determinism.
  EXPECT_EQ(a.values, patchify<double>(w, spec(8, 4)).values);
}

TEST(MultiScale, DefaultShapes) {
  MultiScaleSpec ms;
  Rng rng(3);
  Matrix<double> w = testing::random_matrix(7, 336, rng);
  auto [g, l] = make_multiscale<double>(w, ms);
  EXPECT_EQ(g.values.dim0(), 7);
  EXPECT_EQ(g.patches(), 18);
  EXPECT_EQ(g.patch_len(), 48);
  EXPECT_EQ(l.patches(), 19);
  EXPECT_EQ(l.patch_len(), 16);
  EXPECT_EQ(g.scale, Scale::global);
  EXPECT_EQ(l.scale, Scale::local);
  // Local patches come from the most recent S steps.
  EXPECT_GE(l.span_begin, 336 - 168);
  EXPECT_EQ(l.span_end, 336);
  EXPECT_EQ(l.values(3, 18, 15), w(3, 335));
}

TEST(MultiScale, ExchangeShapes) {
  MultiScaleSpec ms{{192, 96, 96}, {16, 8, Scale::global, PatchAnchor::end}, {4, 2, Scale::local, PatchAnchor::end}};
  Rng rng(4);
  Matrix<double> w = testing::random_matrix(8, 192, rng);
  auto [g, l] = make_multiscale<double>(w, ms);
  EXPECT_EQ(g.patches(), 22);
  EXPECT_EQ(g.patch_len(), 16);
  EXPECT_EQ(l.patches(), 46);
  EXPECT_EQ(l.patch_len(), 4);
}

TEST(MultiScale, ZeroVariates) {
  MultiScaleSpec ms;
  Matrix<double> w(0, 336);
  auto [g, l] = make_multiscale<double>(w, ms);
  EXPECT_EQ(g.values.dim0(), 0);
  EXPECT_EQ(l.values.dim0(), 0);
  EXPECT_TRUE(g.values.empty());
}

TEST(MultiScale, WrongLength) {
  MultiScaleSpec ms;
  Matrix<double> w = Matrix<double>::Zero(2, 300);
  EXPECT_THROW((make_multiscale<double>(w, ms)), ShapeError);
}

}  // namespace
}  // namespace s2tx
