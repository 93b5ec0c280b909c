#include <random>
#include <set>

#include <gtest/gtest.h>

#include "pcri/patcher.hpp"

namespace pcri {
namespace {

Image random_image(int h, int w, std::mt19937_64& rng) {
  Image img(h, w);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng());
  return img;
}

Image checkerboard(int size) {
  Image img(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const std::uint8_t v = ((r + c) % 2) ? 255 : 0;
      auto* px = img.pixels.data() + img.offset(r, c);
      px[0] = v;
      px[1] = static_cast<std::uint8_t>(r * 16 + c);  // tag each pixel so quadrants differ
      px[2] = v;
    }
  }
  return img;
}

TEST(PlanGrid, EvenSplit) {
  const auto plan = plan_grid(6, 6, GridSpec{2});
  ASSERT_EQ(plan.views.size(), 4u);
  EXPECT_EQ(plan.views[0].bounds, (PixelBounds{0, 0, 3, 3}));
  EXPECT_EQ(plan.views[1].bounds, (PixelBounds{0, 3, 3, 3}));
  EXPECT_EQ(plan.views[2].bounds, (PixelBounds{3, 0, 3, 3}));
  EXPECT_EQ(plan.views[3].bounds, (PixelBounds{3, 3, 3, 3}));
}

TEST(PlanGrid, RemainderGoesToEarliestTiles) {
  const auto plan = plan_grid(7, 7, GridSpec{2});
  EXPECT_EQ(plan.views[0].bounds, (PixelBounds{0, 0, 4, 4}));
  EXPECT_EQ(plan.views[1].bounds, (PixelBounds{0, 4, 4, 3}));
  EXPECT_EQ(plan.views[2].bounds, (PixelBounds{4, 0, 3, 4}));
  EXPECT_EQ(plan.views[3].bounds, (PixelBounds{4, 4, 3, 3}));
}

TEST(PlanGrid, UnitTiles) {
  const auto plan = plan_grid(5, 5, GridSpec{5});
  ASSERT_EQ(plan.views.size(), 25u);
  for (std::size_t j = 0; j < plan.views.size(); ++j) {
    const auto& v = plan.views[j];
    EXPECT_EQ(v.bounds.height, 1);
    EXPECT_EQ(v.bounds.width, 1);
    EXPECT_EQ(static_cast<std::size_t>(v.index()), j);
  }
}

TEST(PlanGrid, RejectsTooSmallImages) {
  try {
    plan_grid(2, 5, GridSpec{3});
    FAIL() << "expected DimensionTooSmall";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionTooSmall);
  }
  EXPECT_THROW(plan_grid(5, 2, GridSpec{3}), Error);
}

TEST(Crop, FullViewIsIdentity) {
  std::mt19937_64 rng(1);
  const auto img = random_image(9, 13, rng);
  EXPECT_EQ(crop(img, full_view("s", 9, 13)), img);
}

TEST(Crop, CheckerboardTopRightQuadrant) {
  const auto img = checkerboard(8);
  const auto plan = plan_grid(8, 8, GridSpec{2});
  const auto tile = crop(img, plan.views[1]);
  ASSERT_EQ(tile.height, 4);
  ASSERT_EQ(tile.width, 4);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        EXPECT_EQ(tile.pixels[tile.offset(r, c) + ch], img.pixels[img.offset(r, c + 4) + ch]);
      }
    }
  }
}

TEST(Crop, SevenBySevenBottomRightAtThree) {
  // Row heights for H=7, n=3 are (3, 2, 2): the last tile starts at 5.
  std::mt19937_64 rng(3);
  const auto img = random_image(7, 7, rng);
  const auto plan = plan_grid(7, 7, GridSpec{3});
  const auto& v = plan.views[8];
  EXPECT_EQ(v.bounds, (PixelBounds{5, 5, 2, 2}));
  const auto tile = crop(img, v);
  ASSERT_EQ(tile.height, 2);
  ASSERT_EQ(tile.width, 2);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      EXPECT_EQ(tile.pixels[tile.offset(r, c)], img.pixels[img.offset(5 + r, 5 + c)]);
    }
  }
}

TEST(Crop, RejectsOutOfBounds) {
  const Image img(4, 4);
  View v{"s", ViewKind::Patch, GridSpec{2}, 1, 1, {2, 2, 3, 2}};
  try {
    crop(img, v);
    FAIL() << "expected OutOfBounds";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfBounds);
  }
}

TEST(PlanGrid, TilesWithinOnePixelAndPure) {
  for (int n = 1; n <= 5; ++n) {
    for (int h = n; h <= 40; h += 3) {
      for (int w = n; w <= 40; w += 5) {
        const auto a = plan_grid(h, w, GridSpec{n}, "x");
        const auto b = plan_grid(h, w, GridSpec{n}, "x");
        ASSERT_EQ(a.views, b.views);
        int min_h = h, max_h = 0, min_w = w, max_w = 0;
        for (const auto& v : a.views) {
          min_h = std::min(min_h, v.bounds.height);
          max_h = std::max(max_h, v.bounds.height);
          min_w = std::min(min_w, v.bounds.width);
          max_w = std::max(max_w, v.bounds.width);
        }
        EXPECT_LE(max_h - min_h, 1);
        EXPECT_LE(max_w - min_w, 1);
      }
    }
  }
}

TEST(Stitch, ReassemblesRandomImages) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 5);
    const int h = n + static_cast<int>(rng() % (65 - n));
    const int w = n + static_cast<int>(rng() % (65 - n));
    const auto img = random_image(h, w, rng);
    const auto plan = plan_grid(h, w, GridSpec{n});
    std::vector<Image> tiles;
    long long area = 0;
    for (const auto& v : plan.views) {
      tiles.push_back(crop(img, v));
      area += v.bounds.area();
      EXPECT_GT(v.bounds.area(), 0);
    }
    EXPECT_EQ(area, static_cast<long long>(h) * w);
    EXPECT_EQ(stitch(plan, tiles), img);
  }
}

}  // namespace
}  // namespace pcri
