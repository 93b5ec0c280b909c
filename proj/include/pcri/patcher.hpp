#pragma once

#include <algorithm>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "pcri/core.hpp"

namespace pcri {

/// The n*n patch views of one image, row-major (index = row * n + col).
struct PatchPlan {
  std::string sample_id;
  GridSpec grid;
  std::vector<View> views;
};

namespace detail {

// Start offset and extent of tile `i` when `extent` pixels are split into `n`
// tiles; the first (extent mod n) tiles absorb one extra pixel each.
inline std::pair<int, int> tile_span(int extent, int n, int i) {
  const int base = extent / n;
  const int rem = extent % n;
  return {i * base + std::min(i, rem), base + (i < rem ? 1 : 0)};
}

}  // namespace detail

inline View full_view(const std::string& sample_id, int height, int width) {
  return View{sample_id, ViewKind::Full, GridSpec{1}, 0, 0, PixelBounds{0, 0, height, width}};
}

inline PatchPlan plan_grid(int height, int width, GridSpec grid, const std::string& sample_id = {}) {
  const int n = grid.n;
  if (n < 1) throw Error(ErrorCode::DimensionTooSmall, "grid side must be >= 1");
  if (height < n || width < n) {
    throw Error(ErrorCode::DimensionTooSmall,
                std::to_string(height) + "x" + std::to_string(width) + " image cannot hold a " +
                    std::to_string(n) + "x" + std::to_string(n) + " grid");
  }
  PatchPlan plan{sample_id, grid, {}};
  plan.views.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    const auto [top, h] = detail::tile_span(height, n, r);
    for (int c = 0; c < n; ++c) {
      const auto [left, w] = detail::tile_span(width, n, c);
      plan.views.push_back(View{sample_id, ViewKind::Patch, grid, r, c, PixelBounds{top, left, h, w}});
    }
  }
  return plan;
}

/// Copies the view's pixel rectangle out of `img` without resampling.
inline Image crop(const Image& img, const View& view) {
  const PixelBounds& b = view.bounds;
  if (b.top < 0 || b.left < 0 || b.height < 0 || b.width < 0 || b.bottom() > img.height ||
      b.right() > img.width) {
    throw Error(ErrorCode::OutOfBounds, "view " + view.descriptor() + " exceeds " +
                                            std::to_string(img.height) + "x" +
                                            std::to_string(img.width) + " image");
  }
  Image out(b.height, b.width);
  const std::size_t row_bytes = static_cast<std::size_t>(b.width) * Image::kChannels;
  for (int r = 0; r < b.height; ++r) {
    std::memcpy(out.pixels.data() + out.offset(r, 0), img.pixels.data() + img.offset(b.top + r, b.left),
                row_bytes);
  }
  return out;
}

/// Inverse of cropping every view in `plan`: pastes `tiles` back into a canvas.
inline Image stitch(const PatchPlan& plan, std::span<const Image> tiles) {
  if (tiles.size() != plan.views.size()) throw Error(ErrorCode::InvalidSpec, "tile count mismatch");
  const View& last = plan.views.back();
  Image out(last.bounds.bottom(), last.bounds.right());
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const PixelBounds& b = plan.views[i].bounds;
    const Image& t = tiles[i];
    if (t.height != b.height || t.width != b.width) {
      throw Error(ErrorCode::InvalidSpec, "tile " + std::to_string(i) + " has wrong shape");
    }
    const std::size_t row_bytes = static_cast<std::size_t>(b.width) * Image::kChannels;
    for (int r = 0; r < b.height; ++r) {
      std::memcpy(out.pixels.data() + out.offset(b.top + r, b.left), t.pixels.data() + t.offset(r, 0),
                  row_bytes);
    }
  }
  return out;
}

}  // namespace pcri
