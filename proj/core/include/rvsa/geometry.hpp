#pragma once

#include <string>
#include <vector>

#include "rvsa/tensor.hpp"

namespace rvsa {

/// Zero-padded partition of an H x W token grid into s x s windows.
/// Padding is added on the bottom/right only.
struct WindowGrid {
  int window_size = 0;
  int rows = 0, cols = 0;
  int height = 0, width = 0;  // unpadded token extents
  int pad_h = 0, pad_w = 0;

  int num_windows() const { return rows * cols; }
  int padded_height() const { return height + pad_h; }
  int padded_width() const { return width + pad_w; }
  /// Center of window (r, c) in padded-token coordinates, (x, y).
  void center(int r, int c, double& cx, double& cy) const;
  /// Flat padded-token indices of window (r, c), row-major inside the window.
  std::vector<int> token_indices(int r, int c) const;
};

WindowGrid partition(int height, int width, int window_size);

/// Per-window, per-head transform parameters. Scales are the final values
/// (identity = 1), not the predicted deltas.
struct WindowTransform {
  int num_windows = 0;
  int heads = 0;
  // layout: [window][head][5] = (s_x, s_y, o_x, o_y, theta)
  std::vector<double> data;

  static WindowTransform identity(int num_windows, int heads);
  double* at(int window, int head) {
    return data.data() + (static_cast<std::size_t>(window) * heads + head) * 5;
  }
  const double* at(int window, int head) const {
    return data.data() + (static_cast<std::size_t>(window) * heads + head) * 5;
  }
};

/// Fractional sampling coordinates: s^2 (x, y) pairs per window per head.
struct SampleGrid {
  int num_windows = 0;
  int heads = 0;
  int points_per_window = 0;
  // layout: [window][head][point][2]
  std::vector<double> coords;

  double* at(int window, int head) {
    return coords.data() +
           (static_cast<std::size_t>(window) * heads + head) * points_per_window * 2;
  }
  const double* at(int window, int head) const {
    return coords.data() +
           (static_cast<std::size_t>(window) * heads + head) * points_per_window * 2;
  }
};

/// Relative in-window lattice offsets from the center: s^2 rows of (x, y)
/// with components in {-(s-1)/2, ..., +(s-1)/2}.
Tensor window_relative_offsets(int window_size);

/// Maps one relative point through scale, rotation and offset around a
/// window center: out = center + offset + R(theta) * (rel .* scale) with
/// R = [[cos, sin], [-sin, cos]].
void transform_point(double rel_x, double rel_y, double center_x, double center_y, double s_x,
                     double s_y, double o_x, double o_y, double theta, double& out_x,
                     double& out_y);

SampleGrid transform_grid(const WindowGrid& grid, const WindowTransform& transform);

/// Bilinear interpolation at one fractional point of a C x H x W map with
/// zero-valued virtual neighbors outside the grid. Writes C values to `out`.
void bilinear_point(const Tensor& map, double x, double y, double* out);

/// Samples every grid point: result layout [window][head][point][channel].
Tensor bilinear_sample_grid(const Tensor& map, const SampleGrid& grid);

/// One rotated window rectangle: 4 transformed corners of the default
/// window under its transform, in padded-token coordinates.
struct WindowRect {
  int row = 0, col = 0, head = 0;
  double x[4] = {0, 0, 0, 0};  // ul, ur, lr, ll
  double y[4] = {0, 0, 0, 0};
};

std::vector<WindowRect> window_rects(const WindowGrid& grid, const WindowTransform& transform);

/// CSV export: one row per (window, head) with transform parameters and the
/// four transformed corners.
std::string geometry_csv(int layer, const WindowGrid& grid, const WindowTransform& transform);

/// SVG rendering of the rotated rectangles over the token grid, 10 px per
/// token, one color per head (optionally a single head).
std::string geometry_svg(const WindowGrid& grid, const WindowTransform& transform,
                         int head_filter = -1);

}  // namespace rvsa
