#include "rvsa/geometry.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rvsa {

void WindowGrid::center(int r, int c, double& cx, double& cy) const {
  cx = c * window_size + (window_size - 1) / 2.0;
  cy = r * window_size + (window_size - 1) / 2.0;
}

std::vector<int> WindowGrid::token_indices(int r, int c) const {
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(window_size) * window_size);
  int wp = padded_width();
  for (int y = 0; y < window_size; ++y)
    for (int x = 0; x < window_size; ++x)
      idx.push_back((r * window_size + y) * wp + (c * window_size + x));
  return idx;
}

WindowGrid partition(int height, int width, int window_size) {
  if (window_size < 1) throw std::invalid_argument("partition: window size must be >= 1");
  if (height < 1 || width < 1) throw std::invalid_argument("partition: empty token grid");
  WindowGrid g;
  g.window_size = window_size;
  g.height = height;
  g.width = width;
  g.rows = (height + window_size - 1) / window_size;
  g.cols = (width + window_size - 1) / window_size;
  g.pad_h = g.rows * window_size - height;
  g.pad_w = g.cols * window_size - width;
  return g;
}

WindowTransform WindowTransform::identity(int num_windows, int heads) {
  WindowTransform t;
  t.num_windows = num_windows;
  t.heads = heads;
  t.data.assign(static_cast<std::size_t>(num_windows) * heads * 5, 0.0);
  for (int w = 0; w < num_windows; ++w)
    for (int h = 0; h < heads; ++h) {
      double* p = t.at(w, h);
      p[0] = 1.0;
      p[1] = 1.0;
    }
  return t;
}

Tensor window_relative_offsets(int window_size) {
  Tensor rel({window_size * window_size, 2});
  double half = (window_size - 1) / 2.0;
  for (int y = 0; y < window_size; ++y)
    for (int x = 0; x < window_size; ++x) {
      int i = y * window_size + x;
      rel.at(i, 0) = x - half;
      rel.at(i, 1) = y - half;
    }
  return rel;
}

void transform_point(double rel_x, double rel_y, double center_x, double center_y, double s_x,
                     double s_y, double o_x, double o_y, double theta, double& out_x,
                     double& out_y) {
  double ct = std::cos(theta), st = std::sin(theta);
  double rx = rel_x * s_x, ry = rel_y * s_y;
  out_x = center_x + o_x + ct * rx + st * ry;
  out_y = center_y + o_y - st * rx + ct * ry;
}

SampleGrid transform_grid(const WindowGrid& grid, const WindowTransform& transform) {
  if (transform.num_windows != grid.num_windows())
    dim_error("transform_grid: transform holds " + std::to_string(transform.num_windows) +
              " windows, grid has " + std::to_string(grid.num_windows()));
  int s = grid.window_size;
  Tensor rel = window_relative_offsets(s);
  SampleGrid out;
  out.num_windows = grid.num_windows();
  out.heads = transform.heads;
  out.points_per_window = s * s;
  out.coords.assign(static_cast<std::size_t>(out.num_windows) * out.heads *
                        out.points_per_window * 2,
                    0.0);
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) {
      int w = r * grid.cols + c;
      double cx, cy;
      grid.center(r, c, cx, cy);
      for (int h = 0; h < transform.heads; ++h) {
        const double* t = transform.at(w, h);
        double* dst = out.at(w, h);
        for (int i = 0; i < s * s; ++i)
          transform_point(rel.at(i, 0), rel.at(i, 1), cx, cy, t[0], t[1], t[2], t[3], t[4],
                          dst[2 * i], dst[2 * i + 1]);
      }
    }
  return out;
}

void bilinear_point(const Tensor& map, double x, double y, double* out) {
  if (std::isnan(x) || std::isnan(y))
    throw std::domain_error("bilinear_point: NaN coordinate");
  int C = map.dim(0), H = map.dim(1), W = map.dim(2);
  double fx0 = std::floor(x), fy0 = std::floor(y);
  int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
  double ax = x - fx0, ay = y - fy0;
  const int xs[2] = {x0, x0 + 1};
  const int ys[2] = {y0, y0 + 1};
  const double wx[2] = {1.0 - ax, ax};
  const double wy[2] = {1.0 - ay, ay};
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int b = 0; b < 2; ++b)
      for (int a = 0; a < 2; ++a) {
        if (ys[b] < 0 || ys[b] >= H || xs[a] < 0 || xs[a] >= W) continue;
        s += wy[b] * wx[a] * map.at(c, ys[b], xs[a]);
      }
    out[c] = s;
  }
}

Tensor bilinear_sample_grid(const Tensor& map, const SampleGrid& grid) {
  int C = map.dim(0);
  Tensor out({grid.num_windows, grid.heads, grid.points_per_window, C});
  for (int w = 0; w < grid.num_windows; ++w)
    for (int h = 0; h < grid.heads; ++h) {
      const double* pts = grid.at(w, h);
      for (int i = 0; i < grid.points_per_window; ++i) {
        std::size_t off = (((static_cast<std::size_t>(w) * grid.heads + h) *
                            grid.points_per_window) +
                           i) *
                          C;
        bilinear_point(map, pts[2 * i], pts[2 * i + 1], out.data() + off);
      }
    }
  return out;
}

std::vector<WindowRect> window_rects(const WindowGrid& grid, const WindowTransform& transform) {
  double half = (grid.window_size - 1) / 2.0;
  // corner order: ul, ur, lr, ll
  const double rx[4] = {-half, half, half, -half};
  const double ry[4] = {-half, -half, half, half};
  std::vector<WindowRect> rects;
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) {
      int w = r * grid.cols + c;
      double cx, cy;
      grid.center(r, c, cx, cy);
      for (int h = 0; h < transform.heads; ++h) {
        const double* t = transform.at(w, h);
        WindowRect rect;
        rect.row = r;
        rect.col = c;
        rect.head = h;
        for (int k = 0; k < 4; ++k)
          transform_point(rx[k], ry[k], cx, cy, t[0], t[1], t[2], t[3], t[4], rect.x[k],
                          rect.y[k]);
        rects.push_back(rect);
      }
    }
  return rects;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

std::string geometry_csv(int layer, const WindowGrid& grid, const WindowTransform& transform) {
  std::ostringstream os;
  os << "layer,window_row,window_col,head,s_x,s_y,o_x,o_y,theta,"
        "corner_x0,corner_y0,corner_x1,corner_y1,corner_x2,corner_y2,corner_x3,corner_y3\n";
  auto rects = window_rects(grid, transform);
  for (const WindowRect& rc : rects) {
    int w = rc.row * grid.cols + rc.col;
    const double* t = transform.at(w, rc.head);
    os << layer << ',' << rc.row << ',' << rc.col << ',' << rc.head;
    for (int k = 0; k < 5; ++k) os << ',' << fmt(t[k]);
    for (int k = 0; k < 4; ++k) os << ',' << fmt(rc.x[k]) << ',' << fmt(rc.y[k]);
    os << '\n';
  }
  return os.str();
}

std::string geometry_svg(const WindowGrid& grid, const WindowTransform& transform,
                         int head_filter) {
  const double px = 10.0;  // pixels per token
  const char* palette[] = {"#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#46f0f0",
                           "#f032e6", "#bcf60c", "#fabebe", "#008080", "#9a6324", "#800000"};
  const int ncolors = static_cast<int>(sizeof(palette) / sizeof(palette[0]));
  double width = grid.padded_width() * px, height = grid.padded_height() * px;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\""
     << fmt(height) << "\" viewBox=\"0 0 " << fmt(width) << " " << fmt(height) << "\">\n";
  os << "<rect width=\"" << fmt(width) << "\" height=\"" << fmt(height)
     << "\" fill=\"#ffffff\"/>\n";
  // unpadded region outline; the strip outside it is the zero padding
  os << "<rect x=\"0\" y=\"0\" width=\"" << fmt(grid.width * px) << "\" height=\""
     << fmt(grid.height * px) << "\" fill=\"#f2f2f2\" stroke=\"#cccccc\"/>\n";
  for (const WindowRect& rc : window_rects(grid, transform)) {
    if (head_filter >= 0 && rc.head != head_filter) continue;
    os << "<polygon points=\"";
    for (int k = 0; k < 4; ++k) {
      // token centers sit at (i + 0.5) * px
      os << fmt((rc.x[k] + 0.5) * px) << ',' << fmt((rc.y[k] + 0.5) * px);
      if (k != 3) os << ' ';
    }
    os << "\" fill=\"none\" stroke=\"" << palette[rc.head % ncolors]
       << "\" stroke-width=\"1.5\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace rvsa
