#include <cmath>
#include <set>

#include "doctest.h"
#include "rvsa/geometry.hpp"
#include "rvsa/rng.hpp"

using namespace rvsa;

TEST_CASE("partition covers the grid with bottom-right padding") {
  WindowGrid g = partition(64, 64, 7);
  CHECK(g.num_windows() == 100);
  CHECK(g.rows == 10);
  CHECK(g.pad_h == 6);
  CHECK(g.pad_w == 6);
  CHECK(g.padded_height() == 70);

  WindowGrid exact = partition(14, 21, 7);
  CHECK(exact.num_windows() == 6);
  CHECK(exact.pad_h == 0);
  CHECK(exact.pad_w == 0);

  CHECK_THROWS_AS(partition(0, 4, 2), std::invalid_argument);
  CHECK_THROWS_AS(partition(4, 4, 0), std::invalid_argument);

  // every padded token belongs to exactly one window
  WindowGrid g2 = partition(10, 11, 4);
  std::set<int> seen;
  for (int r = 0; r < g2.rows; ++r)
    for (int c = 0; c < g2.cols; ++c)
      for (int idx : g2.token_indices(r, c)) {
        CHECK(seen.insert(idx).second);
      }
  CHECK(static_cast<int>(seen.size()) == g2.padded_height() * g2.padded_width());
}

TEST_CASE("window centers sit mid-window") {
  WindowGrid g = partition(14, 14, 7);
  double cx, cy;
  g.center(0, 0, cx, cy);
  CHECK(cx == 3.0);
  CHECK(cy == 3.0);
  g.center(1, 1, cx, cy);
  CHECK(cx == 10.0);
  CHECK(cy == 10.0);

  WindowGrid even = partition(8, 8, 4);
  even.center(0, 1, cx, cy);
  CHECK(cx == 5.5);
  CHECK(cy == 1.5);
}

TEST_CASE("relative offsets form the centered lattice") {
  Tensor rel = window_relative_offsets(3);
  CHECK(rel.dim(0) == 9);
  CHECK(rel.at(0, 0) == -1.0);
  CHECK(rel.at(0, 1) == -1.0);
  CHECK(rel.at(4, 0) == 0.0);
  CHECK(rel.at(8, 1) == 1.0);
  Tensor rel4 = window_relative_offsets(4);
  CHECK(rel4.at(0, 0) == -1.5);
  CHECK(rel4.at(15, 1) == 1.5);
}

TEST_CASE("transform_point rotation follows the stated matrix") {
  double x, y;
  const double pi = std::acos(-1.0);
  // quarter turn sends (3, 3) to (3, -3): row 1 is (cos, sin), row 2 (-sin, cos)
  transform_point(3, 3, 0, 0, 1, 1, 0, 0, pi / 2, x, y);
  CHECK(x == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(y == doctest::Approx(-3.0).epsilon(1e-15));

  // scale and offset compose around the center
  transform_point(1, 2, 10, 20, 2, 3, 0.5, -0.5, 0, x, y);
  CHECK(x == doctest::Approx(12.5));
  CHECK(y == doctest::Approx(25.5));

  // theta then -theta round-trips
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    double rx = rng.uniform(-3, 3), ry = rng.uniform(-3, 3);
    double th = rng.uniform(-pi, pi);
    double mx, my;
    transform_point(rx, ry, 0, 0, 1, 1, 0, 0, th, mx, my);
    double bx, by;
    transform_point(mx, my, 0, 0, 1, 1, 0, 0, -th, bx, by);
    CHECK(bx == doctest::Approx(rx).epsilon(1e-12));
    CHECK(by == doctest::Approx(ry).epsilon(1e-12));
  }
}

TEST_CASE("identity transform grid hits the integer lattice") {
  WindowGrid g = partition(14, 14, 7);
  WindowTransform id = WindowTransform::identity(g.num_windows(), 2);
  SampleGrid sg = transform_grid(g, id);
  CHECK(sg.points_per_window == 49);
  const double* pts = sg.at(0, 0);
  CHECK(pts[0] == 0.0);  // first lattice point of window (0,0)
  CHECK(pts[1] == 0.0);
  // every coordinate is an exact integer inside the window
  for (int wdx = 0; wdx < g.num_windows(); ++wdx)
    for (int h = 0; h < 2; ++h) {
      const double* p = sg.at(wdx, h);
      for (int i = 0; i < 49 * 2; ++i) CHECK(p[i] == std::floor(p[i]));
    }
}

TEST_CASE("bilinear_point matches the closed-form four-neighbor blend") {
  Rng rng(3);
  Tensor map = rng.normal_tensor({2, 4, 5});
  double out[2];
  // interior point: manual blend
  double x = 1.25, y = 2.5;
  bilinear_point(map, x, y, out);
  for (int c = 0; c < 2; ++c) {
    double a = map.at(c, 2, 1), b = map.at(c, 2, 2), d = map.at(c, 3, 1), e = map.at(c, 3, 2);
    double want = (a * 0.75 + b * 0.25) * 0.5 + (d * 0.75 + e * 0.25) * 0.5;
    CHECK(out[c] == doctest::Approx(want).epsilon(1e-15));
  }
  // integer point is exact gather
  bilinear_point(map, 3.0, 1.0, out);
  CHECK(out[0] == map.at(0, 1, 3));
  // far outside: zero
  bilinear_point(map, -5.0, 100.0, out);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);
  // straddling the border blends with virtual zeros
  bilinear_point(map, -0.5, 0.0, out);
  CHECK(out[0] == doctest::Approx(0.5 * map.at(0, 0, 0)).epsilon(1e-15));
}

TEST_CASE("geometry exports") {
  WindowGrid g = partition(8, 8, 4);
  WindowTransform tr = WindowTransform::identity(g.num_windows(), 3);
  std::string csv = geometry_csv(2, g, tr);
  CHECK(csv.find("layer,window_row,window_col,head,s_x,s_y,o_x,o_y,theta") == 0);
  // one header + windows*heads rows
  int lines = 0;
  for (char c : csv)
    if (c == '\n') ++lines;
  CHECK(lines == 1 + g.num_windows() * 3);

  std::string svg = geometry_svg(g, tr);
  CHECK(svg.find("<svg") != std::string::npos);
  int polys = 0;
  for (std::size_t p = svg.find("<polygon"); p != std::string::npos;
       p = svg.find("<polygon", p + 1))
    ++polys;
  CHECK(polys == g.num_windows() * 3);
  std::string one_head = geometry_svg(g, tr, 1);
  int polys1 = 0;
  for (std::size_t p = one_head.find("<polygon"); p != std::string::npos;
       p = one_head.find("<polygon", p + 1))
    ++polys1;
  CHECK(polys1 == g.num_windows());

  // identity rectangles are axis-aligned and tile the grid
  auto rects = window_rects(g, tr);
  CHECK(rects.size() == static_cast<std::size_t>(g.num_windows() * 3));
  const WindowRect& r0 = rects[0];
  CHECK(r0.x[0] == 0.0);
  CHECK(r0.y[0] == 0.0);
  CHECK(r0.x[1] == 3.0);
  CHECK(r0.y[2] == 3.0);
}
