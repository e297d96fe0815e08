#include <array>
#include <climits>
#include <cstdlib>
#include <vector>

#include "capnet/roi.hpp"

namespace capnet::roi {

namespace {

// Counter-clockwise on screen (y down): E, NE, N, NW, W, SW, S, SE.
constexpr std::array<int, 8> kDx{1, 1, 0, -1, -1, -1, 0, 1};
constexpr std::array<int, 8> kDy{0, -1, -1, -1, 0, 1, 1, 1};

int direction_of(int dx, int dy) {
  for (int d = 0; d < 8; ++d) {
    if (kDx[static_cast<std::size_t>(d)] == dx && kDy[static_cast<std::size_t>(d)] == dy) return d;
  }
  return -1;
}

struct BorderInfo {
  bool is_hole = false;
  int parent = 0;  // border number (1 = image frame)
};

}  // namespace

std::vector<Contour> find_contours(const BinaryMask& mask) {
  const int w = mask.width() + 2;
  const int h = mask.height() + 2;
  // Zero frame around the image; values: 0 background, 1 unvisited foreground,
  // +-NBD visited border pixels.
  Grid<int> f(w, h, 0);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) f(x + 1, y + 1) = mask(x, y) != 0 ? 1 : 0;

  std::vector<BorderInfo> borders(2);  // index by NBD; 1 is the frame (a hole border)
  borders[1] = {true, 0};
  std::vector<int> contour_of_border(2, -1);
  std::vector<Contour> result;

  int nbd = 1;
  for (int y = 1; y < h - 1; ++y) {
    int lnbd = 1;
    for (int x = 1; x < w - 1; ++x) {
      const int v = f(x, y);
      if (v == 0) continue;

      bool start = false;
      bool is_hole = false;
      int fromx = 0;
      int fromy = 0;
      if (v == 1 && f(x - 1, y) == 0) {
        start = true;
        fromx = x - 1;
        fromy = y;
      } else if (v >= 1 && f(x + 1, y) == 0) {
        start = true;
        is_hole = true;
        fromx = x + 1;
        fromy = y;
        if (v > 1) lnbd = v;
      }

      if (start) {
        ++nbd;
        const BorderInfo& prev = borders[static_cast<std::size_t>(lnbd)];
        int parent;
        if (is_hole) {
          parent = prev.is_hole ? prev.parent : lnbd;
        } else {
          parent = prev.is_hole ? lnbd : prev.parent;
        }
        borders.push_back({is_hole, parent});

        Contour contour;
        contour.is_hole = is_hole;
        const int parent_contour = contour_of_border[static_cast<std::size_t>(parent)];
        contour.parent = parent_contour;
        contour.level = parent_contour < 0 ? 0 : result[static_cast<std::size_t>(parent_contour)].level + 1;

        // 3.1: clockwise search around (x, y) starting at the entry neighbour.
        const int d0 = direction_of(fromx - x, fromy - y);
        int found = -1;
        for (int i = 0; i < 8; ++i) {
          const int d = (d0 - i + 8) % 8;
          if (f(x + kDx[static_cast<std::size_t>(d)], y + kDy[static_cast<std::size_t>(d)]) != 0) {
            found = d;
            break;
          }
        }
        if (found < 0) {
          f(x, y) = -nbd;
          contour.points.push_back({x - 1, y - 1});
        } else {
          const int x1 = x + kDx[static_cast<std::size_t>(found)];
          const int y1 = y + kDy[static_cast<std::size_t>(found)];
          int x2 = x1, y2 = y1;
          int x3 = x, y3 = y;
          while (true) {
            // 3.3: counter-clockwise search around (x3, y3) starting after (x2, y2).
            const int dstart = direction_of(x2 - x3, y2 - y3);
            bool east_examined_zero = false;
            int x4 = x3, y4 = y3;
            for (int i = 1; i <= 8; ++i) {
              const int d = (dstart + i) % 8;
              const int nx = x3 + kDx[static_cast<std::size_t>(d)];
              const int ny = y3 + kDy[static_cast<std::size_t>(d)];
              if (f(nx, ny) != 0) {
                x4 = nx;
                y4 = ny;
                break;
              }
              if (d == 0) east_examined_zero = true;
            }
            // 3.4
            if (east_examined_zero) {
              f(x3, y3) = -nbd;
            } else if (f(x3, y3) == 1) {
              f(x3, y3) = nbd;
            }
            contour.points.push_back({x3 - 1, y3 - 1});
            // 3.5
            if (x4 == x && y4 == y && x3 == x1 && y3 == y1) break;
            x2 = x3;
            y2 = y3;
            x3 = x4;
            y3 = y4;
          }
        }
        contour_of_border.push_back(static_cast<int>(result.size()));
        result.push_back(std::move(contour));
      }

      const int fv = f(x, y);
      if (fv != 1) lnbd = std::abs(fv);
    }
  }
  return result;
}

Rect bounding_rect(const Contour& contour) {
  if (contour.points.empty()) return {};
  int x0 = INT_MAX, y0 = INT_MAX, x1 = INT_MIN, y1 = INT_MIN;
  for (const auto& p : contour.points) {
    x0 = std::min(x0, p.x);
    y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x);
    y1 = std::max(y1, p.y);
  }
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

}  // namespace capnet::roi
