#pragma once

#include <filesystem>
#include <fstream>
#include <vector>

#include "pathfinder/grid.hpp"

namespace pathfinder {

// Deterministic image emission without an image library: grayscale maps as
// binary PGM, curve plots as binary PPM. Value-to-intensity mapping is
// round(v * 255) on [0,1] grids.

inline void write_pgm(const std::filesystem::path& path, const Grid& g) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "write_pgm: cannot open ", path.string());
  os << "P5\n" << g.cols << " " << g.rows << "\n255\n";
  std::vector<unsigned char> buf(g.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<unsigned char>(std::lround(clamp01(g.v[i]) * 255.0));
  }
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size()));
  require(os.good(), "write_pgm: write failed for ", path.string());
}

struct Rgb {
  unsigned char r = 0, g = 0, b = 0;
};

class Canvas {
 public:
  Canvas(int w, int h, Rgb fill = {255, 255, 255})
      : w_(w), h_(h), px_(std::size_t(w) * h, fill) {}

  int width() const { return w_; }
  int height() const { return h_; }

  void set(int x, int y, Rgb c) {
    if (x < 0 || x >= w_ || y < 0 || y >= h_) return;
    px_[std::size_t(y) * w_ + x] = c;
  }

  void line(double x0, double y0, double x1, double y1, Rgb c) {
    const int steps = std::max(2, int(std::abs(x1 - x0) + std::abs(y1 - y0)) * 2);
    for (int i = 0; i <= steps; ++i) {
      const double t = double(i) / steps;
      set(int(std::lround(x0 + t * (x1 - x0))), int(std::lround(y0 + t * (y1 - y0))), c);
    }
  }

  void write_ppm(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "Canvas::write_ppm: cannot open ", path.string());
    os << "P6\n" << w_ << " " << h_ << "\n255\n";
    os.write(reinterpret_cast<const char*>(px_.data()),
             static_cast<std::streamsize>(px_.size() * 3));
    require(os.good(), "Canvas::write_ppm: write failed");
  }

 private:
  int w_, h_;
  std::vector<Rgb> px_;
};
static_assert(sizeof(Rgb) == 3);

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  Rgb color;
};

// Minimal line chart: framed plot area, series scaled to the joint data
// range. Axis ranges are emitted alongside in a .txt file by the CLI.
inline void plot_series(const std::filesystem::path& path, const std::vector<Series>& series,
                        int w = 640, int h = 420) {
  require(!series.empty(), "plot_series: no series");
  double xmin = series[0].x.front(), xmax = xmin, ymin = series[0].y.front(), ymax = ymin;
  for (const auto& s : series) {
    require(!s.x.empty() && s.x.size() == s.y.size(), "plot_series: bad series");
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;

  Canvas canvas(w, h);
  const int m = 40;  // margin
  const Rgb frame{60, 60, 60};
  canvas.line(m, m, m, h - m, frame);
  canvas.line(m, h - m, w - m, h - m, frame);
  canvas.line(w - m, m, w - m, h - m, frame);
  canvas.line(m, m, w - m, m, frame);

  auto sx = [&](double x) { return m + (x - xmin) / (xmax - xmin) * (w - 2 * m); };
  auto sy = [&](double y) { return h - m - (y - ymin) / (ymax - ymin) * (h - 2 * m); };
  for (const auto& s : series) {
    for (std::size_t i = 1; i < s.x.size(); ++i) {
      canvas.line(sx(s.x[i - 1]), sy(s.y[i - 1]), sx(s.x[i]), sy(s.y[i]), s.color);
    }
  }
  canvas.write_ppm(path);
}

}  // namespace pathfinder
