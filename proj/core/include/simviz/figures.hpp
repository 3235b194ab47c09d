#ifndef SIMVIZ_FIGURES_HPP
#define SIMVIZ_FIGURES_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "simviz/tensor.hpp"

namespace simviz::fig {

struct Color {
  unsigned char r = 0, g = 0, b = 0;
};

class Canvas {
 public:
  Canvas(int64_t width, int64_t height, Color background = {255, 255, 255});
  int64_t width() const { return w_; }
  int64_t height() const { return h_; }
  const std::vector<unsigned char>& rgb() const { return px_; }

  void set(int64_t x, int64_t y, Color c);
  void fill_rect(int64_t x0, int64_t y0, int64_t w, int64_t h, Color c);
  void line(int64_t x0, int64_t y0, int64_t x1, int64_t y1, Color c);
  /// 5x7 bitmap font, uppercased; unknown glyphs render as a hollow box.
  void text(int64_t x, int64_t y, const std::string& s, Color c, int64_t scale = 1);
  static int64_t text_width(const std::string& s, int64_t scale = 1);

 private:
  int64_t w_, h_;
  std::vector<unsigned char> px_;
};

void write_png(const std::string& path, const Canvas& canvas);

/// Central slice along axis 0 for rank-3 maps; identity for rank-2.
Tensor central_slice(const Tensor& map);

/// Min-max normalized grayscale rendering, pixel-replicated by `scale`.
Canvas render_gray(const Tensor& map2d, int64_t scale = 1);

/// Symmetric diverging rendering (blue = negative, red = positive) scaled by
/// max |value| unless `vmax` is given.
Canvas render_diverging(const Tensor& map2d, int64_t scale = 1, double vmax = 0.0);

Canvas hstack(const std::vector<Canvas>& tiles, int64_t pad = 4, Color bg = {255, 255, 255});
Canvas vstack(const std::vector<Canvas>& tiles, int64_t pad = 4, Color bg = {255, 255, 255});
/// Adds a caption strip above the canvas.
Canvas captioned(const Canvas& c, const std::string& caption);

struct Series {
  std::string label;
  std::vector<double> values;
  Color color;
};

Canvas line_chart(const std::vector<Series>& series, int64_t width, int64_t height,
                  const std::string& title);

Canvas bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                 int64_t width, int64_t height, const std::string& title);

}  // namespace simviz::fig

#endif
