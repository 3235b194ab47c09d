#include "simviz/figures.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace simviz::fig {

Canvas::Canvas(int64_t width, int64_t height, Color bg) : w_(width), h_(height) {
  px_.resize(static_cast<size_t>(w_ * h_ * 3));
  for (int64_t i = 0; i < w_ * h_; ++i) {
    px_[static_cast<size_t>(3 * i)] = bg.r;
    px_[static_cast<size_t>(3 * i + 1)] = bg.g;
    px_[static_cast<size_t>(3 * i + 2)] = bg.b;
  }
}

void Canvas::set(int64_t x, int64_t y, Color c) {
  if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
  const size_t i = static_cast<size_t>(3 * (y * w_ + x));
  px_[i] = c.r;
  px_[i + 1] = c.g;
  px_[i + 2] = c.b;
}

void Canvas::fill_rect(int64_t x0, int64_t y0, int64_t w, int64_t h, Color c) {
  for (int64_t y = y0; y < y0 + h; ++y)
    for (int64_t x = x0; x < x0 + w; ++x) set(x, y, c);
}

void Canvas::line(int64_t x0, int64_t y0, int64_t x1, int64_t y1, Color c) {
  const int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int64_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int64_t err = dx + dy;
  while (true) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int64_t e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

namespace {

struct Glyph {
  char ch;
  unsigned char rows[7];
};

// Classic 5x7 dot matrix, 5 least significant bits per row.
constexpr Glyph kFont[] = {
    {' ', {0, 0, 0, 0, 0, 0, 0}},
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {'%', {0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
};

const unsigned char* glyph_rows(char ch) {
  const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  for (const auto& g : kFont)
    if (g.ch == up) return g.rows;
  return nullptr;
}

}  // namespace

void Canvas::text(int64_t x, int64_t y, const std::string& s, Color c, int64_t scale) {
  int64_t cx = x;
  for (char ch : s) {
    const unsigned char* rows = glyph_rows(ch);
    for (int64_t ry = 0; ry < 7; ++ry) {
      for (int64_t rx = 0; rx < 5; ++rx) {
        const bool on = rows ? (rows[ry] >> (4 - rx)) & 1
                             : (ry == 0 || ry == 6 || rx == 0 || rx == 4);
        if (!on) continue;
        fill_rect(cx + rx * scale, y + ry * scale, scale, scale, c);
      }
    }
    cx += 6 * scale;
  }
}

int64_t Canvas::text_width(const std::string& s, int64_t scale) {
  return static_cast<int64_t>(s.size()) * 6 * scale;
}

void write_png(const std::string& path, const Canvas& canvas) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
    throw std::runtime_error("png write failed: " + path);
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(canvas.width()),
               static_cast<png_uint_32>(canvas.height()), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(canvas.height()));
  const unsigned char* base = canvas.rgb().data();
  for (int64_t y = 0; y < canvas.height(); ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<png_bytep>(base + y * canvas.width() * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

Tensor central_slice(const Tensor& map) {
  if (map.rank() == 2) return map;
  if (map.rank() != 3) throw std::invalid_argument("central_slice: rank must be 2 or 3");
  const int64_t D = map.dim(0), H = map.dim(1), W = map.dim(2);
  Tensor out({H, W});
  const double* src = map.data() + (D / 2) * H * W;
  std::copy_n(src, H * W, out.data());
  return out;
}

Canvas render_gray(const Tensor& map2d, int64_t scale) {
  if (map2d.rank() != 2) throw std::invalid_argument("render_gray: need a 2-d map");
  const double lo = map2d.min(), hi = map2d.max();
  const double span = hi - lo > 0 ? hi - lo : 1.0;
  const int64_t H = map2d.dim(0), W = map2d.dim(1);
  Canvas c(W * scale, H * scale);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      const auto v = static_cast<unsigned char>(255.0 * (map2d[y * W + x] - lo) / span);
      c.fill_rect(x * scale, y * scale, scale, scale, {v, v, v});
    }
  return c;
}

Canvas render_diverging(const Tensor& map2d, int64_t scale, double vmax) {
  if (map2d.rank() != 2) throw std::invalid_argument("render_diverging: need a 2-d map");
  double m = vmax > 0 ? vmax : map2d.abs_max();
  if (m == 0) m = 1.0;
  const int64_t H = map2d.dim(0), W = map2d.dim(1);
  Canvas c(W * scale, H * scale);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      const double t = std::clamp(map2d[y * W + x] / m, -1.0, 1.0);
      Color col;
      if (t < 0) {
        const auto f = static_cast<unsigned char>(255.0 * (1.0 + t));
        col = {f, f, 255};
      } else {
        const auto f = static_cast<unsigned char>(255.0 * (1.0 - t));
        col = {255, f, f};
      }
      c.fill_rect(x * scale, y * scale, scale, scale, col);
    }
  return c;
}

Canvas hstack(const std::vector<Canvas>& tiles, int64_t pad, Color bg) {
  int64_t w = pad, h = 0;
  for (const auto& t : tiles) {
    w += t.width() + pad;
    h = std::max(h, t.height());
  }
  h += 2 * pad;
  Canvas out(w, h, bg);
  int64_t x = pad;
  for (const auto& t : tiles) {
    for (int64_t y = 0; y < t.height(); ++y)
      for (int64_t xx = 0; xx < t.width(); ++xx) {
        const size_t i = static_cast<size_t>(3 * (y * t.width() + xx));
        out.set(x + xx, pad + y, {t.rgb()[i], t.rgb()[i + 1], t.rgb()[i + 2]});
      }
    x += t.width() + pad;
  }
  return out;
}

Canvas vstack(const std::vector<Canvas>& tiles, int64_t pad, Color bg) {
  int64_t w = 0, h = pad;
  for (const auto& t : tiles) {
    h += t.height() + pad;
    w = std::max(w, t.width());
  }
  w += 2 * pad;
  Canvas out(w, h, bg);
  int64_t y = pad;
  for (const auto& t : tiles) {
    for (int64_t yy = 0; yy < t.height(); ++yy)
      for (int64_t xx = 0; xx < t.width(); ++xx) {
        const size_t i = static_cast<size_t>(3 * (yy * t.width() + xx));
        out.set(pad + xx, y + yy, {t.rgb()[i], t.rgb()[i + 1], t.rgb()[i + 2]});
      }
    y += t.height() + pad;
  }
  return out;
}

Canvas captioned(const Canvas& c, const std::string& caption) {
  const int64_t strip = 12;
  Canvas out(std::max(c.width(), Canvas::text_width(caption) + 4), c.height() + strip);
  out.text(2, 2, caption, {0, 0, 0});
  for (int64_t y = 0; y < c.height(); ++y)
    for (int64_t x = 0; x < c.width(); ++x) {
      const size_t i = static_cast<size_t>(3 * (y * c.width() + x));
      out.set(x, strip + y, {c.rgb()[i], c.rgb()[i + 1], c.rgb()[i + 2]});
    }
  return out;
}

namespace {
void chart_frame(Canvas& c, int64_t left, int64_t top, int64_t right, int64_t bottom,
                 const std::string& title) {
  c.text(left, 2, title, {0, 0, 0});
  c.line(left, c.height() - bottom, c.width() - right, c.height() - bottom, {0, 0, 0});
  c.line(left, top, left, c.height() - bottom, {0, 0, 0});
}
}  // namespace

Canvas line_chart(const std::vector<Series>& series, int64_t width, int64_t height,
                  const std::string& title) {
  Canvas c(width, height);
  const int64_t left = 40, right = 10, top = 16, bottom = 24;
  double lo = 0, hi = 1;
  bool first = true;
  size_t n = 0;
  for (const auto& s : series) {
    n = std::max(n, s.values.size());
    for (double v : s.values) {
      if (first) {
        lo = hi = v;
        first = false;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  chart_frame(c, left, top, right, bottom, title);
  const auto px = [&](size_t i) {
    return left + 1 +
           static_cast<int64_t>((width - left - right - 2) * static_cast<double>(i) /
                                std::max<double>(1.0, static_cast<double>(n - 1)));
  };
  const auto py = [&](double v) {
    return top + static_cast<int64_t>((height - top - bottom) * (1.0 - (v - lo) / (hi - lo)));
  };
  // Axis extremes.
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", hi);
  c.text(2, top, buf, {0, 0, 0});
  std::snprintf(buf, sizeof(buf), "%.2f", lo);
  c.text(2, height - bottom - 8, buf, {0, 0, 0});

  int64_t lx = left;
  for (const auto& s : series) {
    for (size_t i = 1; i < s.values.size(); ++i)
      c.line(px(i - 1), py(s.values[i - 1]), px(i), py(s.values[i]), s.color);
    c.text(lx, height - bottom + 6, s.label, s.color);
    lx += Canvas::text_width(s.label) + 12;
  }
  return c;
}

Canvas bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                 int64_t width, int64_t height, const std::string& title) {
  if (labels.size() != values.size()) throw std::invalid_argument("bar_chart: label/value mismatch");
  Canvas c(width, height);
  const int64_t left = 40, right = 10, top = 16, bottom = 34;
  double lo = 0.0, hi = 0.0;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  chart_frame(c, left, top, right, bottom, title);
  const auto py = [&](double v) {
    return top + static_cast<int64_t>((height - top - bottom) * (1.0 - (v - lo) / (hi - lo)));
  };
  const int64_t zero_y = py(0.0);
  c.line(left, zero_y, width - right, zero_y, {160, 160, 160});
  const int64_t n = static_cast<int64_t>(values.size());
  const int64_t span = (width - left - right) / std::max<int64_t>(n, 1);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t x = left + i * span + span / 6;
    const int64_t bw = span - span / 3;
    const int64_t y = py(values[static_cast<size_t>(i)]);
    const Color col = values[static_cast<size_t>(i)] >= 0 ? Color{70, 120, 200} : Color{200, 90, 70};
    c.fill_rect(x, std::min(y, zero_y), bw, std::abs(zero_y - y), col);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", values[static_cast<size_t>(i)]);
    c.text(x, std::min(y, zero_y) - 9, buf, {0, 0, 0});
    c.text(x, height - bottom + 6, labels[static_cast<size_t>(i)], {0, 0, 0});
  }
  return c;
}

}  // namespace simviz::fig
