#include "png_plot.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>

#include "eatr/errors.hpp"
#include "eatr/util.hpp"

namespace eatr::plot {

namespace {

void put_u32be(std::string& out, uint32_t v) {
  out.push_back(char((v >> 24) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char(v & 0xff));
}

void append_chunk(std::string& out, const char type[4],
                  const std::string& payload) {
  put_u32be(out, uint32_t(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  const auto crc =
      crc32(0, reinterpret_cast<const Bytef*>(body.data()), uInt(body.size()));
  put_u32be(out, uint32_t(crc));
}

std::string encode_png_rgb(int w, int h, const std::vector<uint8_t>& rgb) {
  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32be(ihdr, uint32_t(w));
  put_u32be(ihdr, uint32_t(h));
  ihdr += char(8);  // bit depth
  ihdr += char(2);  // truecolor
  ihdr += char(0);
  ihdr += char(0);
  ihdr += char(0);
  append_chunk(png, "IHDR", ihdr);

  std::vector<uint8_t> raw;
  raw.reserve(size_t(h) * (size_t(w) * 3 + 1));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), rgb.begin() + size_t(y) * size_t(w) * 3,
               rgb.begin() + size_t(y + 1) * size_t(w) * 3);
  }
  uLongf bound = compressBound(uLong(raw.size()));
  std::string idat(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(idat.data()), &bound, raw.data(),
                uLong(raw.size()), 6) != Z_OK)
    throw ValidationError("png: compression failed");
  idat.resize(bound);
  append_chunk(png, "IDAT", idat);
  append_chunk(png, "IEND", "");
  return png;
}

struct Canvas {
  int w, h;
  std::vector<uint8_t> px;
  Canvas(int w_, int h_) : w(w_), h(h_), px(size_t(w_) * size_t(h_) * 3, 255) {}

  void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    const size_t i = (size_t(y) * size_t(w) + size_t(x)) * 3;
    px[i] = r;
    px[i + 1] = g;
    px[i + 2] = b;
  }

  void line(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, r, g, b);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
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
};

// 4x6 glyphs for numeric labels; each byte is one row, low 4 bits used.
const uint8_t* glyph(char c) {
  static const uint8_t digits[10][6] = {
      {0x6, 0x9, 0x9, 0x9, 0x9, 0x6}, {0x2, 0x6, 0x2, 0x2, 0x2, 0x7},
      {0x6, 0x9, 0x1, 0x2, 0x4, 0xf}, {0xe, 0x1, 0x6, 0x1, 0x9, 0x6},
      {0x9, 0x9, 0xf, 0x1, 0x1, 0x1}, {0xf, 0x8, 0xe, 0x1, 0x9, 0x6},
      {0x6, 0x8, 0xe, 0x9, 0x9, 0x6}, {0xf, 0x1, 0x2, 0x2, 0x4, 0x4},
      {0x6, 0x9, 0x6, 0x9, 0x9, 0x6}, {0x6, 0x9, 0x9, 0x7, 0x1, 0x6}};
  static const uint8_t dot[6] = {0x0, 0x0, 0x0, 0x0, 0x6, 0x6};
  static const uint8_t minus[6] = {0x0, 0x0, 0xf, 0x0, 0x0, 0x0};
  static const uint8_t plus[6] = {0x0, 0x4, 0xe, 0x4, 0x0, 0x0};
  static const uint8_t ee[6] = {0x0, 0x6, 0x9, 0xf, 0x8, 0x7};
  static const uint8_t blank[6] = {0, 0, 0, 0, 0, 0};
  if (c >= '0' && c <= '9') return digits[c - '0'];
  if (c == '.') return dot;
  if (c == '-') return minus;
  if (c == '+') return plus;
  if (c == 'e' || c == 'E') return ee;
  return blank;
}

void draw_text(Canvas& cv, int x, int y, const std::string& s, uint8_t r,
               uint8_t g, uint8_t b) {
  const int scale = 2;
  for (char c : s) {
    const uint8_t* rows = glyph(c);
    for (int gy = 0; gy < 6; ++gy)
      for (int gx = 0; gx < 4; ++gx)
        if (rows[gy] & (0x8 >> gx))
          for (int sy = 0; sy < scale; ++sy)
            for (int sx = 0; sx < scale; ++sx)
              cv.set(x + gx * scale + sx, y + gy * scale + sy, r, g, b);
    x += 5 * scale;
  }
}

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

void line_plot_png(const std::string& path, const std::vector<Series>& series,
                   int width, int height) {
  if (width < 80 || height < 60)
    throw ValidationError("plot: canvas too small");
  Canvas cv(width, height);
  const int left = 18, right = width - 12, top = 12, bottom = height - 26;

  double ymin = std::numeric_limits<double>::infinity();
  double ymax = -std::numeric_limits<double>::infinity();
  size_t n = 0;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
    for (double v : s.y)
      if (std::isfinite(v)) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
  }
  if (!(ymin <= ymax)) {
    ymin = 0;
    ymax = 1;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 1;
    ymax += 1;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  auto px = [&](size_t i) {
    return n <= 1 ? left
                  : left + int(std::lround(double(right - left) * double(i) /
                                           double(n - 1)));
  };
  auto py = [&](double v) {
    return bottom - int(std::lround(double(bottom - top) * (v - ymin) /
                                    (ymax - ymin)));
  };

  for (int k = 1; k < 4; ++k) {  // light horizontal grid
    const int y = top + (bottom - top) * k / 4;
    cv.line(left, y, right, y, 225, 225, 225);
  }
  cv.line(left, top, left, bottom, 60, 60, 60);
  cv.line(left, bottom, right, bottom, 60, 60, 60);

  for (const auto& s : series) {
    int last_x = 0, last_y = 0;
    bool have_last = false;
    for (size_t i = 0; i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) {
        have_last = false;
        continue;
      }
      const int x = px(i), y = py(s.y[i]);
      if (have_last) cv.line(last_x, last_y, x, y, s.r, s.g, s.b);
      cv.set(x, y, s.r, s.g, s.b);
      last_x = x;
      last_y = y;
      have_last = true;
    }
  }

  draw_text(cv, left + 3, top, fmt_num(ymax), 60, 60, 60);
  draw_text(cv, left + 3, bottom - 14, fmt_num(ymin), 60, 60, 60);
  if (n > 0)
    draw_text(cv, right - int(fmt_num(double(n - 1)).size()) * 10,
              bottom + 4, fmt_num(double(n - 1)), 60, 60, 60);

  util::atomic_write_file(path, encode_png_rgb(width, height, cv.px));
}

}  // namespace eatr::plot
