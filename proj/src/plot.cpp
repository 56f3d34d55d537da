#include "csnet/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "csnet/error.hpp"

namespace csnet {

namespace {

struct Color {
    std::uint8_t b = 0, g = 0, r = 0;
};

constexpr Color kBackground{255, 255, 255};
constexpr Color kBorder{90, 90, 90};
constexpr Color kGrid{228, 228, 228};
constexpr Color kText{40, 40, 40};
constexpr Color kLoss{200, 90, 30};       // blue
constexpr Color kTrainErr{40, 150, 235};  // orange
constexpr Color kEvalErr{60, 60, 215};    // red

class Canvas {
  public:
    Canvas(int width, int height) : w_(width), h_(height) {
        pixels_.assign(static_cast<std::size_t>(w_) * h_, kBackground);
    }

    void set(int x, int y, Color c) {
        if (x >= 0 && x < w_ && y >= 0 && y < h_)
            pixels_[static_cast<std::size_t>(y) * w_ + x] = c;
    }

    void line(int x0, int y0, int x1, int y1, Color c) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) { err += dy; x0 += sx; }
            if (e2 <= dx) { err += dx; y0 += sy; }
        }
    }

    void dot(int x, int y, Color c) {
        for (int oy = -1; oy <= 1; ++oy)
            for (int ox = -1; ox <= 1; ++ox) set(x + ox, y + oy, c);
    }

    void text(int x, int y, const std::string& s, Color c);

    void write_bmp(const std::string& path) const;

  private:
    int w_, h_;
    std::vector<Color> pixels_;
};

/// 5x7 glyph columns, least significant bit on the top row. Only the
/// characters the chart labels use are defined.
const std::uint8_t* glyph(char ch) {
    static constexpr struct {
        char ch;
        std::uint8_t cols[5];
    } kFont[] = {
        {'0', {0x3E, 0x51, 0x49, 0x45, 0x3E}}, {'1', {0x00, 0x42, 0x7F, 0x40, 0x00}},
        {'2', {0x42, 0x61, 0x51, 0x49, 0x46}}, {'3', {0x21, 0x41, 0x45, 0x4B, 0x31}},
        {'4', {0x18, 0x14, 0x12, 0x7F, 0x10}}, {'5', {0x27, 0x45, 0x45, 0x45, 0x39}},
        {'6', {0x3C, 0x4A, 0x49, 0x49, 0x30}}, {'7', {0x01, 0x71, 0x09, 0x05, 0x03}},
        {'8', {0x36, 0x49, 0x49, 0x49, 0x36}}, {'9', {0x06, 0x49, 0x49, 0x29, 0x1E}},
        {'.', {0x00, 0x60, 0x60, 0x00, 0x00}}, {'%', {0x62, 0x64, 0x08, 0x13, 0x23}},
        {'-', {0x08, 0x08, 0x08, 0x08, 0x08}}, {'A', {0x7E, 0x11, 0x11, 0x11, 0x7E}},
        {'C', {0x3E, 0x41, 0x41, 0x41, 0x22}}, {'E', {0x7F, 0x49, 0x49, 0x49, 0x41}},
        {'H', {0x7F, 0x08, 0x08, 0x08, 0x7F}}, {'I', {0x00, 0x41, 0x7F, 0x41, 0x00}},
        {'L', {0x7F, 0x40, 0x40, 0x40, 0x40}}, {'N', {0x7F, 0x04, 0x08, 0x10, 0x7F}},
        {'O', {0x3E, 0x41, 0x41, 0x41, 0x3E}}, {'P', {0x7F, 0x09, 0x09, 0x09, 0x06}},
        {'R', {0x7F, 0x09, 0x19, 0x29, 0x46}}, {'S', {0x46, 0x49, 0x49, 0x49, 0x31}},
        {'T', {0x01, 0x01, 0x7F, 0x01, 0x01}}, {'V', {0x1F, 0x20, 0x40, 0x20, 0x1F}},
    };
    for (const auto& g : kFont)
        if (g.ch == ch) return g.cols;
    return nullptr;
}

void Canvas::text(int x, int y, const std::string& s, Color c) {
    for (char raw : s) {
        const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
        if (const std::uint8_t* cols = glyph(ch))
            for (int cx = 0; cx < 5; ++cx)
                for (int cy = 0; cy < 7; ++cy)
                    if (cols[cx] >> cy & 1) set(x + cx, y + cy, c);
        x += 6;
    }
}

void append_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8 & 0xFF));
}

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> 8 * i & 0xFF));
}

void Canvas::write_bmp(const std::string& path) const {
    const std::uint32_t row_bytes = (static_cast<std::uint32_t>(w_) * 3 + 3) / 4 * 4;
    const std::uint32_t image_bytes = row_bytes * static_cast<std::uint32_t>(h_);

    std::string out;
    out.reserve(54 + image_bytes);
    out += "BM";
    append_u32(out, 54 + image_bytes);
    append_u32(out, 0);
    append_u32(out, 54);
    append_u32(out, 40);
    append_u32(out, static_cast<std::uint32_t>(w_));
    append_u32(out, static_cast<std::uint32_t>(h_));
    append_u16(out, 1);
    append_u16(out, 24);
    append_u32(out, 0);
    append_u32(out, image_bytes);
    append_u32(out, 2835);
    append_u32(out, 2835);
    append_u32(out, 0);
    append_u32(out, 0);

    for (int y = h_ - 1; y >= 0; --y) {  // bottom-up row order
        const std::size_t before = out.size();
        for (int x = 0; x < w_; ++x) {
            const Color& c = pixels_[static_cast<std::size_t>(y) * w_ + x];
            out.push_back(static_cast<char>(c.b));
            out.push_back(static_cast<char>(c.g));
            out.push_back(static_cast<char>(c.r));
        }
        out.append(row_bytes - (out.size() - before), '\0');
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw Error("plot: cannot open " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw Error("plot: short write to " + path);
}

std::string short_number(double v) {
    char buf[32];
    if (v >= 100.0 || v == std::floor(v))
        std::snprintf(buf, sizeof(buf), "%.0f", v);
    else
        std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

void render_metrics_bmp(const std::vector<MetricsRecord>& metrics, const std::string& path,
                        int width, int height) {
    if (metrics.empty()) throw ValidationError("plot: no metrics records to draw");
    if (width < 160 || height < 120)
        throw ValidationError("plot: canvas must be at least 160x120");

    Canvas canvas(width, height);
    const int left = 52, right = width - 40, top = 26, bottom = height - 36;
    const int n = static_cast<int>(metrics.size());

    double max_loss = 0.0;
    for (const MetricsRecord& m : metrics) max_loss = std::max(max_loss, m.train_loss);
    if (max_loss <= 0.0) max_loss = 1.0;

    const auto x_at = [&](int i) {
        return n == 1 ? (left + right) / 2 : left + (right - left) * i / (n - 1);
    };
    const auto y_loss = [&](double v) {
        return bottom - static_cast<int>(std::lround((bottom - top) * v / max_loss));
    };
    const auto y_err = [&](double pct) {
        return bottom - static_cast<int>(std::lround((bottom - top) * pct / 100.0));
    };

    for (int q = 1; q < 4; ++q) {
        const int y = top + (bottom - top) * q / 4;
        canvas.line(left, y, right, y, kGrid);
    }
    canvas.line(left, top, left, bottom, kBorder);
    canvas.line(right, top, right, bottom, kBorder);
    canvas.line(left, bottom, right, bottom, kBorder);
    canvas.line(left, top, right, top, kBorder);

    struct Series {
        Color color;
        double (*value)(const MetricsRecord&);
        bool on_loss_axis;
    };
    const Series series[] = {
        {kLoss, [](const MetricsRecord& m) { return m.train_loss; }, true},
        {kTrainErr, [](const MetricsRecord& m) { return m.train_error_pct; }, false},
        {kEvalErr, [](const MetricsRecord& m) { return m.eval_error_pct; }, false},
    };
    for (const Series& s : series) {
        int px = 0, py = 0;
        for (int i = 0; i < n; ++i) {
            const double v = s.value(metrics[static_cast<std::size_t>(i)]);
            const int x = x_at(i);
            const int y = s.on_loss_axis ? y_loss(v) : y_err(v);
            if (i > 0) canvas.line(px, py, x, y, s.color);
            canvas.dot(x, y, s.color);
            px = x;
            py = y;
        }
    }

    canvas.text(4, top - 4, short_number(max_loss), kText);
    canvas.text(4, bottom - 3, "0", kText);
    canvas.text(right + 6, top - 4, "100", kText);
    canvas.text(right + 6, bottom - 3, "0", kText);
    canvas.text(left, bottom + 8, short_number(static_cast<double>(metrics.front().epoch)),
                kText);
    const std::string last = short_number(static_cast<double>(metrics.back().epoch));
    canvas.text(right - static_cast<int>(last.size()) * 6, bottom + 8, last, kText);
    canvas.text((left + right) / 2 - 15, bottom + 18, "EPOCH", kText);

    int lx = left;
    const char* names[] = {"LOSS", "TRAIN ERR %", "EVAL ERR %"};
    for (int i = 0; i < 3; ++i) {
        canvas.line(lx, top - 15, lx + 12, top - 15, series[i].color);
        canvas.line(lx, top - 14, lx + 12, top - 14, series[i].color);
        canvas.text(lx + 16, top - 18, names[i], kText);
        lx += 16 + 6 * (static_cast<int>(std::strlen(names[i])) + 2);
    }

    canvas.write_bmp(path);
}

}  // namespace csnet
