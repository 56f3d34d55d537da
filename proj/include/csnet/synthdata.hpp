#pragma once

// Procedurally generated stand-in corpus: ten seven-segment glyphs rendered
// onto a 28x28 canvas with random shifts, contrast jitter, and pixel noise.
// Deterministic under seed, separable by a small network, and shaped exactly
// like the single-channel corpora the loaders produce.

#include "csnet/data.hpp"

#include <algorithm>
#include <cstdint>

namespace csnet::synth {

// Segment bits: 0=top, 1=upper right, 2=lower right, 3=bottom, 4=lower left,
// 5=upper left, 6=middle.
inline constexpr std::uint8_t kGlyphSegments[10] = {0x3F, 0x06, 0x5B, 0x4F, 0x66,
                                                    0x6D, 0x7D, 0x07, 0x7F, 0x6F};

inline void fill_bar(csnet::Tensor32& images, std::int64_t img, int r0, int r1, int c0, int c1,
                     int dy, int dx, float value) {
    for (int r = r0 + dy; r <= r1 + dy; ++r)
        for (int c = c0 + dx; c <= c1 + dx; ++c) images.at(img, 0, r, c) = value;
}

inline void draw_glyph(csnet::Tensor32& images, std::int64_t img, int digit, int dy, int dx,
                       float value) {
    const std::uint8_t seg = kGlyphSegments[digit];
    if (seg & 0x01) fill_bar(images, img, 4, 6, 8, 20, dy, dx, value);    // top
    if (seg & 0x02) fill_bar(images, img, 4, 15, 18, 20, dy, dx, value);  // upper right
    if (seg & 0x04) fill_bar(images, img, 13, 24, 18, 20, dy, dx, value); // lower right
    if (seg & 0x08) fill_bar(images, img, 22, 24, 8, 20, dy, dx, value);  // bottom
    if (seg & 0x10) fill_bar(images, img, 13, 24, 8, 10, dy, dx, value);  // lower left
    if (seg & 0x20) fill_bar(images, img, 4, 15, 8, 10, dy, dx, value);   // upper left
    if (seg & 0x40) fill_bar(images, img, 13, 15, 8, 20, dy, dx, value);  // middle
}

inline csnet::Dataset glyph_digits(std::int64_t n, std::uint64_t seed, csnet::Split split) {
    csnet::Dataset ds;
    ds.split = split;
    ds.class_count = 10;
    ds.images = csnet::Tensor32({n, 1, 28, 28});
    ds.labels.resize(static_cast<std::size_t>(n));

    csnet::Rng rng(seed);
    for (std::int64_t i = 0; i < n; ++i) {
        const int digit = static_cast<int>(rng.index(10));
        const int dy = static_cast<int>(rng.index(5)) - 2;
        const int dx = static_cast<int>(rng.index(5)) - 2;
        const float value = static_cast<float>(rng.uniform(0.7, 1.0));
        ds.labels[static_cast<std::size_t>(i)] = digit;
        draw_glyph(ds.images, i, digit, dy, dx, value);
        for (std::int64_t p = 0; p < 28 * 28; ++p) {
            float& px = ds.images.data()[i * 28 * 28 + p];
            px = std::clamp(px + static_cast<float>(rng.uniform(-0.05, 0.05)), 0.0f, 1.0f);
        }
    }
    return ds;
}

}  // namespace csnet::synth
