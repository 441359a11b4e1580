#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <thread>
#include <vector>

#include "quadbank/render.hpp"

namespace quadbank::render::detail {

inline constexpr double kMinDepth = 1e-9;
inline constexpr std::size_t kTile = 16;

/// Twice the signed area of (a, b, p); positive when p lies to the left of a->b
/// in a y-up frame.
inline double edge(double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

struct Rect {
    long x0, y0, x1, y1;  // inclusive pixel range; empty when x0 > x1 or y0 > y1
};

/// Pixels whose centres fall in [lo, hi] after widening by `margin`.
inline Rect pixel_range(double xlo, double ylo, double xhi, double yhi, double margin, std::size_t w, std::size_t h) {
    Rect r;
    r.x0 = std::max(0L, static_cast<long>(std::ceil(xlo - margin - 0.5)));
    r.y0 = std::max(0L, static_cast<long>(std::ceil(ylo - margin - 0.5)));
    r.x1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::floor(xhi + margin - 0.5)));
    r.y1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::floor(yhi + margin - 0.5)));
    return r;
}

/// Runs fn(tile_x0, tile_y0, tile_x1, tile_y1) (exclusive ends) over every
/// tile. Tiles write disjoint pixels, so the schedule does not affect results.
template <class Fn>
void for_each_tile(std::size_t w, std::size_t h, unsigned jobs, Fn fn) {
    const std::size_t tx = (w + kTile - 1) / kTile, ty = (h + kTile - 1) / kTile;
    const std::size_t count = tx * ty;
    auto run = [&](std::size_t t) {
        const std::size_t x0 = (t % tx) * kTile, y0 = (t / tx) * kTile;
        fn(x0, y0, std::min(w, x0 + kTile), std::min(h, y0 + kTile));
    };
    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, count));
    if (jobs <= 1) {
        for (std::size_t t = 0; t < count; ++t) run(t);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) {
        pool.emplace_back([&] {
            for (std::size_t t = next++; t < count; t = next++) run(t);
        });
    }
}

}  // namespace quadbank::render::detail
