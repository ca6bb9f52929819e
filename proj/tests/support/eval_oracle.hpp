#pragma once

// Independent reference implementations of the scoring protocol.

#include <cmath>
#include <cstdlib>
#include <limits>
#include <random>
#include <vector>

#include "ccf/evaluate.hpp"

namespace ccf::testing {

/// Percent IoU by counting unit cells on an integer raster.
inline double raster_iou(const BoundingBox& a, const BoundingBox& b) {
    const int x0 = static_cast<int>(std::min(a.x, b.x)), y0 = static_cast<int>(std::min(a.y, b.y));
    const int x1 = static_cast<int>(std::max(a.x + a.w, b.x + b.w)), y1 = static_cast<int>(std::max(a.y + a.h, b.y + b.h));
    long inter = 0, uni = 0;
    auto inside = [](const BoundingBox& r, int x, int y) { return x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h; };
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const bool ia = inside(a, x, y), ib = inside(b, x, y);
            inter += ia && ib;
            uni += ia || ib;
        }
    }
    return uni == 0 ? 0.0 : 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
}

/// Enumerates every assignment of surviving detections to GT boxes, keeps
/// those in which each detection sits with a Manhattan-closest box (centres),
/// takes the lexicographically smallest, and lets each box keep its highest
/// overlap. Returns the frame accuracy under the empty-frame convention.
inline double exhaustive_frame_accuracy(const std::vector<BoundingBox>& gt, const std::vector<Detection>& det,
                                        double threshold, std::vector<double>* overlaps_out = nullptr) {
    std::vector<Detection> kept;
    for (const auto& d : det) {
        if (d.score >= threshold) kept.push_back(d);
    }
    if (gt.empty()) return kept.empty() ? 100.0 : 0.0;
    auto dist = [](const BoundingBox& a, const BoundingBox& b) {
        return std::abs((a.x + a.w / 2) - (b.x + b.w / 2)) + std::abs((a.y + a.h / 2) - (b.y + b.h / 2));
    };
    const std::size_t n = kept.size(), m = gt.size();
    std::vector<std::size_t> choice(n, 0), chosen;
    bool found = false;
    for (;;) {
        bool valid = true;
        for (std::size_t i = 0; i < n && valid; ++i) {
            for (std::size_t g = 0; g < m; ++g) {
                if (dist(kept[i].bbox, gt[g]) < dist(kept[i].bbox, gt[choice[i]])) valid = false;
            }
        }
        if (valid && (!found || choice < chosen)) {
            chosen = choice;
            found = true;
        }
        std::size_t i = 0;
        while (i < n && ++choice[i] == m) choice[i++] = 0;
        if (i == n) break;
    }
    std::vector<double> overlaps(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        // "the highest overlap is kept"
        overlaps[chosen[i]] = std::max(overlaps[chosen[i]], raster_iou(gt[chosen[i]], kept[i].bbox));
    }
    if (overlaps_out) *overlaps_out = overlaps;
    double sum = 0.0;
    for (double o : overlaps) sum += o;
    return sum / static_cast<double>(m);
}

inline BoundingBox random_box(std::mt19937_64& rng, int extent = 40, int max_size = 15) {
    std::uniform_int_distribution<int> pos(0, extent), size(1, max_size);
    return {double(pos(rng)), double(pos(rng)), double(size(rng)), double(size(rng))};
}

}  // namespace ccf::testing
