#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "seqground/errors.hpp"

namespace seqground {

/// Axis-aligned box in image coordinates, x1 < x2 and y1 < y2.
struct Box {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    bool valid() const { return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x1 < x2 && y1 < y2; }
    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double center_x() const { return 0.5 * (x1 + x2); }
    double center_y() const { return 0.5 * (y1 + y2); }

    Box clamped(double image_w, double image_h) const {
        return {std::clamp(x1, 0.0, image_w), std::clamp(y1, 0.0, image_h), std::clamp(x2, 0.0, image_w),
                std::clamp(y2, 0.0, image_h)};
    }

    std::array<double, 4> to_array() const { return {x1, y1, x2, y2}; }

    bool operator==(const Box&) const = default;
};

inline void require_valid(const Box& b) {
    if (!b.valid()) throw InputError("degenerate box");
}

inline double intersection_area(const Box& a, const Box& b) {
    double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

inline double iou(const Box& a, const Box& b) {
    require_valid(a);
    require_valid(b);
    double inter = intersection_area(a, b);
    if (inter == 0.0) return 0.0;
    // Summing the two areas in a fixed order keeps iou(a, b) == iou(b, a) bitwise.
    double lo = std::min(a.area(), b.area()), hi = std::max(a.area(), b.area());
    return inter / (lo + hi - inter);
}

/// Area of a union of rectangles, overlaps counted once. Coordinate
/// compression on x, then per-slab merging of the covered y-intervals.
inline double union_area(std::span<const Box> boxes) {
    for (const auto& b : boxes) require_valid(b);
    if (boxes.empty()) return 0.0;
    std::vector<double> xs;
    xs.reserve(2 * boxes.size());
    for (const auto& b : boxes) {
        xs.push_back(b.x1);
        xs.push_back(b.x2);
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());

    std::vector<std::pair<double, double>> spans;
    double area = 0.0;
    for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
        double lo = xs[k], hi = xs[k + 1];
        spans.clear();
        for (const auto& b : boxes)
            if (b.x1 <= lo && b.x2 >= hi) spans.emplace_back(b.y1, b.y2);
        if (spans.empty()) continue;
        std::sort(spans.begin(), spans.end());
        double covered = 0.0, start = spans[0].first, end = spans[0].second;
        for (std::size_t s = 1; s < spans.size(); ++s) {
            if (spans[s].first > end) {
                covered += end - start;
                start = spans[s].first;
                end = spans[s].second;
            } else {
                end = std::max(end, spans[s].second);
            }
        }
        covered += end - start;
        area += covered * (hi - lo);
    }
    return area;
}

struct RegionIou {
    double value = 0.0;
    // Set when either region had no boxes; value is then 0.
    bool empty_region = false;
};

/// IoU of two union-of-rectangles regions. Single-box regions reduce to iou().
inline RegionIou region_iou(std::span<const Box> pred, std::span<const Box> gt) {
    if (pred.empty() || gt.empty()) return {0.0, true};
    if (pred.size() == 1 && gt.size() == 1) return {iou(pred[0], gt[0]), false};
    double a = union_area(pred), b = union_area(gt);
    std::vector<Box> both(pred.begin(), pred.end());
    both.insert(both.end(), gt.begin(), gt.end());
    double u = union_area(both);
    double inter = std::max(0.0, a + b - u);
    return {u > 0.0 ? inter / u : 0.0, false};
}

/// Greedy non-maximum suppression. Visits boxes by descending score (ties:
/// lower index first), keeps a box unless its IoU with an already kept box
/// exceeds iou_threshold. Returns kept indices in visiting order.
inline std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores, double iou_threshold) {
    if (boxes.size() != scores.size()) throw InputError("nms: one score per box is required");
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<std::size_t> kept;
    for (auto i : order) {
        bool suppressed = false;
        for (auto k : kept)
            if (iou(boxes[i], boxes[k]) > iou_threshold) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(i);
    }
    return kept;
}

/// The 5-vector (x1/W, y1/H, x2/W, y2/H, area/(W*H)) used as box location features.
inline std::array<double, 5> location_features(const Box& b, double image_w, double image_h) {
    return {b.x1 / image_w, b.y1 / image_h, b.x2 / image_w, b.y2 / image_h, b.area() / (image_w * image_h)};
}

/// Left-to-right ordering by center x; ties by center y, then by index.
inline std::vector<std::size_t> spatial_order(std::span<const Box> boxes) {
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double ax = boxes[a].center_x(), bx = boxes[b].center_x();
        if (ax != bx) return ax < bx;
        double ay = boxes[a].center_y(), by = boxes[b].center_y();
        if (ay != by) return ay < by;
        return a < b;
    });
    return order;
}

}  // namespace seqground
