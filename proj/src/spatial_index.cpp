#include "kilnwatch/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kilnwatch/errors.hpp"

namespace kw {

namespace {
constexpr double kRadToDeg = 180.0 / std::numbers::pi;
constexpr double kDegToRad = std::numbers::pi / 180.0;
// Above this many cells per query the scan over all points is cheaper.
constexpr std::int64_t kMaxCellsPerQuery = 1 << 16;
}  // namespace

GridIndex::GridIndex(std::vector<GeoPoint> points, double cell_km) : points_(std::move(points)) {
    if (!(cell_km > 0.0) || !std::isfinite(cell_km)) throw ValidationError("grid cell size must be positive");
    cell_deg_ = std::min(cell_km / kEarthRadiusKm * kRadToDeg, 90.0);
    columns_ = static_cast<std::int32_t>(std::ceil(360.0 / cell_deg_));
    cells_.reserve(points_.size());
    for (std::uint32_t i = 0; i < points_.size(); ++i) {
        const auto row = static_cast<std::int32_t>(std::floor(points_[i].lat() / cell_deg_));
        auto col = static_cast<std::int32_t>(std::floor((points_[i].lon() + 180.0) / cell_deg_));
        col = std::clamp(col, 0, columns_ - 1);
        cells_.emplace_back(key(row, col), i);
    }
    std::sort(cells_.begin(), cells_.end());
}

std::vector<std::uint32_t> GridIndex::candidates(const GeoPoint& p, double radius_km) const {
    std::vector<std::uint32_t> out;
    if (points_.empty() || radius_km < 0.0) return out;

    const double ang = radius_km / kEarthRadiusKm;
    const double dlat = ang * kRadToDeg * (1.0 + 1e-9) + 1e-12;
    const double lat_lo = std::max(-90.0, p.lat() - dlat);
    const double lat_hi = std::min(90.0, p.lat() + dlat);

    bool all_lon = ang >= std::numbers::pi / 2;
    double dlon = 180.0;
    if (!all_lon) {
        const double c = std::cos(std::max(std::fabs(lat_lo), std::fabs(lat_hi)) * kDegToRad);
        const double s = std::sin(ang);
        if (std::fabs(p.lat()) + dlat >= 90.0 || s >= c) {
            all_lon = true;
        } else {
            // Widest longitude span of the disk is at the latitude closer to the pole; bound it there.
            dlon = std::asin(s / c) * kRadToDeg * (1.0 + 1e-9) + 1e-12;
            if (dlon >= 180.0) all_lon = true;
        }
    }

    const auto row_lo = static_cast<std::int32_t>(std::floor(lat_lo / cell_deg_));
    const auto row_hi = static_cast<std::int32_t>(std::floor(lat_hi / cell_deg_));

    // Column ranges in [0, columns_), split at the antimeridian.
    std::vector<std::pair<std::int32_t, std::int32_t>> col_ranges;
    if (all_lon) {
        col_ranges.emplace_back(0, columns_ - 1);
    } else {
        const double x_lo = p.lon() + 180.0 - dlon;
        const double x_hi = p.lon() + 180.0 + dlon;
        auto c_lo = static_cast<std::int32_t>(std::floor(x_lo / cell_deg_));
        auto c_hi = static_cast<std::int32_t>(std::floor(x_hi / cell_deg_));
        if (c_hi - c_lo + 1 >= columns_) {
            col_ranges.emplace_back(0, columns_ - 1);
        } else if (c_lo < 0) {
            // 360 is not a whole number of cells, so wrapped edges get their own column.
            const auto w = std::min(static_cast<std::int32_t>(std::floor((x_lo + 360.0) / cell_deg_)), columns_ - 1);
            col_ranges.emplace_back(0, c_hi);
            if (w > c_hi) col_ranges.emplace_back(w, columns_ - 1);
            else col_ranges.back().second = columns_ - 1;
        } else if (c_hi >= columns_) {
            const auto w = static_cast<std::int32_t>(std::floor((x_hi - 360.0) / cell_deg_));
            col_ranges.emplace_back(c_lo, columns_ - 1);
            if (w < c_lo) col_ranges.emplace_back(0, w);
            else col_ranges.front().first = 0;
        } else {
            col_ranges.emplace_back(c_lo, c_hi);
        }
    }

    std::int64_t cell_count = 0;
    for (auto [lo, hi] : col_ranges) cell_count += static_cast<std::int64_t>(hi - lo + 1);
    cell_count *= static_cast<std::int64_t>(row_hi - row_lo + 1);

    if (cell_count > kMaxCellsPerQuery || cell_count > static_cast<std::int64_t>(points_.size())) {
        // Scanning every point is exact and cheaper than visiting that many cells.
        out.resize(points_.size());
        for (std::uint32_t i = 0; i < out.size(); ++i) out[i] = i;
        return out;
    }

    for (std::int32_t row = row_lo; row <= row_hi; ++row) {
        for (auto [lo, hi] : col_ranges) {
            // Columns in a row are contiguous keys, so one lower_bound per range suffices.
            auto it = std::lower_bound(cells_.begin(), cells_.end(), std::pair{key(row, lo), std::uint32_t{0}});
            const auto end_key = key(row, hi);
            for (; it != cells_.end() && it->first <= end_key; ++it) out.push_back(it->second);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::uint32_t> GridIndex::query_radius(const GeoPoint& p, double radius_km) const {
    std::vector<std::uint32_t> out;
    for_each_within(p, radius_km, [&](std::uint32_t i, double) { out.push_back(i); });
    return out;
}

}  // namespace kw
