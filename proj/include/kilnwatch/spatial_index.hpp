#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "kilnwatch/geo.hpp"

namespace kw {

// Uniform geographic hash grid over a fixed point set. Radius queries enumerate the cells
// covering the query disk's lat/lon bounding box and filter by haversine distance, so the
// result is exactly the brute-force set { i : haversine(p, points[i]) <= r }.
class GridIndex {
public:
    GridIndex() = default;
    // cell_km sizes the grid; pick it near the dominant query radius.
    explicit GridIndex(std::vector<GeoPoint> points, double cell_km = 1.0);

    std::size_t size() const noexcept { return points_.size(); }
    const GeoPoint& point(std::size_t i) const { return points_[i]; }
    std::span<const GeoPoint> points() const noexcept { return points_; }

    // Indices within radius_km (inclusive), ascending.
    std::vector<std::uint32_t> query_radius(const GeoPoint& p, double radius_km) const;

    // Calls fn(index, distance_km) for every point within radius_km (inclusive), ascending index.
    template <typename Fn>
    void for_each_within(const GeoPoint& p, double radius_km, Fn&& fn) const {
        for (auto idx : candidates(p, radius_km)) {
            const double d = haversine_km(p, points_[idx]);
            if (d <= radius_km) fn(idx, d);
        }
    }

private:
    std::vector<std::uint32_t> candidates(const GeoPoint& p, double radius_km) const;
    std::int64_t key(std::int32_t row, std::int32_t col) const noexcept {
        return (static_cast<std::int64_t>(row) << 32) | static_cast<std::uint32_t>(col);
    }

    std::vector<GeoPoint> points_;
    double cell_deg_ = 0.01;
    std::int32_t columns_ = 0;
    std::vector<std::pair<std::int64_t, std::uint32_t>> cells_;  // sorted by (key, index)
};

}  // namespace kw
