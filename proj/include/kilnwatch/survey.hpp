#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <unordered_set>
#include <vector>

#include "kilnwatch/geo.hpp"

namespace kw::survey {

inline constexpr int kDefaultZoom = 16;
inline constexpr int kDefaultScale = 2;
inline constexpr double kDefaultStrideDeg = 0.01;
inline constexpr std::int64_t kDefaultDailyQuota = 25000;
inline constexpr std::int64_t kChipsPerQuery = 25;

struct QueryPlan {
    std::vector<GridCell> centers;  // unique, sorted by (lat, lon)
    double stride = kDefaultStrideDeg;
    int zoom = kDefaultZoom;
    int scale = kDefaultScale;
};

struct EffortEstimate {
    std::int64_t query_count = 0;
    std::int64_t chip_count = 0;
    std::int64_t api_days = 0;
    std::int64_t keys = 1;
    std::int64_t daily_quota = kDefaultDailyQuota;

    std::int64_t chips_per_day_per_key() const noexcept { return kChipsPerQuery * daily_quota; }
};

// Region of interest: always a box; optionally a polygon the box was derived from.
struct Region {
    BoundingBox box;
    std::optional<Polygon> polygon;
};

// Every multiple of `stride` whose closed cell [c - stride/2, c + stride/2] intersects the box,
// and whose center lies in `mask` when one is given. Stride must be a positive multiple of 0.01.
QueryPlan plan_queries(const BoundingBox& region, const std::optional<Polygon>& mask = std::nullopt,
                       double stride = kDefaultStrideDeg, int zoom = kDefaultZoom, int scale = kDefaultScale);
QueryPlan plan_queries(const Region& region, const std::optional<Polygon>& extra_mask = std::nullopt,
                       double stride = kDefaultStrideDeg);

EffortEstimate estimate_effort(const QueryPlan& plan, std::int64_t keys = 1,
                               std::int64_t daily_quota = kDefaultDailyQuota);
EffortEstimate estimate_effort(std::int64_t query_count, std::int64_t keys = 1,
                               std::int64_t daily_quota = kDefaultDailyQuota);

QueryPlan dedupe_plan(const QueryPlan& plan, const std::unordered_set<GridCell, GridCellHash>& done);

// Ground coverage of one query. `size_param` is the logical image size the API is asked for;
// the returned raster has size_param * scale pixels per side.
struct TileFootprint {
    int pixels = 0;
    double m_per_px = 0.0;
    double side_m = 0.0;
};
TileFootprint tile_footprint(double lat, int zoom, int scale, int size_param);

// Queries needed per square kilometre for a given logical request size.
double queries_per_km2(double lat, int zoom, int scale, int size_param);

// Region file: `bbox south west north east`, or polygon vertices as `lat lon` lines.
// Blank lines and `#` comments are ignored.
Region read_region(std::istream& in);
Region read_region_file(const std::filesystem::path& path);
Polygon read_mask_file(const std::filesystem::path& path);

// JSON Lines, one `{"lat": 28.70, "lon": 77.10, "zoom": 16, "scale": 2}` per center.
void write_plan(std::ostream& out, const QueryPlan& plan);
QueryPlan read_plan(std::istream& in);
QueryPlan read_plan_file(const std::filesystem::path& path);

}  // namespace kw::survey
