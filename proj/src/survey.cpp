#include "kilnwatch/survey.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "kilnwatch/errors.hpp"

namespace kw::survey {

namespace {

std::int32_t stride_hundredths(double stride) {
    if (!(stride > 0.0) || !std::isfinite(stride)) throw ValidationError("stride must be positive");
    const double scaled = stride * 100.0;
    const double rounded = std::round(scaled);
    if (rounded < 1.0 || std::fabs(scaled - rounded) > 1e-6)
        throw ValidationError("stride must be a multiple of 0.01 degrees");
    return static_cast<std::int32_t>(rounded);
}

// Multiples m of `step` with m*step in [lo, hi] (hundredths), tolerant to 1e-9 rounding.
std::pair<std::int64_t, std::int64_t> multiple_range(double lo, double hi, std::int32_t step) {
    return {static_cast<std::int64_t>(std::ceil(lo / step - 1e-9)),
            static_cast<std::int64_t>(std::floor(hi / step + 1e-9))};
}

std::string strip_comment(std::string line) {
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    line.erase(line.begin(), std::find_if(line.begin(), line.end(), not_space));
    line.erase(std::find_if(line.rbegin(), line.rend(), not_space).base(), line.end());
    return line;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

}  // namespace

QueryPlan plan_queries(const BoundingBox& region, const std::optional<Polygon>& mask, double stride, int zoom,
                       int scale) {
    (void)ground_resolution_m_per_px(0.0, zoom, scale);  // validates zoom/scale
    const std::int32_t step = stride_hundredths(stride);
    const double half = step / 2.0;

    QueryPlan plan;
    plan.stride = step / 100.0;
    plan.zoom = zoom;
    plan.scale = scale;

    auto [r_lo, r_hi] = multiple_range(region.south() * 100.0 - half, region.north() * 100.0 + half, step);
    auto [c_lo, c_hi] = multiple_range(region.west() * 100.0 - half, region.east() * 100.0 + half, step);
    for (std::int64_t r = r_lo; r <= r_hi; ++r) {
        const std::int64_t lat_c = r * step;
        if (lat_c < -9000 || lat_c > 9000) continue;
        for (std::int64_t c = c_lo; c <= c_hi; ++c) {
            const std::int64_t lon_c = c * step;
            if (lon_c < -18000 || lon_c >= 18000) continue;
            auto cell = GridCell::from_hundredths(static_cast<std::int32_t>(lat_c), static_cast<std::int32_t>(lon_c));
            if (mask && !mask->contains(cell.center())) continue;
            plan.centers.push_back(cell);
        }
    }
    // Row-major generation is already (lat, lon) ordered and duplicate-free.
    return plan;
}

QueryPlan plan_queries(const Region& region, const std::optional<Polygon>& extra_mask, double stride) {
    QueryPlan plan = plan_queries(region.box, region.polygon, stride);
    if (extra_mask) {
        std::erase_if(plan.centers, [&](const GridCell& c) { return !extra_mask->contains(c.center()); });
    }
    return plan;
}

EffortEstimate estimate_effort(std::int64_t query_count, std::int64_t keys, std::int64_t daily_quota) {
    if (keys < 1) throw ValidationError("keys must be >= 1");
    if (daily_quota < 1) throw ValidationError("daily quota must be >= 1");
    if (query_count < 0) throw ValidationError("query count must be >= 0");
    EffortEstimate e;
    e.query_count = query_count;
    e.chip_count = kChipsPerQuery * query_count;
    e.keys = keys;
    e.daily_quota = daily_quota;
    const std::int64_t per_day = keys * daily_quota;
    e.api_days = (query_count + per_day - 1) / per_day;
    return e;
}

EffortEstimate estimate_effort(const QueryPlan& plan, std::int64_t keys, std::int64_t daily_quota) {
    return estimate_effort(static_cast<std::int64_t>(plan.centers.size()), keys, daily_quota);
}

QueryPlan dedupe_plan(const QueryPlan& plan, const std::unordered_set<GridCell, GridCellHash>& done) {
    QueryPlan out = plan;
    std::erase_if(out.centers, [&](const GridCell& c) { return done.contains(c); });
    return out;
}

TileFootprint tile_footprint(double lat, int zoom, int scale, int size_param) {
    if (size_param < 1) throw ValidationError("size must be positive");
    TileFootprint f;
    f.pixels = size_param * scale;
    f.m_per_px = ground_resolution_m_per_px(lat, zoom, scale);
    f.side_m = f.pixels * f.m_per_px;
    return f;
}

double queries_per_km2(double lat, int zoom, int scale, int size_param) {
    const double side_km = tile_footprint(lat, zoom, scale, size_param).side_m / 1000.0;
    return 1.0 / (side_km * side_km);
}

Region read_region(std::istream& in) {
    std::string raw;
    std::size_t line_no = 0;
    std::vector<GeoPoint> vertices;
    std::optional<BoundingBox> box;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = strip_comment(raw);
        if (line.empty()) continue;
        std::istringstream ss(line);
        if (line.rfind("bbox", 0) == 0) {
            std::string tag;
            double s, w, n, e;
            if (!(ss >> tag >> s >> w >> n >> e)) throw ParseError("expected `bbox south west north east`", line_no);
            if (box || !vertices.empty()) throw ParseError("region file mixes bbox and polygon entries", line_no);
            try {
                box.emplace(s, w, n, e);
            } catch (const ValidationError& err) {
                throw ParseError(err.what(), line_no);
            }
            continue;
        }
        if (box) throw ParseError("region file mixes bbox and polygon entries", line_no);
        double lat, lon;
        std::string rest;
        if (!(ss >> lat >> lon) || (ss >> rest)) throw ParseError("expected `lat lon`", line_no);
        try {
            vertices.emplace_back(lat, lon);
        } catch (const ValidationError& err) {
            throw ParseError(err.what(), line_no);
        }
    }
    if (box) return Region{*box, std::nullopt};
    if (vertices.size() < 3) throw ParseError("polygon region needs at least 3 vertices");
    Polygon poly = Polygon::from_open_ring(std::move(vertices));
    if (!(poly.min_lat() < poly.max_lat()) || !(poly.min_lon() < poly.max_lon()))
        throw ParseError("polygon region is degenerate");
    return Region{BoundingBox(poly.min_lat(), poly.min_lon(), poly.max_lat(), poly.max_lon()), std::move(poly)};
}

Region read_region_file(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_region(in);
}

Polygon read_mask_file(const std::filesystem::path& path) {
    Region r = read_region_file(path);
    if (!r.polygon) {
        const auto& b = r.box;
        return Polygon::from_open_ring(
            {GeoPoint(b.south(), b.west()), GeoPoint(b.south(), std::min(b.east(), std::nextafter(180.0, 0.0))),
             GeoPoint(b.north(), std::min(b.east(), std::nextafter(180.0, 0.0))), GeoPoint(b.north(), b.west())});
    }
    return *r.polygon;
}

void write_plan(std::ostream& out, const QueryPlan& plan) {
    for (const auto& c : plan.centers) {
        out << "{\"lat\": " << format_2dp(c.lat2()) << ", \"lon\": " << format_2dp(c.lon2())
            << ", \"zoom\": " << plan.zoom << ", \"scale\": " << plan.scale << "}\n";
    }
}

QueryPlan read_plan(std::istream& in) {
    QueryPlan plan;
    std::string line;
    std::size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (strip_comment(line).empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            const int zoom = j.value("zoom", kDefaultZoom);
            const int scale = j.value("scale", kDefaultScale);
            if (first) {
                plan.zoom = zoom;
                plan.scale = scale;
                first = false;
            } else if (zoom != plan.zoom || scale != plan.scale) {
                throw ParseError("mixed zoom/scale within one plan", line_no);
            }
            plan.centers.push_back(snap_to_centigrid(GeoPoint(j.at("lat").get<double>(), j.at("lon").get<double>())));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad plan row: ") + e.what(), line_no);
        } catch (const ValidationError& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    std::sort(plan.centers.begin(), plan.centers.end());
    plan.centers.erase(std::unique(plan.centers.begin(), plan.centers.end()), plan.centers.end());
    return plan;
}

QueryPlan read_plan_file(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_plan(in);
}

}  // namespace kw::survey
