#include "kilnwatch/geo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "kilnwatch/errors.hpp"

namespace kw {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

// Two-decimal half-away-from-zero rounding. Values within 1e-9 hundredths of a tie are
// treated as ties so decimal literals like 23.455 (stored as 23.45499...) round up.
std::int32_t round_hundredths(double deg) {
    const double scaled = std::fabs(deg) * 100.0;
    double whole = std::floor(scaled);
    if (scaled - whole >= 0.5 - 1e-9) whole += 1.0;
    return static_cast<std::int32_t>(std::signbit(deg) ? -whole : whole);
}

bool on_segment(const GeoPoint& p, const GeoPoint& a, const GeoPoint& b) {
    const double cross = (b.lon() - a.lon()) * (p.lat() - a.lat()) - (b.lat() - a.lat()) * (p.lon() - a.lon());
    const double scale = std::max({std::fabs(b.lon() - a.lon()), std::fabs(b.lat() - a.lat()), 1e-300});
    if (std::fabs(cross) > 1e-12 * scale) return false;
    return p.lat() >= std::min(a.lat(), b.lat()) && p.lat() <= std::max(a.lat(), b.lat()) &&
           p.lon() >= std::min(a.lon(), b.lon()) && p.lon() <= std::max(a.lon(), b.lon());
}

}  // namespace

GeoPoint::GeoPoint(double lat, double lon) : lat_(lat), lon_(lon) {
    if (!std::isfinite(lat) || !std::isfinite(lon)) throw ValidationError("coordinate is not finite");
    if (lat < -90.0 || lat > 90.0) throw ValidationError("latitude out of range [-90, 90]: " + std::to_string(lat));
    if (lon < -180.0 || lon >= 180.0) throw ValidationError("longitude out of range [-180, 180): " + std::to_string(lon));
}

BoundingBox::BoundingBox(double south, double west, double north, double east)
    : south_(south), west_(west), north_(north), east_(east) {
    for (double v : {south, west, north, east})
        if (!std::isfinite(v)) throw ValidationError("bounding box coordinate is not finite");
    if (south < -90.0 || north > 90.0) throw ValidationError("bounding box latitude out of range");
    if (west < -180.0 || east > 180.0) throw ValidationError("bounding box longitude out of range");
    if (!(south < north)) throw ValidationError("bounding box needs south < north");
    if (!(west < east)) throw ValidationError("bounding box needs west < east (antimeridian crossing unsupported)");
}

GridCell GridCell::from_hundredths(std::int32_t lat_c, std::int32_t lon_c) {
    if (lat_c < -9000 || lat_c > 9000 || lon_c < -18000 || lon_c >= 18000)
        throw ValidationError("grid cell out of range");
    GridCell c;
    c.lat_c_ = lat_c;
    c.lon_c_ = lon_c;
    return c;
}

std::string GridCell::key() const { return format_2dp(lat2()) + "_" + format_2dp(lon2()); }

std::string format_2dp(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", value);
    // "-0.00" would make keys for the zero row ambiguous.
    if (std::string_view(buf) == "-0.00") return "0.00";
    return buf;
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
    const double phi1 = a.lat() * kDegToRad;
    const double phi2 = b.lat() * kDegToRad;
    const double dphi = phi2 - phi1;
    const double dlambda = (b.lon() - a.lon()) * kDegToRad;
    const double s1 = std::sin(dphi / 2.0);
    const double s2 = std::sin(dlambda / 2.0);
    const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

double ground_resolution_m_per_px(double lat, int zoom, int scale) {
    if (zoom < kMinZoom || zoom > kMaxZoom) throw ValidationError("zoom must be in [0, 21]");
    if (scale != 1 && scale != 2) throw ValidationError("scale must be 1 or 2");
    if (!std::isfinite(lat) || lat < -90.0 || lat > 90.0) throw ValidationError("latitude out of range");
    return std::cos(lat * kDegToRad) * 2.0 * std::numbers::pi * kMercatorRadiusM /
           (256.0 * std::ldexp(1.0, zoom) * scale);
}

GridCell snap_to_centigrid(const GeoPoint& p) {
    std::int32_t lon_c = round_hundredths(p.lon());
    // 179.996 rounds to 180.00, which wraps to the -180.00 cell.
    if (lon_c >= 18000) lon_c -= 36000;
    return GridCell::from_hundredths(round_hundredths(p.lat()), lon_c);
}

Polygon::Polygon(std::vector<Ring> rings) : rings_(std::move(rings)) {
    bool first = true;
    for (const auto& ring : rings_) {
        if (ring.size() < 4) throw ValidationError("polygon ring needs at least 4 vertices (closed)");
        if (!(ring.front() == ring.back())) throw ValidationError("polygon ring is not closed");
        for (const auto& v : ring) {
            if (first) {
                min_lat_ = max_lat_ = v.lat();
                min_lon_ = max_lon_ = v.lon();
                first = false;
            }
            min_lat_ = std::min(min_lat_, v.lat());
            max_lat_ = std::max(max_lat_, v.lat());
            min_lon_ = std::min(min_lon_, v.lon());
            max_lon_ = std::max(max_lon_, v.lon());
        }
    }
}

Polygon Polygon::from_open_ring(Ring ring) {
    if (!ring.empty() && !(ring.front() == ring.back())) ring.push_back(ring.front());
    return Polygon({std::move(ring)});
}

bool Polygon::contains(const GeoPoint& p) const noexcept {
    if (rings_.empty()) return false;
    if (p.lat() < min_lat_ || p.lat() > max_lat_ || p.lon() < min_lon_ || p.lon() > max_lon_) return false;
    bool inside = false;
    for (const auto& ring : rings_) {
        for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
            const GeoPoint& a = ring[i];
            const GeoPoint& b = ring[j];
            if (on_segment(p, a, b)) return true;
            if ((a.lat() > p.lat()) != (b.lat() > p.lat())) {
                const double x = a.lon() + (p.lat() - a.lat()) * (b.lon() - a.lon()) / (b.lat() - a.lat());
                if (p.lon() < x) inside = !inside;
            }
        }
    }
    return inside;
}

}  // namespace kw
