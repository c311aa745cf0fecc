#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace kw {

// Mean Earth radius for great-circle distances.
inline constexpr double kEarthRadiusKm = 6371.0088;
// Sphere radius of the Web Mercator projection.
inline constexpr double kMercatorRadiusM = 6378137.0;
// Meters per degree of latitude used by the local equirectangular conversions.
inline constexpr double kMetersPerDegree = 111194.9;

inline constexpr int kMinZoom = 0;
inline constexpr int kMaxZoom = 21;

class GeoPoint {
public:
    // Throws ValidationError unless lat in [-90, 90], lon in [-180, 180) and both finite.
    GeoPoint(double lat, double lon);

    double lat() const noexcept { return lat_; }
    double lon() const noexcept { return lon_; }

    friend bool operator==(const GeoPoint&, const GeoPoint&) = default;

private:
    double lat_;
    double lon_;
};

class BoundingBox {
public:
    // south < north, west < east; antimeridian-crossing boxes are rejected.
    BoundingBox(double south, double west, double north, double east);

    double south() const noexcept { return south_; }
    double west() const noexcept { return west_; }
    double north() const noexcept { return north_; }
    double east() const noexcept { return east_; }

    bool contains(const GeoPoint& p) const noexcept {
        return p.lat() >= south_ && p.lat() <= north_ && p.lon() >= west_ && p.lon() <= east_;
    }

private:
    double south_, west_, north_, east_;
};

// A 0.01 degree cell, stored as integer hundredths so equality and hashing are exact.
class GridCell {
public:
    GridCell() = default;
    static GridCell from_hundredths(std::int32_t lat_c, std::int32_t lon_c);

    std::int32_t lat_hundredths() const noexcept { return lat_c_; }
    std::int32_t lon_hundredths() const noexcept { return lon_c_; }
    double lat2() const noexcept { return lat_c_ / 100.0; }
    double lon2() const noexcept { return lon_c_ / 100.0; }
    GeoPoint center() const { return GeoPoint(lat2(), lon2()); }

    // "28.70_77.10"
    std::string key() const;

    friend bool operator==(const GridCell&, const GridCell&) = default;
    friend auto operator<=>(const GridCell&, const GridCell&) = default;

private:
    std::int32_t lat_c_ = 0;
    std::int32_t lon_c_ = 0;
};

struct GridCellHash {
    std::size_t operator()(const GridCell& c) const noexcept {
        auto packed = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.lat_hundredths())) << 32) |
                      static_cast<std::uint32_t>(c.lon_hundredths());
        return std::hash<std::uint64_t>{}(packed);
    }
};

// Formats a coordinate with exactly two decimals ("28.70").
std::string format_2dp(double value);

double haversine_km(const GeoPoint& a, const GeoPoint& b);

// cos(lat) * 2*pi*R / (256 * 2^zoom * scale); zoom in [0, 21], scale in {1, 2}.
double ground_resolution_m_per_px(double lat, int zoom, int scale);

// Round half away from zero to two decimals on each axis.
GridCell snap_to_centigrid(const GeoPoint& p);

// A polygon as one or more rings (outer and holes alike), evaluated with the even-odd rule.
// Rings are stored closed: first vertex == last vertex.
class Polygon {
public:
    using Ring = std::vector<GeoPoint>;

    Polygon() = default;
    // Each ring needs >= 4 vertices with first == last; throws ValidationError on an open ring.
    explicit Polygon(std::vector<Ring> rings);
    // Closes the ring if the caller left it open (region/mask files).
    static Polygon from_open_ring(Ring ring);

    const std::vector<Ring>& rings() const noexcept { return rings_; }
    bool empty() const noexcept { return rings_.empty(); }

    double min_lat() const noexcept { return min_lat_; }
    double max_lat() const noexcept { return max_lat_; }
    double min_lon() const noexcept { return min_lon_; }
    double max_lon() const noexcept { return max_lon_; }

    // Even-odd containment; points on an edge count as inside.
    bool contains(const GeoPoint& p) const noexcept;

private:
    std::vector<Ring> rings_;
    double min_lat_ = 0, max_lat_ = 0, min_lon_ = 0, max_lon_ = 0;
};

}  // namespace kw
