#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "kilnwatch/geo.hpp"

namespace kw::features {

struct PointFeature {
    std::string id;
    std::string feature_class;
    GeoPoint location{0.0, 0.0};
};

// One polyline. A MultiLineString becomes several parts sharing an id.
struct LineFeature {
    std::string id;
    std::string feature_class;
    std::vector<GeoPoint> vertices;
};

// One polygon; a MultiPolygon becomes several zones sharing an id.
struct ZoneFeature {
    std::string id;
    std::string feature_class;
    Polygon polygon;
};

struct FeatureSet {
    std::vector<PointFeature> points;
    std::vector<LineFeature> lines;
    std::vector<ZoneFeature> zones;

    bool empty() const noexcept { return points.empty() && lines.empty() && zones.empty(); }
    std::size_t size() const noexcept { return points.size() + lines.size() + zones.size(); }
    void append(FeatureSet other);
    // Subset whose feature_class is one of `classes`; an empty list selects everything.
    FeatureSet select(const std::vector<std::string>& classes) const;
};

// GeoJSON FeatureCollection. feature_class comes from the `feature_class` property, falling
// back to `default_class`. Ids come from the feature `id`, then properties `id` / `name`, then
// "<class>-<ordinal>". Polylines need >= 2 vertices; polygon rings must be closed.
FeatureSet read_features(std::istream& in, const std::string& default_class = "");
// default_class is the file stem.
FeatureSet read_features_file(const std::filesystem::path& path);

}  // namespace kw::features
