#include "kilnwatch/features.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "kilnwatch/errors.hpp"

namespace kw::features {

using nlohmann::json;

void FeatureSet::append(FeatureSet other) {
    std::move(other.points.begin(), other.points.end(), std::back_inserter(points));
    std::move(other.lines.begin(), other.lines.end(), std::back_inserter(lines));
    std::move(other.zones.begin(), other.zones.end(), std::back_inserter(zones));
}

FeatureSet FeatureSet::select(const std::vector<std::string>& classes) const {
    if (classes.empty()) return *this;
    auto wanted = [&](const std::string& c) { return std::find(classes.begin(), classes.end(), c) != classes.end(); };
    FeatureSet out;
    for (const auto& f : points)
        if (wanted(f.feature_class)) out.points.push_back(f);
    for (const auto& f : lines)
        if (wanted(f.feature_class)) out.lines.push_back(f);
    for (const auto& f : zones)
        if (wanted(f.feature_class)) out.zones.push_back(f);
    return out;
}

namespace {

GeoPoint position(const json& c) {
    if (!c.is_array() || c.size() < 2) throw ParseError("position must be [lon, lat]");
    return GeoPoint(c.at(1).get<double>(), c.at(0).get<double>());
}

std::vector<GeoPoint> line(const json& coords, const std::string& id) {
    std::vector<GeoPoint> v;
    for (const auto& c : coords) v.push_back(position(c));
    if (v.size() < 2) throw ParseError("feature " + id + ": a LineString needs at least 2 vertices");
    return v;
}

Polygon polygon(const json& coords, const std::string& id) {
    std::vector<Polygon::Ring> rings;
    for (const auto& r : coords) rings.push_back(line(r, id));
    try {
        return Polygon(std::move(rings));
    } catch (const ValidationError& e) {
        throw ParseError("feature " + id + ": " + e.what());
    }
}

std::string feature_id(const json& f, const json& props, const std::string& cls, std::size_t ordinal) {
    auto as_text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (f.contains("id") && !f["id"].is_null()) return as_text(f["id"]);
    if (props.contains("id") && !props["id"].is_null()) return as_text(props["id"]);
    if (props.contains("name") && props["name"].is_string()) return props["name"].get<std::string>();
    return (cls.empty() ? std::string("feature") : cls) + "-" + std::to_string(ordinal);
}

}  // namespace

FeatureSet read_features(std::istream& in, const std::string& default_class) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(std::string("features GeoJSON: ") + e.what());
    }
    if (doc.value("type", std::string()) != "FeatureCollection")
        throw ParseError("features file must be a GeoJSON FeatureCollection");

    FeatureSet out;
    std::size_t ordinal = 0;
    for (const auto& f : doc.at("features")) {
        ++ordinal;
        try {
            const json props = f.contains("properties") && f["properties"].is_object() ? f["properties"] : json::object();
            const std::string cls = props.contains("feature_class") ? props["feature_class"].get<std::string>()
                                                                     : default_class;
            const std::string id = feature_id(f, props, cls, ordinal);
            const auto& g = f.at("geometry");
            const std::string type = g.at("type").get<std::string>();
            const auto& coords = g.at("coordinates");
            if (type == "Point") {
                out.points.push_back({id, cls, position(coords)});
            } else if (type == "MultiPoint") {
                for (const auto& c : coords) out.points.push_back({id, cls, position(c)});
            } else if (type == "LineString") {
                out.lines.push_back({id, cls, line(coords, id)});
            } else if (type == "MultiLineString") {
                for (const auto& part : coords) out.lines.push_back({id, cls, line(part, id)});
            } else if (type == "Polygon") {
                out.zones.push_back({id, cls, polygon(coords, id)});
            } else if (type == "MultiPolygon") {
                for (const auto& part : coords) out.zones.push_back({id, cls, polygon(part, id)});
            } else {
                throw ParseError("feature " + id + ": unsupported geometry type " + type);
            }
        } catch (const json::exception& e) {
            throw ParseError("feature #" + std::to_string(ordinal) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ParseError("feature #" + std::to_string(ordinal) + ": " + e.what());
        }
    }
    return out;
}

FeatureSet read_features_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return read_features(in, path.stem().string());
}

}  // namespace kw::features
