#pragma once

// Published result tables and constructed geometry fixtures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kilnwatch/compliance.hpp"
#include "kilnwatch/detection.hpp"
#include "kilnwatch/features.hpp"
#include "kilnwatch/geo.hpp"
#include "support.hpp"

namespace kwtest {

struct PrfRow {
    const char* group;
    double p, r, f1;
};

// Label-budget sweep, in table order.
inline const std::vector<PrfRow>& pretrain_rows() {
    static const std::vector<PrfRow> rows = {
        {"none", .50, .35, .41}, {"none", .00, .00, .00}, {"none", .38, .11, .17}, {"none", .26, .28, .27},
        {"none", .38, .23, .28}, {"none", .80, .47, .59}, {"none", .59, .30, .40}, {"none", .54, .39, .45},
        {"none", .54, .42, .47}, {"none", .65, .39, .49}, {"none", .75, .43, .55},
        {"imagenet", .87, .66, .75}, {"imagenet", .64, .35, .46}, {"imagenet", .77, .80, .78},
        {"imagenet", .87, .78, .82}, {"imagenet", .85, .89, .87}, {"imagenet", .90, .88, .89},
        {"imagenet", .88, .66, .76}, {"imagenet", .90, .81, .85}, {"imagenet", .92, .84, .88},
        {"imagenet", .87, .89, .88}, {"imagenet", .94, .85, .89},
        {"jigsaw", .55, .72, .63}, {"jigsaw", .80, .69, .74}, {"jigsaw", .84, .75, .79},
        {"jigsaw", .91, .77, .83}, {"jigsaw", .89, .82, .86}, {"jigsaw", .85, .90, .88},
        {"simclr", .60, .43, .50}, {"simclr", .72, .41, .52}, {"simclr", .70, .65, .61},
        {"simclr", .86, .64, .74}, {"simclr", .86, .71, .78}, {"simclr", .81, .88, .84},
    };
    return rows;
}

inline std::vector<kw::detection::FoldMetrics> vanilla_folds() {
    return {{0.86, 0.80, 0.83}, {0.93, 0.64, 0.76}, {0.86, 0.75, 0.80}, {0.89, 0.67, 0.76}};
}

inline std::vector<kw::detection::FoldMetrics> imagenet_folds() {
    return {{0.92, 0.95, 0.94}, {0.94, 0.94, 0.94}, {0.94, 0.92, 0.93}, {0.96, 0.90, 0.93}};
}

inline std::vector<kw::detection::DistrictRow> district_rows() {
    return {
        {"PB", "Amritsar", 210, 30},       {"PB", "Ludhiana", 321, 140},   {"PB", "Jalandhar", 98, 70},
        {"PB", "Fazilka", 171, 68},        {"PB", "Gurdaspur", 191, 48},   {"PB", "Hoshiarpur", 169, 139},
        {"PB", "Pathankot", 95, 23},       {"HR", "Jhajjar", 521, 26},     {"HR", "Sonipat", 259, 66},
        {"HR", "Jind", 156, 30},           {"HR", "Nuh", 176, 25},         {"HR", "Karnal", 165, 56},
        {"HR", "Rewari", 130, 15},         {"HR", "Yamuna Nagar", 139, 12}, {"UP", "Kanpur", 240, 60},
        {"UP", "Lucknow", 590, 95},        {"UP", "Baghpat", 577, 115},    {"UP", "Jaunpur", 416, 25},
        {"UP", "Kaushambi", 178, 30},      {"UP", "Kannauj", 144, 36},     {"BR", "Patna", 283, 145},
        {"BR", "Muzaffarpur", 394, 38},    {"BR", "Madhubani", 382, 28},   {"BR", "Darbhanga", 305, 31},
        {"BR", "Saharsa", 132, 41},        {"WB", "East Medinipur", 288, 104}, {"WB", "Malda", 388, 24},
        {"WB", "Birbhum", 168, 108},
    };
}

// 762 kilns: 684 in tight clusters of 2-4 (members within 0.6 km of each other) and 78 alone.
// Cluster sites sit on a 0.1 degree lattice so nothing links across sites.
inline std::vector<kw::compliance::Kiln> spacing_fixture(std::uint64_t seed = 2023) {
    Rng rng(seed);
    std::vector<kw::compliance::Kiln> out;
    int site = 0;
    auto site_center = [&](int s) { return kw::GeoPoint(24.0 + 0.1 * (s / 40), 80.0 + 0.1 * (s % 40)); };
    std::size_t clustered = 0;
    while (clustered < 684) {
        std::size_t size = static_cast<std::size_t>(uniform_int(rng, 2, 4));
        if (684 - clustered - size == 1) size += 1;
        size = std::min(size, 684 - clustered);
        const auto c = site_center(site++);
        for (std::size_t m = 0; m < size; ++m)
            out.push_back({"c" + std::to_string(out.size()), scatter(rng, c, 0.3)});
        clustered += size;
    }
    for (int i = 0; i < 78; ++i) out.push_back({"s" + std::to_string(i), scatter(rng, site_center(site++), 0.3)});
    return out;
}

// Star-shaped (generally concave) polygon around c with radii in [r_lo, r_hi] km.
inline kw::Polygon star_polygon(Rng& rng, const kw::GeoPoint& c, int vertices, double r_lo, double r_hi) {
    kw::Polygon::Ring ring;
    for (int i = 0; i < vertices; ++i)
        ring.push_back(destination(c, uniform(rng, r_lo, r_hi), 360.0 * i / vertices));
    ring.push_back(ring.front());
    return kw::Polygon({ring});
}

struct ComplianceInstance {
    std::vector<kw::compliance::Kiln> kilns;
    kw::features::FeatureSet features;
};

// Kilns, point features, polylines and zones scattered over a ~20 km patch.
inline ComplianceInstance random_instance(Rng& rng, std::size_t n_kilns) {
    ComplianceInstance inst;
    const kw::GeoPoint c(uniform(rng, 22.0, 31.0), uniform(rng, 75.0, 88.0));
    const double spread = uniform(rng, 2.0, 20.0);
    for (std::size_t i = 0; i < n_kilns; ++i)
        inst.kilns.push_back({"k" + std::to_string(i), scatter(rng, c, spread)});
    // a few exact duplicates of location (distinct ids) exercise ties
    for (std::size_t i = 0; i + 1 < n_kilns && i < 3; ++i) inst.kilns[i + 1].location = inst.kilns[i].location;
    const int n_points = uniform_int(rng, 0, 60);
    for (int i = 0; i < n_points; ++i)
        inst.features.points.push_back({"p" + std::to_string(i), i % 2 ? "school" : "orchard", scatter(rng, c, spread)});
    const int n_lines = uniform_int(rng, 0, 8);
    for (int i = 0; i < n_lines; ++i) {
        kw::features::LineFeature l{"l" + std::to_string(i), i % 2 ? "river" : "highway", {}};
        auto p = scatter(rng, c, spread);
        const int verts = uniform_int(rng, 2, 12);
        double bearing = uniform(rng, 0.0, 360.0);
        for (int v = 0; v < verts; ++v) {
            l.vertices.push_back(p);
            bearing += uniform(rng, -40.0, 40.0);
            p = destination(p, uniform(rng, 0.2, 3.0), bearing);
        }
        inst.features.lines.push_back(std::move(l));
    }
    const int n_zones = uniform_int(rng, 0, 5);
    for (int i = 0; i < n_zones; ++i)
        inst.features.zones.push_back({"z" + std::to_string(i), "ocs",
                                       star_polygon(rng, scatter(rng, c, spread), uniform_int(rng, 5, 16), 0.3, 3.0)});
    return inst;
}

// The part of a feature set with one geometry type, as the kernels expect.
inline kw::features::FeatureSet points_of(const kw::features::FeatureSet& fs) { return {fs.points, {}, {}}; }
inline kw::features::FeatureSet lines_of(const kw::features::FeatureSet& fs) { return {{}, fs.lines, {}}; }
inline kw::features::FeatureSet zones_of(const kw::features::FeatureSet& fs) { return {{}, {}, fs.zones}; }

inline bool same_report(const kw::compliance::ViolationReport& a, const kw::compliance::ViolationReport& b) {
    if (a.rule_id != b.rule_id || a.violators != b.violators || a.evidence.size() != b.evidence.size()) return false;
    for (std::size_t i = 0; i < a.evidence.size(); ++i) {
        const auto &x = a.evidence[i], &y = b.evidence[i];
        if (x.kiln_id != y.kiln_id || x.offender_id != y.offender_id || x.distance_km != y.distance_km) return false;
    }
    return true;
}

inline bool same_exposure(const std::vector<kw::compliance::ExposureRow>& a,
                          const std::vector<kw::compliance::ExposureRow>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].radius_km != b[i].radius_km || a[i].population != b[i].population || a[i].cells != b[i].cells)
            return false;
    return true;
}

// Regular lat/lon lattice of population cells around c.
inline kw::compliance::PopulationGrid lattice(Rng& rng, const kw::GeoPoint& c, int rows, int cols, double step_deg) {
    kw::compliance::PopulationGrid g;
    for (int r = 0; r < rows; ++r)
        for (int q = 0; q < cols; ++q)
            g.push_back({kw::GeoPoint(c.lat() + (r - rows / 2) * step_deg, c.lon() + (q - cols / 2) * step_deg),
                         std::floor(uniform(rng, 0.0, 5000.0))});
    return g;
}

}  // namespace kwtest
