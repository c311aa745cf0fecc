#include <algorithm>
#include <cmath>
#include <limits>

#include "kilnwatch/reference.hpp"

namespace kw::reference {

using compliance::Evidence;
using compliance::Kiln;
using compliance::ViolationReport;

namespace {

std::vector<Kiln> by_id(std::vector<Kiln> kilns) {
    std::sort(kilns.begin(), kilns.end(), [](const Kiln& a, const Kiln& b) { return a.id < b.id; });
    return kilns;
}

void record(ViolationReport& rep, const Kiln& k, bool found, const std::string& who, double d, bool with_d) {
    if (!found) return;
    rep.violators.push_back(k.id);
    rep.evidence.push_back({k.id, who, with_d ? std::optional(d) : std::nullopt});
}

bool better(double d, const std::string& who, bool found, double best, const std::string& best_id) {
    return !found || d < best || (d == best && who < best_id);
}

}  // namespace

ViolationReport pairwise_violations(const std::vector<Kiln>& input, double threshold_km, const std::string& rule_id) {
    const auto kilns = by_id(input);
    ViolationReport rep{rule_id, {}, {}};
    for (std::size_t i = 0; i < kilns.size(); ++i) {
        bool found = false;
        double best = 0.0;
        std::string best_id;
        for (std::size_t j = 0; j < kilns.size(); ++j) {
            if (i == j) continue;
            const double d = haversine_km(kilns[i].location, kilns[j].location);
            if (d < threshold_km && better(d, kilns[j].id, found, best, best_id)) {
                found = true;
                best = d;
                best_id = kilns[j].id;
            }
        }
        record(rep, kilns[i], found, best_id, best, true);
    }
    return rep;
}

ViolationReport feature_violations(const std::vector<Kiln>& input, const features::FeatureSet& fs,
                                   const compliance::PolicyRule& rule) {
    const auto kilns = by_id(input);
    const double t = *rule.threshold_km;
    ViolationReport rep{rule.rule_id, {}, {}};
    for (const auto& k : kilns) {
        bool found = false;
        double best = 0.0;
        std::string best_id;
        auto offer = [&](double d, const std::string& who) {
            if (d < t && better(d, who, found, best, best_id)) {
                found = true;
                best = d;
                best_id = who;
            }
        };
        if (rule.kind == compliance::RuleKind::point_feature)
            for (const auto& f : fs.points) offer(haversine_km(k.location, f.location), f.id);
        else
            for (const auto& f : fs.lines) offer(compliance::distance_to_polyline_km(k.location, f.vertices), f.id);
        record(rep, k, found, best_id, best, true);
    }
    return rep;
}

ViolationReport zone_violations(const std::vector<Kiln>& input, const features::FeatureSet& zones,
                                const std::string& rule_id) {
    const auto kilns = by_id(input);
    ViolationReport rep{rule_id, {}, {}};
    for (const auto& k : kilns) {
        bool found = false;
        std::string best_id;
        for (const auto& z : zones.zones) {
            if (ray_cast_contains(z.polygon, k.location) && (!found || z.id < best_id)) {
                found = true;
                best_id = z.id;
            }
        }
        record(rep, k, found, best_id, 0.0, false);
    }
    return rep;
}

std::vector<compliance::ExposureRow> population_exposure(const std::vector<Kiln>& kilns,
                                                         const compliance::PopulationGrid& grid,
                                                         const std::vector<double>& radii_km) {
    std::vector<compliance::ExposureRow> rows;
    for (double r : radii_km) {
        compliance::ExposureRow row{r, 0.0, 0};
        for (const auto& cell : grid) {
            bool covered = false;
            for (const auto& k : kilns)
                if (haversine_km(cell.center, k.location) <= r) {
                    covered = true;
                    break;
                }
            if (covered) {
                row.population += cell.population;
                ++row.cells;
            }
        }
        rows.push_back(row);
    }
    return rows;
}

bool ray_cast_contains(const Polygon& poly, const GeoPoint& p) {
    const double x = p.lon(), y = p.lat();
    bool inside = false;
    for (const auto& ring : poly.rings()) {
        for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
            const double xi = ring[i].lon(), yi = ring[i].lat();
            const double xj = ring[j].lon(), yj = ring[j].lat();
            // On the edge: collinear and within the segment's box.
            const double cross = (xj - xi) * (y - yi) - (yj - yi) * (x - xi);
            if (cross == 0.0 && std::min(xi, xj) <= x && x <= std::max(xi, xj) && std::min(yi, yj) <= y &&
                y <= std::max(yi, yj))
                return true;
            if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
        }
    }
    return inside;
}

}  // namespace kw::reference
