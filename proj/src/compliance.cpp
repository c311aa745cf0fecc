#include "kilnwatch/compliance.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <unordered_map>

#include <json.hpp>

#include "csv_util.hpp"
#include "kilnwatch/errors.hpp"
#include "kilnwatch/toml_lite.hpp"

namespace kw::compliance {

std::vector<Kiln> kilns_from_detections(const std::vector<detection::KilnDetection>& detections) {
    std::vector<Kiln> out;
    out.reserve(detections.size());
    for (const auto& d : detections) out.push_back({d.detection_id, d.location});
    return out;
}

std::string to_string(RuleKind k) {
    switch (k) {
        case RuleKind::pairwise_kiln: return "pairwise_kiln";
        case RuleKind::point_feature: return "point_feature";
        case RuleKind::line_feature: return "line_feature";
        case RuleKind::zone_prohibition: return "zone_prohibition";
    }
    return "pairwise_kiln";
}

RuleKind parse_rule_kind(const std::string& s) {
    for (auto k : {RuleKind::pairwise_kiln, RuleKind::point_feature, RuleKind::line_feature, RuleKind::zone_prohibition})
        if (to_string(k) == s) return k;
    throw ValidationError("unknown rule kind `" + s +
                          "` (expected pairwise_kiln, point_feature, line_feature or zone_prohibition)");
}

void PolicyRule::validate() const {
    if (rule_id.empty()) throw ValidationError("rule_id must not be empty");
    if (kind == RuleKind::zone_prohibition) {
        if (threshold_km) throw ValidationError("rule " + rule_id + ": zone rules take no threshold_km");
        return;
    }
    if (!threshold_km) throw ValidationError("rule " + rule_id + ": threshold_km is required");
    if (!(*threshold_km > 0.0) || !std::isfinite(*threshold_km))
        throw ValidationError("rule " + rule_id + ": threshold_km must be > 0");
}

std::vector<PolicyRule> default_rules() {
    return {
        {"kiln_spacing", RuleKind::pairwise_kiln, 1.0, {}},
        {"sensitive_sites", RuleKind::point_feature, 0.8,
         {"school", "hospital", "court", "government_office", "habitation", "orchard"}},
        {"river", RuleKind::line_feature, 0.5, {"river", "water"}},
        {"highway_railway", RuleKind::line_feature, 0.2, {"highway", "railway"}},
        {"ocs_zone", RuleKind::zone_prohibition, std::nullopt, {"ocs"}},
        {"eco_sensitive_zone", RuleKind::zone_prohibition, std::nullopt, {"eco_sensitive"}},
    };
}

std::vector<PolicyRule> read_rules(std::istream& in) {
    const auto doc = config::parse(in);
    std::vector<PolicyRule> rules;
    for (const auto& t : doc.array("rule")) {
        PolicyRule r;
        r.rule_id = t.get_string("rule_id").value_or("");
        const auto kind = t.get_string("kind");
        if (!kind) throw ValidationError("rule " + r.rule_id + ": kind is required");
        r.kind = parse_rule_kind(*kind);
        r.threshold_km = t.get_number("threshold_km");
        r.feature_classes = t.get_string_list("feature_class").value_or(std::vector<std::string>{});
        r.validate();
        for (const auto& other : rules)
            if (other.rule_id == r.rule_id) throw ValidationError("duplicate rule_id " + r.rule_id);
        rules.push_back(std::move(r));
    }
    if (rules.empty()) throw ValidationError("rules file defines no [[rule]] tables");
    return rules;
}

std::vector<PolicyRule> read_rules_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return read_rules(in);
}

bool ViolationReport::violates(const std::string& kiln_id) const {
    return std::binary_search(violators.begin(), violators.end(), kiln_id);
}

GridIndex build_index(const std::vector<GeoPoint>& points, double cell_km) { return GridIndex(points, cell_km); }

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Kilns in canonical (id) order; ids must be unique.
std::vector<Kiln> canonical(const std::vector<Kiln>& kilns) {
    std::vector<Kiln> sorted = kilns;
    std::sort(sorted.begin(), sorted.end(), [](const Kiln& a, const Kiln& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i].id == sorted[i - 1].id) throw ValidationError("duplicate kiln id " + sorted[i].id);
    return sorted;
}

std::vector<GeoPoint> locations(const std::vector<Kiln>& kilns) {
    std::vector<GeoPoint> pts;
    pts.reserve(kilns.size());
    for (const auto& k : kilns) pts.push_back(k.location);
    return pts;
}

struct Hit {
    bool found = false;
    double d = std::numeric_limits<double>::infinity();
    const std::string* id = nullptr;

    void offer(double dist, const std::string& who) {
        if (!found || dist < d || (dist == d && who < *id)) {
            found = true;
            d = dist;
            id = &who;
        }
    }
};

ViolationReport assemble(const std::string& rule_id, const std::vector<Kiln>& sorted, const std::vector<Hit>& hits,
                         bool with_distance) {
    ViolationReport rep;
    rep.rule_id = rule_id;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (!hits[i].found) continue;
        rep.violators.push_back(sorted[i].id);
        rep.evidence.push_back({sorted[i].id, *hits[i].id, with_distance ? std::optional(hits[i].d) : std::nullopt});
    }
    return rep;
}

// Uniform grid over lat/lon boxes. Returns every id whose box intersects the query box.
class BoxIndex {
public:
    explicit BoxIndex(double cell_deg) : cell_(cell_deg) {}

    void insert(std::uint32_t id, double lat0, double lat1, double lon0, double lon1) {
        const auto r0 = row(lat0), r1 = row(lat1), c0 = col(lon0), c1 = col(lon1);
        boxes_.push_back({lat0, lat1, lon0, lon1});
        if ((r1 - r0 + 1) * (c1 - c0 + 1) > kMaxCells) {
            oversized_.push_back(id);
            return;
        }
        for (auto r = r0; r <= r1; ++r)
            for (auto c = c0; c <= c1; ++c) cells_[key(r, c)].push_back(id);
    }

    std::vector<std::uint32_t> query(double lat0, double lat1, double lon0, double lon1) const {
        std::vector<std::uint32_t> out = oversized_;
        const auto r0 = row(lat0), r1 = row(lat1), c0 = col(lon0), c1 = col(lon1);
        if ((r1 - r0 + 1) * (c1 - c0 + 1) > static_cast<std::int64_t>(cells_.size()) + kMaxCells) {
            for (std::uint32_t id = 0; id < boxes_.size(); ++id) out.push_back(id);
        } else {
            for (auto r = r0; r <= r1; ++r)
                for (auto c = c0; c <= c1; ++c)
                    if (auto it = cells_.find(key(r, c)); it != cells_.end())
                        out.insert(out.end(), it->second.begin(), it->second.end());
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        std::erase_if(out, [&](std::uint32_t id) {
            const auto& b = boxes_[id];
            return b[1] < lat0 || b[0] > lat1 || b[3] < lon0 || b[2] > lon1;
        });
        return out;
    }

private:
    static constexpr std::int64_t kMaxCells = 4096;
    std::int64_t row(double lat) const { return static_cast<std::int64_t>(std::floor(lat / cell_)); }
    std::int64_t col(double lon) const { return static_cast<std::int64_t>(std::floor(lon / cell_)); }
    static std::int64_t key(std::int64_t r, std::int64_t c) { return (r << 32) ^ (c & 0xffffffff); }

    double cell_;
    std::vector<std::array<double, 4>> boxes_;
    std::vector<std::uint32_t> oversized_;
    std::unordered_map<std::int64_t, std::vector<std::uint32_t>> cells_;
};

// Half-widths (degrees) of the box holding every point whose local-frame distance from p is
// below km. Padded slightly so rounding can only add candidates.
std::pair<double, double> search_box(const GeoPoint& p, double km) {
    const double dlat = km / kEarthRadiusKm / kDeg * (1.0 + 1e-9) + 1e-12;
    const double c = std::cos(p.lat() * kDeg);
    const double dlon = c > 1e-12 ? dlat / c : 360.0;
    return {dlat, std::min(dlon, 360.0)};
}

double segment_km(double ax, double ay, double bx, double by) {
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(-(ax * dx + ay * dy) / len2, 0.0, 1.0);
    return std::hypot(ax + t * dx, ay + t * dy);
}

struct Frame {
    double lat0, lon0, kx;
    explicit Frame(const GeoPoint& p)
        : lat0(p.lat()), lon0(p.lon()), kx(std::cos(p.lat() * kDeg) * kEarthRadiusKm * kDeg) {}
    double x(const GeoPoint& q) const { return (q.lon() - lon0) * kx; }
    double y(const GeoPoint& q) const { return (q.lat() - lat0) * kEarthRadiusKm * kDeg; }
};

void check_polyline(const std::vector<GeoPoint>& line) {
    if (line.size() < 2) throw ValidationError("polyline needs at least 2 vertices");
    for (const auto& v : line)
        if (v.lat() != line.front().lat() || v.lon() != line.front().lon()) return;
    throw ValidationError("degenerate polyline: all vertices identical");
}

}  // namespace

ViolationReport pairwise_violations(const std::vector<Kiln>& kilns, double threshold_km, const std::string& rule_id) {
    PolicyRule{rule_id, RuleKind::pairwise_kiln, threshold_km, {}}.validate();
    const auto sorted = canonical(kilns);
    const GridIndex index = build_index(locations(sorted), threshold_km);
    std::vector<Hit> hits(sorted.size());
    const auto n = static_cast<std::int64_t>(sorted.size());
#pragma omp parallel for schedule(dynamic, 64)
    for (std::int64_t i = 0; i < n; ++i) {
        index.for_each_within(sorted[i].location, threshold_km, [&](std::uint32_t j, double d) {
            if (j != static_cast<std::uint32_t>(i) && d < threshold_km) hits[i].offer(d, sorted[j].id);
        });
    }
    return assemble(rule_id, sorted, hits, true);
}

double distance_to_polyline_km(const GeoPoint& p, const std::vector<GeoPoint>& line) {
    check_polyline(line);
    const Frame f(p);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < line.size(); ++i)
        best = std::min(best, segment_km(f.x(line[i]), f.y(line[i]), f.x(line[i + 1]), f.y(line[i + 1])));
    return best;
}

ViolationReport feature_violations(const std::vector<Kiln>& kilns, const features::FeatureSet& fs,
                                   const PolicyRule& rule) {
    rule.validate();
    const bool point_rule = rule.kind == RuleKind::point_feature;
    if (!point_rule && rule.kind != RuleKind::line_feature)
        throw ValidationError("rule " + rule.rule_id + ": feature_violations takes point or line rules");
    if (!fs.zones.empty() || (point_rule ? !fs.lines.empty() : !fs.points.empty()))
        throw ValidationError("rule " + rule.rule_id + " (" + to_string(rule.kind) +
                              ") given features of another geometry type");

    const double t = *rule.threshold_km;
    const auto sorted = canonical(kilns);
    std::vector<Hit> hits(sorted.size());
    const auto n = static_cast<std::int64_t>(sorted.size());

    if (point_rule) {
        std::vector<GeoPoint> pts;
        for (const auto& f : fs.points) pts.push_back(f.location);
        const GridIndex index = build_index(pts, t);
#pragma omp parallel for schedule(dynamic, 64)
        for (std::int64_t i = 0; i < n; ++i) {
            index.for_each_within(sorted[i].location, t, [&](std::uint32_t j, double d) {
                if (d < t) hits[i].offer(d, fs.points[j].id);
            });
        }
        return assemble(rule.rule_id, sorted, hits, true);
    }

    // Segments indexed by bounding box; the search box bounds the local-frame distance.
    struct Seg {
        std::uint32_t line;
        std::uint32_t first;
    };
    std::vector<Seg> segs;
    BoxIndex boxes(std::max(t / kEarthRadiusKm / kDeg, 1e-4));
    for (std::uint32_t l = 0; l < fs.lines.size(); ++l) {
        const auto& v = fs.lines[l].vertices;
        check_polyline(v);
        for (std::uint32_t s = 0; s + 1 < v.size(); ++s) {
            boxes.insert(static_cast<std::uint32_t>(segs.size()), std::min(v[s].lat(), v[s + 1].lat()),
                         std::max(v[s].lat(), v[s + 1].lat()), std::min(v[s].lon(), v[s + 1].lon()),
                         std::max(v[s].lon(), v[s + 1].lon()));
            segs.push_back({l, s});
        }
    }
#pragma omp parallel for schedule(dynamic, 64)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& p = sorted[i].location;
        const auto [dlat, dlon] = search_box(p, t);
        const Frame f(p);
        // Per line minimum over candidate segments; non-candidates are at least t away.
        std::unordered_map<std::uint32_t, double> best;
        for (auto sid : boxes.query(p.lat() - dlat, p.lat() + dlat, p.lon() - dlon, p.lon() + dlon)) {
            const auto& v = fs.lines[segs[sid].line].vertices;
            const auto& a = v[segs[sid].first];
            const auto& b = v[segs[sid].first + 1];
            const double d = segment_km(f.x(a), f.y(a), f.x(b), f.y(b));
            auto [it, fresh] = best.try_emplace(segs[sid].line, d);
            if (!fresh) it->second = std::min(it->second, d);
        }
        for (const auto& [l, d] : best)
            if (d < t) hits[i].offer(d, fs.lines[l].id);
    }
    return assemble(rule.rule_id, sorted, hits, true);
}

ViolationReport zone_violations(const std::vector<Kiln>& kilns, const features::FeatureSet& zones,
                                const std::string& rule_id) {
    if (!zones.points.empty() || !zones.lines.empty())
        throw ValidationError("rule " + rule_id + " (zone_prohibition) given non-polygon features");
    const auto sorted = canonical(kilns);
    BoxIndex boxes(0.05);
    for (std::uint32_t z = 0; z < zones.zones.size(); ++z) {
        const auto& poly = zones.zones[z].polygon;
        if (poly.empty()) throw ValidationError("zone " + zones.zones[z].id + " has no rings");
        boxes.insert(z, poly.min_lat(), poly.max_lat(), poly.min_lon(), poly.max_lon());
    }
    std::vector<Hit> hits(sorted.size());
    const auto n = static_cast<std::int64_t>(sorted.size());
#pragma omp parallel for schedule(dynamic, 64)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& p = sorted[i].location;
        for (auto z : boxes.query(p.lat(), p.lat(), p.lon(), p.lon()))
            if (zones.zones[z].polygon.contains(p)) hits[i].offer(0.0, zones.zones[z].id);
    }
    return assemble(rule_id, sorted, hits, false);
}

ViolationReport apply_rule(const std::vector<Kiln>& kilns, const features::FeatureSet& features,
                           const PolicyRule& rule) {
    rule.validate();
    auto selected = features.select(rule.feature_classes);
    // Only the rule's own geometry type takes part.
    features::FeatureSet own;
    switch (rule.kind) {
        case RuleKind::pairwise_kiln: return pairwise_violations(kilns, *rule.threshold_km, rule.rule_id);
        case RuleKind::zone_prohibition:
            own.zones = std::move(selected.zones);
            return zone_violations(kilns, own, rule.rule_id);
        case RuleKind::point_feature: own.points = std::move(selected.points); break;
        case RuleKind::line_feature: own.lines = std::move(selected.lines); break;
    }
    return feature_violations(kilns, own, rule);
}

PopulationGrid read_population_grid(std::istream& in) {
    PopulationGrid grid;
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (csv::blank(line)) continue;
        auto cols = csv::split(line);
        if (!header) {
            if (cols != std::vector<std::string>{"lat", "lon", "population"})
                throw ParseError("population header must be lat,lon,population", line_no);
            header = true;
            continue;
        }
        if (cols.size() != 3) throw ParseError("expected 3 columns", line_no);
        const double lat = csv::to_double(cols[0], line_no, "lat");
        const double lon = csv::to_double(cols[1], line_no, "lon");
        const double pop = csv::to_double(cols[2], line_no, "population");
        if (!(pop >= 0.0) || !std::isfinite(pop)) throw ParseError("population must be >= 0", line_no);
        try {
            grid.push_back({GeoPoint(lat, lon), pop});
        } catch (const ValidationError& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return grid;
}

PopulationGrid read_population_grid_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return read_population_grid(in);
}

std::vector<ExposureRow> population_exposure(const std::vector<Kiln>& kilns, const PopulationGrid& grid,
                                             const std::vector<double>& radii_km) {
    if (radii_km.empty()) throw ValidationError("exposure needs at least one radius");
    for (std::size_t i = 0; i < radii_km.size(); ++i) {
        if (!(radii_km[i] > 0.0) || !std::isfinite(radii_km[i])) throw ValidationError("radii must be > 0");
        if (i > 0 && !(radii_km[i] > radii_km[i - 1])) throw ValidationError("radii must be strictly ascending");
    }
    for (const auto& c : grid)
        if (!(c.population >= 0.0)) throw ValidationError("population must be >= 0");

    std::vector<ExposureRow> rows;
    for (double r : radii_km) rows.push_back({r, 0.0, 0});
    if (kilns.empty() || grid.empty()) return rows;

    const double r_max = radii_km.back();
    const GridIndex index = build_index(locations(kilns), r_max);
    std::vector<double> nearest(grid.size(), std::numeric_limits<double>::infinity());
    const auto n = static_cast<std::int64_t>(grid.size());
#pragma omp parallel for schedule(dynamic, 256)
    for (std::int64_t c = 0; c < n; ++c) {
        index.for_each_within(grid[c].center, r_max, [&](std::uint32_t, double d) {
            nearest[c] = std::min(nearest[c], d);
        });
    }
    // Sequential sum in grid order keeps totals bit-identical across thread counts.
    for (std::size_t c = 0; c < grid.size(); ++c) {
        for (auto& row : rows) {
            if (nearest[c] <= row.radius_km) {
                row.population += grid[c].population;
                ++row.cells;
            }
        }
    }
    return rows;
}

// --- outputs -------------------------------------------------------------------

namespace {
double round6(double v) { return std::round(v * 1e6) / 1e6; }

std::string fixed(double v, int dp) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", dp, v);
    return buf;
}
}  // namespace

void write_report_geojson(std::ostream& out, const std::vector<Kiln>& kilns, const ViolationReport& report,
                          const std::optional<PolicyRule>& rule) {
    using nlohmann::ordered_json;
    const auto sorted = canonical(kilns);
    std::unordered_map<std::string, const Evidence*> ev;
    for (const auto& e : report.evidence) ev[e.kiln_id] = &e;

    ordered_json fc;
    fc["type"] = "FeatureCollection";
    fc["rule_id"] = report.rule_id;
    if (rule) {
        fc["kind"] = to_string(rule->kind);
        if (rule->threshold_km) fc["threshold_km"] = *rule->threshold_km;
    }
    fc["violators"] = report.violators.size();
    fc["kilns"] = sorted.size();
    auto& features = fc["features"] = ordered_json::array();
    for (const auto& k : sorted) {
        ordered_json props;
        props["kiln_id"] = k.id;
        auto it = ev.find(k.id);
        props["status"] = it == ev.end() ? "compliant" : "violating";
        if (it != ev.end()) {
            props["offender_id"] = it->second->offender_id;
            if (it->second->distance_km) props["distance_km"] = round6(*it->second->distance_km);
        }
        features.push_back({{"type", "Feature"},
                            {"geometry", {{"type", "Point"}, {"coordinates", {round6(k.location.lon()), round6(k.location.lat())}}}},
                            {"properties", props}});
    }
    out << fc.dump(1) << '\n';
}

void write_summary_csv(std::ostream& out, std::size_t kiln_count, const std::vector<PolicyRule>& rules,
                       const std::vector<ViolationReport>& reports) {
    out << "rule_id,kind,threshold_km,kilns,violators,percent\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& rep = reports[i];
        const PolicyRule* rule = i < rules.size() ? &rules[i] : nullptr;
        out << rep.rule_id << ',' << (rule ? to_string(rule->kind) : std::string()) << ','
            << (rule && rule->threshold_km ? fixed(*rule->threshold_km, 3) : std::string()) << ',' << kiln_count << ','
            << rep.violators.size() << ','
            << (kiln_count ? fixed(100.0 * static_cast<double>(rep.violators.size()) / static_cast<double>(kiln_count), 1)
                           : std::string("0.0"))
            << '\n';
    }
}

void write_violations_csv(std::ostream& out, const std::vector<ViolationReport>& reports) {
    out << "rule_id,kiln_id,offender_id,distance_km\n";
    for (const auto& rep : reports)
        for (const auto& e : rep.evidence)
            out << rep.rule_id << ',' << e.kiln_id << ',' << e.offender_id << ','
                << (e.distance_km ? fixed(*e.distance_km, 6) : std::string()) << '\n';
}

void write_exposure_csv(std::ostream& out, const std::vector<ExposureRow>& rows) {
    out << "radius_km,population,cells\n";
    for (const auto& r : rows) out << fixed(r.radius_km, 3) << ',' << fixed(r.population, r.population == std::floor(r.population) ? 0 : 3) << ',' << r.cells << '\n';
}

}  // namespace kw::compliance
