#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "kilnwatch/compliance.hpp"
#include "kilnwatch/errors.hpp"
#include "kilnwatch/features.hpp"
#include "kilnwatch/reference.hpp"
#include "support.hpp"

using namespace kw;
using namespace kw::compliance;

namespace {

PolicyRule rule(const std::string& id, RuleKind kind, std::optional<double> t, std::vector<std::string> classes = {}) {
    return PolicyRule{id, kind, t, std::move(classes)};
}

}  // namespace

TEST_SUITE("compliance") {

TEST_CASE("pairwise spacing examples") {
    const GeoPoint a(28.5, 77.2);
    auto r = pairwise_violations({{"a", a}, {"b", kwtest::destination(a, 0.5, 45.0)}});
    CHECK(r.violators == std::vector<std::string>{"a", "b"});
    REQUIRE(r.evidence.size() == 2);
    CHECK(r.evidence[0].offender_id == "b");
    CHECK(*r.evidence[0].distance_km == doctest::Approx(0.5).epsilon(1e-9));

    const auto b = kwtest::destination(a, 1.0, 0.0);
    const double d = haversine_km(a, b);
    r = pairwise_violations({{"a", a}, {"b", b}}, d);
    CHECK(r.violators.empty());
    CHECK(pairwise_violations({{"a", a}}).violators.empty());
    CHECK(pairwise_violations({}).violators.empty());
    CHECK_THROWS_AS(pairwise_violations({{"a", a}, {"a", b}}), ValidationError);
    CHECK_THROWS_AS(pairwise_violations({{"a", a}}, 0.0), ValidationError);
}

TEST_CASE("nearest offender ties go to the smaller id") {
    const GeoPoint a(28.5, 77.2);
    const auto b = kwtest::destination(a, 0.3, 0.0);
    const auto r = pairwise_violations({{"a", a}, {"z", b}, {"m", b}});
    REQUIRE(r.evidence.size() == 3);
    CHECK(r.evidence[0].offender_id == "m");
    CHECK(r.evidence[1].offender_id == "z");
    CHECK(*r.evidence[1].distance_km == 0.0);
}

TEST_CASE("polyline distance") {
    const GeoPoint p(0.0, 0.0);
    const std::vector<GeoPoint> seg{GeoPoint(0.01, -1.0), GeoPoint(0.01, 1.0)};
    const double d = distance_to_polyline_km(p, seg);
    CHECK(d == doctest::Approx(1.112).epsilon(1e-3));

    // densified oracle: vertices along the segment every ~1 m
    double best = 1e18;
    const int steps = 222400;
    for (int i = 0; i <= steps; ++i) {
        const double lon = -1.0 + 2.0 * i / steps;
        best = std::min(best, haversine_km(p, GeoPoint(0.01, lon)));
    }
    CHECK(std::abs(d - best) <= 1e-3);

    CHECK(distance_to_polyline_km(GeoPoint(0.01, 2.0), seg) == doctest::Approx(haversine_km(GeoPoint(0.01, 2.0), seg[1])));
    CHECK(distance_to_polyline_km(seg[0], seg) == 0.0);
    CHECK_THROWS_AS(distance_to_polyline_km(p, {GeoPoint(1, 1)}), ValidationError);
    CHECK_THROWS_AS(distance_to_polyline_km(p, {GeoPoint(1, 1), GeoPoint(1, 1)}), ValidationError);
}

TEST_CASE("polyline distance matches densified oracle on random lines") {
    kwtest::Rng rng(43);
    for (int t = 0; t < 30; ++t) {
        const GeoPoint c(kwtest::uniform(rng, 10.0, 35.0), kwtest::uniform(rng, 70.0, 90.0));
        const auto a = kwtest::scatter(rng, c, 5.0), b = kwtest::scatter(rng, c, 5.0), p = kwtest::scatter(rng, c, 5.0);
        const double d = distance_to_polyline_km(p, {a, b});
        double best = 1e18;
        for (int i = 0; i <= 10000; ++i) {
            const double f = i / 10000.0;
            best = std::min(best, haversine_km(p, GeoPoint(a.lat() + f * (b.lat() - a.lat()), a.lon() + f * (b.lon() - a.lon()))));
        }
        CHECK(std::abs(d - best) <= 1e-3);
    }
}

TEST_CASE("feature rule examples") {
    const GeoPoint k(28.5, 77.2);
    features::FeatureSet fs;
    fs.points.push_back({"school-1", "school", kwtest::destination(k, 0.6, 10.0)});
    const auto l0 = kwtest::destination(k, 0.7, 90.0);
    fs.lines.push_back({"river-1", "river", {kwtest::destination(l0, 5.0, 0.0), kwtest::destination(l0, 5.0, 180.0)}});
    const std::vector<Kiln> kilns{{"k1", k}};

    const auto rules = default_rules();
    auto by_id = [&](const std::string& id) { return *std::find_if(rules.begin(), rules.end(), [&](auto& r) { return r.rule_id == id; }); };
    const auto school = apply_rule(kilns, fs, by_id("sensitive_sites"));
    CHECK(school.violators == std::vector<std::string>{"k1"});
    CHECK(school.evidence[0].offender_id == "school-1");
    CHECK(*school.evidence[0].distance_km == doctest::Approx(0.6).epsilon(1e-6));
    const auto river = apply_rule(kilns, fs, by_id("river"));
    CHECK(river.violators.empty());
    const auto river_wide = apply_rule(kilns, fs, rule("r", RuleKind::line_feature, 0.8, {"river"}));
    CHECK(river_wide.violators.size() == 1);
    CHECK(*river_wide.evidence[0].distance_km == doctest::Approx(0.7).epsilon(1e-3));
    CHECK(apply_rule(kilns, fs, rule("r", RuleKind::point_feature, 0.8, {"hospital"})).violators.empty());
}

TEST_CASE("zone containment matches ray casting on a concave polygon") {
    // U shape
    const Polygon u({{GeoPoint(0, 0), GeoPoint(0, 3), GeoPoint(3, 3), GeoPoint(3, 2), GeoPoint(1, 2), GeoPoint(1, 1),
                      GeoPoint(3, 1), GeoPoint(3, 0), GeoPoint(0, 0)}});
    kwtest::Rng rng(47);
    std::vector<Kiln> kilns;
    for (int i = 0; i < 1000; ++i)
        kilns.push_back({"k" + std::to_string(1000 + i), GeoPoint(kwtest::uniform(rng, -0.5, 3.5), kwtest::uniform(rng, -0.5, 3.5))});
    kilns.push_back({"edge", GeoPoint(0.0, 1.5)});
    kilns.push_back({"notch", GeoPoint(2.0, 1.5)});
    features::FeatureSet fs;
    fs.zones.push_back({"u", "ocs", u});
    const auto r = zone_violations(kilns, fs, "ocs_zone");
    std::size_t inside = 0;
    for (const auto& k : kilns) {
        const bool expect = reference::ray_cast_contains(u, k.location);
        CHECK(u.contains(k.location) == expect);
        CHECK(r.violates(k.id) == expect);
        inside += expect;
    }
    CHECK(r.violators.size() == inside);
    CHECK(r.violates("edge"));
    CHECK_FALSE(r.violates("notch"));
    CHECK_FALSE(r.evidence[0].distance_km.has_value());
}

TEST_CASE("zone evidence names the smallest zone id") {
    const Polygon sq({{GeoPoint(0, 0), GeoPoint(0, 1), GeoPoint(1, 1), GeoPoint(1, 0), GeoPoint(0, 0)}});
    features::FeatureSet fs;
    fs.zones.push_back({"zb", "ocs", sq});
    fs.zones.push_back({"za", "ocs", sq});
    const auto r = zone_violations({{"k", GeoPoint(0.5, 0.5)}}, fs);
    REQUIRE(r.evidence.size() == 1);
    CHECK(r.evidence[0].offender_id == "za");
}

TEST_CASE("random instances match the reference kernels") {
    kwtest::Rng rng(53);
    for (int t = 0; t < 40; ++t) {
        const auto inst = kwtest::random_instance(rng, static_cast<std::size_t>(kwtest::uniform_int(rng, 0, 400)));
        const double th = kwtest::uniform(rng, 0.1, 2.0);
        CHECK(kwtest::same_report(pairwise_violations(inst.kilns, th), reference::pairwise_violations(inst.kilns, th)));
        const auto pts = kwtest::points_of(inst.features), lines = kwtest::lines_of(inst.features),
                   zones = kwtest::zones_of(inst.features);
        const auto pr = rule("pts", RuleKind::point_feature, th);
        CHECK(kwtest::same_report(feature_violations(inst.kilns, pts, pr), reference::feature_violations(inst.kilns, pts, pr)));
        const auto lr = rule("lines", RuleKind::line_feature, th);
        CHECK(kwtest::same_report(feature_violations(inst.kilns, lines, lr),
                                  reference::feature_violations(inst.kilns, lines, lr)));
        CHECK(kwtest::same_report(zone_violations(inst.kilns, zones), reference::zone_violations(inst.kilns, zones)));
        // apply_rule picks the geometry itself
        CHECK(kwtest::same_report(apply_rule(inst.kilns, inst.features, lr), feature_violations(inst.kilns, lines, lr)));
    }
}

TEST_CASE("results do not depend on input order") {
    kwtest::Rng rng(59);
    auto kilns = kwtest::spacing_fixture();
    const auto base = pairwise_violations(kilns);
    CHECK(base.violators.size() == 684);
    for (int t = 0; t < 3; ++t) {
        std::shuffle(kilns.begin(), kilns.end(), rng);
        CHECK(kwtest::same_report(pairwise_violations(kilns), base));
    }
}

TEST_CASE("exposure on a small lattice") {
    kwtest::Rng rng(61);
    const GeoPoint c(28.0, 77.0);
    const auto grid = kwtest::lattice(rng, c, 10, 10, 0.01);
    const std::vector<Kiln> kilns{{"a", c}, {"b", GeoPoint(28.005, 77.005)}};
    const std::vector<double> radii{1.0, 2.0, 10.0};
    const auto rows = population_exposure(kilns, grid, radii);
    CHECK(kwtest::same_exposure(rows, reference::population_exposure(kilns, grid, radii)));

    // brute force for the union of overlapping disks
    for (std::size_t i = 0; i < radii.size(); ++i) {
        double pop = 0.0;
        std::size_t cells = 0;
        for (const auto& g : grid)
            if (haversine_km(g.center, kilns[0].location) <= radii[i] || haversine_km(g.center, kilns[1].location) <= radii[i])
                pop += g.population, ++cells;
        CHECK(rows[i].population == pop);
        CHECK(rows[i].cells == cells);
    }
    CHECK(rows[2].cells == 100);
    CHECK_THROWS_AS(population_exposure(kilns, grid, {2.0, 1.0}), ValidationError);
    CHECK_THROWS_AS(population_exposure(kilns, grid, {0.0}), ValidationError);
}

TEST_CASE("exposure totals are monotone and match the reference") {
    kwtest::Rng rng(67);
    for (int t = 0; t < 20; ++t) {
        const auto inst = kwtest::random_instance(rng, static_cast<std::size_t>(kwtest::uniform_int(rng, 0, 60)));
        const GeoPoint c = inst.kilns.empty() ? GeoPoint(25, 80) : inst.kilns[0].location;
        const auto grid = kwtest::lattice(rng, c, 30, 30, 0.02);
        const std::vector<double> radii{0.5, 1.0, 2.0, 5.0};
        const auto rows = population_exposure(inst.kilns, grid, radii);
        CHECK(kwtest::same_exposure(rows, reference::population_exposure(inst.kilns, grid, radii)));
        for (std::size_t i = 1; i < rows.size(); ++i) {
            CHECK(rows[i].population >= rows[i - 1].population);
            CHECK(rows[i].cells >= rows[i - 1].cells);
        }
    }
}

TEST_CASE("rules toml") {
    std::istringstream in(R"([[rule]]
rule_id = "spacing"
kind = "pairwise_kiln"
threshold_km = 1.5

[[rule]]
rule_id = "water"
kind = "line_feature"
threshold_km = 0.5
feature_class = ["river", "canal"]

[[rule]]
rule_id = "ocs"
kind = "zone_prohibition"
feature_class = "ocs"
)");
    const auto rules = read_rules(in);
    REQUIRE(rules.size() == 3);
    CHECK(*rules[0].threshold_km == 1.5);
    CHECK(rules[1].feature_classes == std::vector<std::string>{"river", "canal"});
    CHECK(rules[2].feature_classes == std::vector<std::string>{"ocs"});
    CHECK_FALSE(rules[2].threshold_km.has_value());

    std::istringstream no_threshold("[[rule]]\nrule_id = \"x\"\nkind = \"point_feature\"\n");
    CHECK_THROWS_AS(read_rules(no_threshold), ValidationError);
    std::istringstream zone_threshold("[[rule]]\nrule_id = \"x\"\nkind = \"zone_prohibition\"\nthreshold_km = 1\n");
    CHECK_THROWS_AS(read_rules(zone_threshold), ValidationError);
    std::istringstream bad_kind("[[rule]]\nrule_id = \"x\"\nkind = \"buffer\"\nthreshold_km = 1\n");
    CHECK_THROWS_AS(read_rules(bad_kind), ValidationError);
    std::istringstream dup("[[rule]]\nrule_id = \"x\"\nkind = \"pairwise_kiln\"\nthreshold_km = 1\n"
                           "[[rule]]\nrule_id = \"x\"\nkind = \"pairwise_kiln\"\nthreshold_km = 2\n");
    CHECK_THROWS_AS(read_rules(dup), ValidationError);
    for (const auto& r : default_rules()) CHECK_NOTHROW(r.validate());
}

TEST_CASE("feature geojson") {
    std::istringstream in(R"({"type":"FeatureCollection","features":[
 {"type":"Feature","id":"s1","properties":{"feature_class":"school"},"geometry":{"type":"Point","coordinates":[77.2,28.5]}},
 {"type":"Feature","properties":{"name":"Yamuna"},"geometry":{"type":"MultiLineString","coordinates":[[[77,28],[77.1,28.1]],[[77.2,28.2],[77.3,28.3]]]}},
 {"type":"Feature","properties":{},"geometry":{"type":"Polygon","coordinates":[[[77,28],[77.1,28],[77.1,28.1],[77,28]]]}}
]})");
    const auto fs = features::read_features(in, "river");
    REQUIRE(fs.points.size() == 1);
    CHECK(fs.points[0].id == "s1");
    CHECK(fs.points[0].location.lat() == 28.5);
    REQUIRE(fs.lines.size() == 2);
    CHECK(fs.lines[1].id == "Yamuna");
    CHECK(fs.lines[0].feature_class == "river");
    REQUIRE(fs.zones.size() == 1);
    CHECK(fs.select({"school"}).size() == 1);
    CHECK(fs.select({}).size() == 4);

    std::istringstream open_ring(R"({"type":"FeatureCollection","features":[{"type":"Feature","properties":{},
 "geometry":{"type":"Polygon","coordinates":[[[77,28],[77.1,28],[77.1,28.1],[77.2,28.2]]]}}]})");
    CHECK_THROWS_AS(features::read_features(open_ring, "x"), Error);
    std::istringstream junk("{not json");
    CHECK_THROWS_AS(features::read_features(junk, "x"), ParseError);
}

TEST_CASE("report writers") {
    const GeoPoint a(28.5, 77.2);
    const std::vector<Kiln> kilns{{"a", a}, {"b", kwtest::destination(a, 0.5, 0.0)}, {"c", kwtest::destination(a, 5.0, 0.0)}};
    const auto rep = pairwise_violations(kilns);
    std::ostringstream gj, sum, viol;
    write_report_geojson(gj, kilns, rep, default_rules()[0]);
    CHECK(gj.str().find("\"violating\"") != std::string::npos);
    CHECK(gj.str().find("\"compliant\"") != std::string::npos);
    write_summary_csv(sum, kilns.size(), {default_rules()[0]}, {rep});
    CHECK(sum.str().rfind("rule_id,kind,threshold_km,kilns,violators,percent\n", 0) == 0);
    CHECK(sum.str().find("kiln_spacing,pairwise_kiln,") != std::string::npos);
    write_violations_csv(viol, {rep});
    CHECK([&] { const auto s = viol.str(); return std::count(s.begin(), s.end(), '\n'); }() == 3);
}

TEST_CASE("population csv") {
    std::istringstream in("lat,lon,population\n28.5,77.2,100\n28.6,77.2,0\n");
    CHECK(read_population_grid(in).size() == 2);
    std::istringstream neg("lat,lon,population\n28.5,77.2,-1\n");
    CHECK_THROWS_AS(read_population_grid(neg), ParseError);
}

}  // TEST_SUITE
