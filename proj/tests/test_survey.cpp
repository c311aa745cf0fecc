#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "kilnwatch/errors.hpp"
#include "kilnwatch/survey.hpp"
#include "support.hpp"

using namespace kw;
using namespace kw::survey;

TEST_SUITE("survey") {

TEST_CASE("1x1 degree box gives 101 x 101 centers") {
    const auto plan = plan_queries(BoundingBox(28.0, 77.0, 29.0, 78.0));
    CHECK(plan.centers.size() == 10201);
    CHECK(plan.centers.front() == GridCell::from_hundredths(2800, 7700));
    CHECK(plan.centers.back() == GridCell::from_hundredths(2900, 7800));
    CHECK(std::is_sorted(plan.centers.begin(), plan.centers.end()));
    CHECK(std::adjacent_find(plan.centers.begin(), plan.centers.end()) == plan.centers.end());
}

TEST_CASE("degenerate box gives a single row") {
    const auto plan = plan_queries(BoundingBox(28.0, 77.0, 28.0 + 1e-9, 77.2));
    std::set<int> rows;
    for (const auto& c : plan.centers) rows.insert(c.lat_hundredths());
    CHECK(rows.size() == 1);
    CHECK(plan.centers.size() == 21);
}

TEST_CASE("stride must be a positive multiple of 0.01") {
    const BoundingBox box(28.0, 77.0, 28.1, 77.1);
    CHECK_THROWS_AS(plan_queries(box, std::nullopt, 0.0), ValidationError);
    CHECK_THROWS_AS(plan_queries(box, std::nullopt, 0.015), ValidationError);
    CHECK(plan_queries(box, std::nullopt, 0.02).centers.size() == 36);
}

TEST_CASE("mask equals a brute-force point-in-polygon filter") {
    const BoundingBox box(28.0, 77.0, 28.5, 77.5);
    const auto west = Polygon::from_open_ring({GeoPoint(27.9, 76.9), GeoPoint(28.6, 76.9), GeoPoint(28.6, 77.25), GeoPoint(27.9, 77.25)});
    const auto full = plan_queries(box);
    const auto masked = plan_queries(box, west);
    std::vector<GridCell> expect;
    for (const auto& c : full.centers)
        if (west.contains(c.center())) expect.push_back(c);
    CHECK(masked.centers == expect);
    CHECK(masked.centers.size() == 51 * 26);
}

TEST_CASE("coverage: random points in the region are within stride/2 of a center") {
    kwtest::Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const double s = kwtest::uniform(rng, -30, 30), w = kwtest::uniform(rng, -100, 100);
        const BoundingBox box(s, w, s + kwtest::uniform(rng, 0.001, 0.4), w + kwtest::uniform(rng, 0.001, 0.4));
        for (double stride : {0.01, 0.03}) {
            const auto plan = plan_queries(box, std::nullopt, stride);
            std::set<GridCell> cells(plan.centers.begin(), plan.centers.end());
            for (int i = 0; i < 2000; ++i) {
                const double lat = kwtest::uniform(rng, box.south(), box.north());
                const double lon = kwtest::uniform(rng, box.west(), box.east());
                bool covered = false;
                for (const auto& c : plan.centers)
                    if (std::abs(c.lat2() - lat) <= stride / 2 + 1e-9 && std::abs(c.lon2() - lon) <= stride / 2 + 1e-9) {
                        covered = true;
                        break;
                    }
                CHECK(covered);
            }
        }
    }
}

TEST_CASE("effort estimates") {
    const auto e = estimate_effort(2'100'000);
    CHECK(e.api_days == 84);
    CHECK(e.chip_count == 52'500'000);
    CHECK(e.chips_per_day_per_key() == 625'000);
    CHECK(estimate_effort(50'000, 2).api_days == 1);
    CHECK(estimate_effort(50'001, 2).api_days == 2);
    const auto zero = estimate_effort(0);
    CHECK(zero.api_days == 0);
    CHECK(zero.chip_count == 0);
    CHECK_THROWS_AS(estimate_effort(10, 0), ValidationError);
    CHECK_THROWS_AS(estimate_effort(10, 1, 0), ValidationError);
    kwtest::Rng rng(9);
    for (int i = 0; i < 1000; ++i) {
        const std::int64_t q = kwtest::uniform_int(rng, 0, 5'000'000), k = kwtest::uniform_int(rng, 1, 9),
                           quota = kwtest::uniform_int(rng, 1, 50'000);
        const auto est = estimate_effort(q, k, quota);
        CHECK(est.chip_count == 25 * q);
        CHECK(est.api_days == static_cast<std::int64_t>(std::ceil(static_cast<double>(q) / static_cast<double>(k * quota))));
    }
}

TEST_CASE("zoom 16 scale 2 needs a quarter of the zoom 17 scale 1 queries") {
    for (double lat : {0.0, 20.0, 28.7, 45.0})
        CHECK(queries_per_km2(lat, 16, 2, 600) / queries_per_km2(lat, 17, 1, 600) == doctest::Approx(0.25).epsilon(1e-12));
    // The 1200 px tile at zoom 16 scale 2 spans about 1.43 km at the equator.
    CHECK(tile_footprint(0.0, 16, 2, 600).side_m == doctest::Approx(1433.2).epsilon(1e-3));
}

TEST_CASE("dedupe_plan") {
    const auto plan = plan_queries(BoundingBox(28.0, 77.0, 28.2, 77.2));
    CHECK(dedupe_plan(plan, {}).centers == plan.centers);
    std::unordered_set<GridCell, GridCellHash> all(plan.centers.begin(), plan.centers.end());
    CHECK(dedupe_plan(plan, all).centers.empty());
    kwtest::Rng rng(4);
    std::unordered_set<GridCell, GridCellHash> some;
    for (const auto& c : plan.centers)
        if (rng() % 3 == 0) some.insert(c);
    std::vector<GridCell> expect;
    for (const auto& c : plan.centers)
        if (!some.contains(c)) expect.push_back(c);
    CHECK(dedupe_plan(plan, some).centers == expect);
}

TEST_CASE("plan file round trip is byte-stable") {
    const auto plan = plan_queries(BoundingBox(28.69, 77.09, 28.71, 77.11));
    std::ostringstream a, b;
    write_plan(a, plan);
    write_plan(b, plan_queries(BoundingBox(28.69, 77.09, 28.71, 77.11)));
    CHECK(a.str() == b.str());
    CHECK(a.str().substr(0, a.str().find('\n')) == R"({"lat": 28.69, "lon": 77.09, "zoom": 16, "scale": 2})");
    std::istringstream in(a.str());
    CHECK(read_plan(in).centers == plan.centers);
    std::istringstream bad("{\"lat\": 28.7}\n");
    CHECK_THROWS_AS(read_plan(bad), ParseError);
}

TEST_CASE("region files") {
    std::istringstream box("# Delhi\nbbox 28.4 76.8 28.9 77.4\n");
    const auto r = read_region(box);
    CHECK(r.box.south() == 28.4);
    CHECK(r.box.east() == 77.4);
    CHECK_FALSE(r.polygon.has_value());

    std::istringstream poly("28.0 77.0\n28.0 77.5\n28.5 77.5\n");
    const auto rp = read_region(poly);
    REQUIRE(rp.polygon.has_value());
    CHECK(rp.box.north() == 28.5);
    const auto plan = plan_queries(rp);
    for (const auto& c : plan.centers) CHECK(rp.polygon->contains(c.center()));

    std::istringstream junk("bbox 1 2 3\n");
    CHECK_THROWS_AS(read_region(junk), ParseError);
}

}  // TEST_SUITE
