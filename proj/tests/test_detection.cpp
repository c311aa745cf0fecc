#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "kilnwatch/detection.hpp"
#include "kilnwatch/errors.hpp"
#include "support.hpp"

using namespace kw;
using namespace kw::detection;

namespace {

Prediction pred(std::string id, GeoPoint p, double score = 0.9) { return Prediction{std::move(id), p, score, 0}; }

std::vector<Prediction> random_preds(kwtest::Rng& rng, std::size_t n) {
    std::vector<Prediction> out;
    const GeoPoint c(28.5, 77.2);
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(pred("chip" + std::to_string(i), kwtest::scatter(rng, c, 3.0), kwtest::uniform(rng, 0.0, 1.0)));
    return out;
}

}  // namespace

TEST_SUITE("detection") {

TEST_CASE("predictions csv") {
    std::istringstream ok("chip_id,lat,lon,score\na,28.5,77.1,0.9\n\nb,28.6,77.2,0.1\n");
    const auto p = ingest_predictions(ok);
    REQUIRE(p.size() == 2);
    CHECK(p[1].chip_id == "b");
    CHECK(p[1].line == 4);

    std::istringstream bad("chip_id,lat,lon,score\na,28.5,77.1,0.9\nb,28.6,77.2,1.3\n");
    try {
        ingest_predictions(bad);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    std::istringstream empty("");
    CHECK(ingest_predictions(empty).empty());
    std::istringstream header_only("chip_id,lat,lon,score\n");
    CHECK(ingest_predictions(header_only).empty());
    std::istringstream wrong_header("id,lat,lon,score\n");
    CHECK_THROWS_AS(ingest_predictions(wrong_header), ParseError);
    std::istringstream bad_lat("chip_id,lat,lon,score\na,95,77,0.5\n");
    CHECK_THROWS_AS(ingest_predictions(bad_lat), ParseError);
    std::istringstream text("chip_id,lat,lon,score\na,x,77,0.5\n");
    CHECK_THROWS_AS(ingest_predictions(text), ParseError);
}

TEST_CASE("merge examples") {
    const GeoPoint a(28.5, 77.2);
    const auto near = threshold_and_merge({pred("a", a), pred("b", kwtest::destination(a, 0.150, 90.0))});
    CHECK(near.size() == 1);
    CHECK(near[0].support == std::vector<std::string>{"a", "b"});
    const auto far = threshold_and_merge({pred("a", a), pred("b", kwtest::destination(a, 0.400, 90.0))});
    CHECK(far.size() == 2);

    const auto b = kwtest::destination(a, 0.200, 90.0);
    const auto c = kwtest::destination(b, 0.200, 90.0);
    const auto chain = threshold_and_merge({pred("a", a), pred("b", b), pred("c", c)});
    REQUIRE(chain.size() == 1);
    CHECK(chain[0].support.size() == 3);

    const auto none = threshold_and_merge({pred("a", a), pred("b", kwtest::destination(a, 0.150, 0.0))}, 0.5, 0.0);
    CHECK(none.size() == 2);
}

TEST_CASE("thresholding keeps scores at the threshold") {
    const GeoPoint a(28.5, 77.2);
    const auto d = threshold_and_merge({pred("a", a, 0.5), pred("b", kwtest::destination(a, 5.0, 0.0), 0.49)}, 0.5);
    REQUIRE(d.size() == 1);
    CHECK(d[0].support[0] == "a");
    CHECK(d[0].max_score == 0.5);
    CHECK(d[0].detection_id == "K00001");
    CHECK(threshold_and_merge({}, 0.5).empty());
    CHECK_THROWS_AS(threshold_and_merge({}, 1.5), ValidationError);
    CHECK_THROWS_AS(threshold_and_merge({}, 0.5, -1.0), ValidationError);
}

TEST_CASE("location is the score-weighted centroid") {
    const GeoPoint a(28.5, 77.2), b(28.5, 77.201);
    const auto d = threshold_and_merge({pred("a", a, 0.9), pred("b", b, 0.6)}, 0.5);
    REQUIRE(d.size() == 1);
    CHECK(d[0].location.lon() == doctest::Approx((77.2 * 0.9 + 77.201 * 0.6) / 1.5).epsilon(1e-12));
    CHECK(d[0].max_score == 0.9);
}

TEST_CASE("merge output does not depend on input order") {
    kwtest::Rng rng(17);
    auto p = random_preds(rng, 300);
    const auto base = threshold_and_merge(p, 0.3, 250.0);
    for (int t = 0; t < 5; ++t) {
        std::shuffle(p.begin(), p.end(), rng);
        const auto again = threshold_and_merge(p, 0.3, 250.0);
        REQUIRE(again.size() == base.size());
        for (std::size_t i = 0; i < base.size(); ++i) {
            CHECK(again[i].detection_id == base[i].detection_id);
            CHECK(again[i].support == base[i].support);
            CHECK(again[i].location.lat() == base[i].location.lat());
        }
    }
}

TEST_CASE("detection count is monotone in radius and threshold") {
    kwtest::Rng rng(23);
    for (int t = 0; t < 10; ++t) {
        const auto p = random_preds(rng, 200);
        std::size_t prev = SIZE_MAX;
        for (double r : {0.0, 100.0, 250.0, 500.0, 1000.0}) {
            const auto n = threshold_and_merge(p, 0.5, r).size();
            CHECK(n <= prev);
            prev = n;
        }
        std::size_t chips_prev = SIZE_MAX;
        for (double th : {0.1, 0.3, 0.5, 0.7, 0.9}) {
            std::size_t chips = 0;
            for (const auto& d : threshold_and_merge(p, th, 0.0)) chips += d.support.size();
            CHECK(chips <= chips_prev);
            chips_prev = chips;
        }
    }
}

TEST_CASE("every kept chip lands in exactly one detection") {
    kwtest::Rng rng(29);
    const auto p = random_preds(rng, 400);
    const auto d = threshold_and_merge(p, 0.4, 300.0);
    std::multiset<std::string> seen;
    for (const auto& k : d) seen.insert(k.support.begin(), k.support.end());
    std::size_t kept = 0;
    for (const auto& x : p) {
        if (x.score >= 0.4) {
            ++kept;
            CHECK(seen.count(x.chip_id) == 1);
        }
    }
    CHECK(seen.size() == kept);
}

TEST_CASE("metric examples") {
    CHECK(f1_score(0.94, 0.85) == doctest::Approx(0.8927).epsilon(1e-4));
    const ConfusionCounts c{7277, 1628, 0};
    CHECK(precision(c) == doctest::Approx(0.8172).epsilon(1e-4));
    CHECK(format_percent(precision(c)) == "81.72%");
    CHECK(format_percent(precision({210, 30, 0})) == "87.50%");
    CHECK_THROWS_AS(precision({0, 0, 0}), UndefinedMetricError);
    CHECK_THROWS_AS(recall({0, 0, 0}), UndefinedMetricError);
    CHECK_THROWS_AS(f1_score(0.0, 0.0), UndefinedMetricError);
    CHECK_THROWS_AS(f1_score(1.2, 0.5), ValidationError);
    CHECK(f1({5, 5, 5}) == doctest::Approx(0.5));
}

TEST_CASE("f1 never exceeds the arithmetic mean") {
    kwtest::Rng rng(31);
    for (int t = 0; t < 1000; ++t) {
        const double p = kwtest::uniform(rng, 0.01, 1.0), r = kwtest::uniform(rng, 0.01, 1.0);
        const double f = f1_score(p, r);
        CHECK(f <= (p + r) / 2.0 + 1e-15);
        CHECK(f >= std::min(p, r) - 1e-15);
    }
}

TEST_CASE("district aggregation") {
    const auto rep = aggregate_stats({{"", "A", 1, 0}, {"", "B", 0, 1}});
    CHECK(rep.aggregate_precision == 0.5);
    CHECK(format_percent(rep.aggregate_precision) == "50.00%");
    const auto empty = aggregate_stats({{"", "A", 1, 0}, {"", "Z", 0, 0}});
    CHECK_FALSE(empty.row_precision[1].has_value());
    CHECK_THROWS_AS(aggregate_stats({{"", "Z", 0, 0}}), UndefinedMetricError);

    const auto sums = aggregate_stats(kwtest::district_rows());
    CHECK(sums.rows.size() == 28);
    CHECK(sums.total_tp + sums.total_fp > 0);
}

TEST_CASE("aggregate precision lies between row extremes") {
    kwtest::Rng rng(37);
    for (int t = 0; t < 300; ++t) {
        std::vector<DistrictRow> rows;
        const int n = kwtest::uniform_int(rng, 1, 30);
        for (int i = 0; i < n; ++i)
            rows.push_back({"", "d" + std::to_string(i), kwtest::uniform_int(rng, 0, 600), kwtest::uniform_int(rng, 0, 200)});
        rows[0].tp += 1;
        const auto rep = aggregate_stats(rows);
        double lo = 1.0, hi = 0.0;
        for (const auto& p : rep.row_precision)
            if (p) lo = std::min(lo, *p), hi = std::max(hi, *p);
        CHECK(rep.aggregate_precision >= lo - 1e-15);
        CHECK(rep.aggregate_precision <= hi + 1e-15);
    }
}

TEST_CASE("district csv forms") {
    std::istringstream two("district,tp,fp\nAmritsar,210,30\n");
    const auto a = read_district_counts(two);
    REQUIRE(a.size() == 1);
    CHECK(a[0].tp == 210);
    std::istringstream three("state,district,tp,fp\nPB,Amritsar,210,30\nPB,Ludhiana,321,140\n");
    CHECK(read_district_counts(three).size() == 2);
    std::istringstream neg("district,tp,fp\nX,-1,3\n");
    CHECK_THROWS_AS(read_district_counts(neg), ParseError);
    std::istringstream bad("district,tp,fp\nX,1\n");
    CHECK_THROWS_AS(read_district_counts(bad), ParseError);

    std::ostringstream out;
    write_district_report(out, aggregate_stats(a));
    CHECK(out.str().find("87.50%") != std::string::npos);
}

TEST_CASE("fold summary averages each column") {
    const auto m = fold_summary(kwtest::vanilla_folds());
    CHECK(m.precision == doctest::Approx(0.885));
    CHECK(m.recall == doctest::Approx(0.715));
    CHECK(m.f1 == doctest::Approx(0.7875));
    CHECK_THROWS_AS(fold_summary({}), ValidationError);
}

TEST_CASE("growth examples") {
    auto g = kiln_growth({{"2008", 662}, {"2023", 762}});
    CHECK(format_percent_change(g.total_percent) == "+15.1%");
    CHECK(format_percent_change(kiln_growth({{"2008", 100}, {"2023", 115}}).total_percent) == "+15.0%");
    CHECK(format_percent_change(kiln_growth({{"2008", 100}, {"2023", 100}}).total_percent) == "+0.0%");
    CHECK(format_percent_change(kiln_growth({{"2008", 100}, {"2023", 97}}).total_percent) == "-3.0%");
    CHECK(format_percent_change(-0.01) == "+0.0%");

    g = kiln_growth({{"2008", 10}, {"2015-06", 0}, {"2023-01-01", 5}});
    REQUIRE(g.intervals.size() == 2);
    CHECK(g.intervals[0].delta == -10);
    CHECK_FALSE(g.intervals[1].percent.has_value());
    CHECK_THROWS_AS(kiln_growth({{"2008", 0}, {"2023", 5}}), ValidationError);
    CHECK_THROWS_AS(kiln_growth({{"2023", 5}, {"2008", 6}}), ValidationError);
    CHECK_THROWS_AS(kiln_growth({{"2023", 5}}), ValidationError);
    CHECK_THROWS_AS(kiln_growth({{"last year", 5}, {"2023", 6}}), ValidationError);
}

TEST_CASE("hard negatives come from false positives only") {
    std::vector<KilnDetection> d;
    for (int i = 0; i < 50; ++i) {
        KilnDetection k;
        k.detection_id = "K" + std::to_string(i);
        k.support = {"chip" + std::to_string(i)};
        k.verified = i < 33 ? Verified::false_positive : (i < 40 ? Verified::true_positive : Verified::unreviewed);
        d.push_back(k);
    }
    const auto rows = export_hard_negatives(d);
    CHECK(rows.size() == 33);
    for (const auto& r : rows) {
        CHECK(r.final_label == labels::Label::no_kiln);
        CHECK(r.source == labels::TruthSource::review);
    }
    CHECK(std::is_sorted(rows.begin(), rows.end(), [](auto& a, auto& b) { return a.chip_id < b.chip_id; }));
}

TEST_CASE("detection files round trip") {
    kwtest::Rng rng(41);
    auto d = threshold_and_merge(random_preds(rng, 100), 0.5, 250.0);
    REQUIRE(!d.empty());
    d[0].verified = Verified::false_positive;
    std::stringstream gj, csv;
    write_detections_geojson(gj, d);
    write_detections_csv(csv, d);
    const auto a = read_detections_geojson(gj);
    const auto b = read_detections_csv(csv);
    REQUIRE(a.size() == d.size());
    REQUIRE(b.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(a[i].detection_id == d[i].detection_id);
        CHECK(a[i].support == d[i].support);
        CHECK(b[i].support == d[i].support);
        CHECK(std::abs(a[i].location.lat() - d[i].location.lat()) <= 1e-7);
        CHECK(b[i].verified == d[i].verified);
    }
    CHECK(a[0].verified == Verified::false_positive);
    CHECK(csv.str().rfind("detection_id,lat,lon,max_score,support_count,verified,support\n", 0) == 0);
}

}  // TEST_SUITE
