#include "kilnwatch/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <regex>

#include <json.hpp>

#include "csv_util.hpp"
#include "kilnwatch/spatial_index.hpp"

namespace kw::detection {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(Verified v) {
    switch (v) {
        case Verified::unreviewed: return "unreviewed";
        case Verified::true_positive: return "true_positive";
        case Verified::false_positive: return "false_positive";
    }
    return "unreviewed";
}

Verified parse_verified(const std::string& s) {
    if (s == "unreviewed" || s.empty()) return Verified::unreviewed;
    if (s == "true_positive") return Verified::true_positive;
    if (s == "false_positive") return Verified::false_positive;
    throw ValidationError("verified must be unreviewed, true_positive or false_positive, got `" + s + "`");
}

std::vector<Prediction> ingest_predictions(std::istream& in) {
    std::vector<Prediction> out;
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (csv::blank(line)) continue;
        auto cols = csv::split(line);
        if (!header) {
            if (cols != std::vector<std::string>{"chip_id", "lat", "lon", "score"})
                throw ParseError("predictions header must be chip_id,lat,lon,score", line_no);
            header = true;
            continue;
        }
        if (cols.size() != 4) throw ParseError("expected 4 columns, got " + std::to_string(cols.size()), line_no);
        if (cols[0].empty()) throw ParseError("empty chip_id", line_no);
        const double lat = csv::to_double(cols[1], line_no, "lat");
        const double lon = csv::to_double(cols[2], line_no, "lon");
        const double score = csv::to_double(cols[3], line_no, "score");
        if (!(score >= 0.0 && score <= 1.0)) throw ParseError("score " + cols[3] + " outside [0, 1]", line_no);
        try {
            out.push_back(Prediction{cols[0], GeoPoint(lat, lon), score, line_no});
        } catch (const ValidationError& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return out;
}

std::vector<Prediction> ingest_predictions_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return ingest_predictions(in);
}

namespace {

struct DisjointSets {
    std::vector<std::uint32_t> parent;
    explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0U); }
    std::uint32_t find(std::uint32_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        // Smaller root wins so the representative is the cluster's smallest chip id.
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace

std::vector<KilnDetection> threshold_and_merge(const std::vector<Prediction>& preds, double threshold,
                                               double merge_radius_m) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("threshold must be in [0, 1]");
    if (!(merge_radius_m >= 0.0) || !std::isfinite(merge_radius_m)) throw ValidationError("merge radius must be >= 0");

    std::vector<const Prediction*> kept;
    for (const auto& p : preds)
        if (p.score >= threshold) kept.push_back(&p);
    std::sort(kept.begin(), kept.end(), [](const Prediction* a, const Prediction* b) {
        return std::tie(a->chip_id, a->score) < std::tie(b->chip_id, b->score);
    });

    const double radius_km = merge_radius_m / 1000.0;
    DisjointSets sets(kept.size());
    if (radius_km > 0.0 && kept.size() > 1) {
        std::vector<GeoPoint> pts;
        pts.reserve(kept.size());
        for (auto* p : kept) pts.push_back(p->center);
        GridIndex index(std::move(pts), std::max(radius_km, 1e-3));
        for (std::uint32_t i = 0; i < kept.size(); ++i) {
            index.for_each_within(kept[i]->center, radius_km, [&](std::uint32_t j, double d) {
                if (j > i && d < radius_km) sets.unite(i, j);
            });
        }
    }

    std::vector<std::vector<std::uint32_t>> members(kept.size());
    for (std::uint32_t i = 0; i < kept.size(); ++i) members[sets.find(i)].push_back(i);

    std::vector<KilnDetection> out;
    for (std::uint32_t root = 0; root < kept.size(); ++root) {
        if (members[root].empty()) continue;
        KilnDetection det;
        double w_sum = 0.0, lat = 0.0, lon = 0.0, lat_u = 0.0, lon_u = 0.0;
        for (auto i : members[root]) {
            const auto* p = kept[i];
            det.support.push_back(p->chip_id);
            det.max_score = std::max(det.max_score, p->score);
            w_sum += p->score;
            lat += p->score * p->center.lat();
            lon += p->score * p->center.lon();
            lat_u += p->center.lat();
            lon_u += p->center.lon();
        }
        const double n = static_cast<double>(members[root].size());
        det.location = w_sum > 0.0 ? GeoPoint(lat / w_sum, lon / w_sum) : GeoPoint(lat_u / n, lon_u / n);
        char id[32];
        std::snprintf(id, sizeof id, "K%05zu", out.size() + 1);
        det.detection_id = id;
        out.push_back(std::move(det));
    }
    return out;
}

// --- metrics -----------------------------------------------------------------

namespace {
void check_counts(const ConfusionCounts& c) {
    if (c.tp < 0 || c.fp < 0 || c.fn < 0) throw ValidationError("confusion counts must be non-negative");
}
}  // namespace

double precision(const ConfusionCounts& c) {
    check_counts(c);
    if (c.tp + c.fp == 0) throw UndefinedMetricError("precision undefined: TP + FP = 0");
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall(const ConfusionCounts& c) {
    check_counts(c);
    if (c.tp + c.fn == 0) throw UndefinedMetricError("recall undefined: TP + FN = 0");
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double f1_score(double p, double r) {
    if (!(p >= 0.0 && p <= 1.0) || !(r >= 0.0 && r <= 1.0)) throw ValidationError("precision/recall must be in [0, 1]");
    if (p + r == 0.0) throw UndefinedMetricError("F1 undefined: precision + recall = 0");
    return 2.0 * p * r / (p + r);
}

double f1(const ConfusionCounts& c) { return f1_score(precision(c), recall(c)); }

DistrictReport aggregate_stats(const std::vector<DistrictRow>& rows) {
    DistrictReport rep;
    rep.rows = rows;
    for (const auto& r : rows) {
        if (r.tp < 0 || r.fp < 0) throw ValidationError("district counts must be non-negative");
        rep.total_tp += r.tp;
        rep.total_fp += r.fp;
        rep.row_precision.push_back(r.tp + r.fp > 0 ? std::optional(precision({r.tp, r.fp, 0})) : std::nullopt);
    }
    if (rep.total_tp + rep.total_fp == 0) throw UndefinedMetricError("aggregate precision undefined: all counts are 0");
    rep.aggregate_precision = precision({rep.total_tp, rep.total_fp, 0});
    return rep;
}

std::vector<DistrictRow> read_district_counts(std::istream& in) {
    std::vector<DistrictRow> rows;
    std::string line;
    std::size_t line_no = 0;
    bool has_state = false, header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (csv::blank(line)) continue;
        auto cols = csv::split(line);
        if (!header) {
            if (cols == std::vector<std::string>{"state", "district", "tp", "fp"}) has_state = true;
            else if (cols != std::vector<std::string>{"district", "tp", "fp"})
                throw ParseError("header must be district,tp,fp or state,district,tp,fp", line_no);
            header = true;
            continue;
        }
        const std::size_t want = has_state ? 4 : 3;
        if (cols.size() != want) throw ParseError("expected " + std::to_string(want) + " columns", line_no);
        DistrictRow r;
        std::size_t c = 0;
        if (has_state) r.state = cols[c++];
        r.district = cols[c++];
        r.tp = csv::to_int(cols[c++], line_no, "tp");
        r.fp = csv::to_int(cols[c++], line_no, "fp");
        if (r.tp < 0 || r.fp < 0) throw ParseError("negative count", line_no);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string format_percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", fraction * 100.0);
    return buf;
}

void write_district_report(std::ostream& out, const DistrictReport& rep) {
    out << "state,district,tp,fp,precision\n";
    for (std::size_t i = 0; i < rep.rows.size(); ++i) {
        const auto& r = rep.rows[i];
        out << r.state << ',' << r.district << ',' << r.tp << ',' << r.fp << ','
            << (rep.row_precision[i] ? format_percent(*rep.row_precision[i]) : std::string("n/a")) << '\n';
    }
    out << ",Aggregate," << rep.total_tp << ',' << rep.total_fp << ',' << format_percent(rep.aggregate_precision)
        << '\n';
}

FoldMetrics fold_summary(const std::vector<FoldMetrics>& folds) {
    if (folds.empty()) throw ValidationError("fold summary needs at least one fold");
    FoldMetrics m;
    for (const auto& f : folds) {
        m.precision += f.precision;
        m.recall += f.recall;
        m.f1 += f.f1;
    }
    const double n = static_cast<double>(folds.size());
    return {m.precision / n, m.recall / n, m.f1 / n};
}

GrowthReport kiln_growth(const std::vector<Snapshot>& snapshots) {
    if (snapshots.size() < 2) throw ValidationError("growth needs at least 2 snapshots");
    static const std::regex kDate(R"(\d{4}(-\d{2}(-\d{2})?)?)");
    for (std::size_t i = 0; i < snapshots.size(); ++i) {
        if (!std::regex_match(snapshots[i].date, kDate))
            throw ValidationError("snapshot date `" + snapshots[i].date + "` is not YYYY[-MM[-DD]]");
        if (snapshots[i].count < 0) throw ValidationError("snapshot counts must be >= 0");
        if (i > 0 && !(snapshots[i - 1].date < snapshots[i].date))
            throw ValidationError("snapshot dates must be strictly increasing");
    }
    if (snapshots.front().count == 0) throw ValidationError("growth undefined: first snapshot count is 0");
    GrowthReport rep;
    rep.total_percent = 100.0 * static_cast<double>(snapshots.back().count - snapshots.front().count) /
                        static_cast<double>(snapshots.front().count);
    for (std::size_t i = 1; i < snapshots.size(); ++i) {
        GrowthInterval g;
        g.from = snapshots[i - 1].date;
        g.to = snapshots[i].date;
        g.delta = snapshots[i].count - snapshots[i - 1].count;
        if (snapshots[i - 1].count > 0)
            g.percent = 100.0 * static_cast<double>(g.delta) / static_cast<double>(snapshots[i - 1].count);
        rep.intervals.push_back(g);
    }
    return rep;
}

std::string format_percent_change(double percent) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.1f%%", percent);
    std::string s = buf;
    if (s == "-0.0%") s = "+0.0%";
    return s;
}

std::vector<labels::GroundTruthRow> export_hard_negatives(const std::vector<KilnDetection>& detections) {
    std::vector<labels::GroundTruthRow> rows;
    for (const auto& d : detections) {
        if (d.verified != Verified::false_positive) continue;
        for (const auto& chip : d.support) rows.push_back({chip, labels::Label::no_kiln, labels::TruthSource::review});
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.chip_id < b.chip_id; });
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    return rows;
}

// --- files -----------------------------------------------------------------------

namespace {
double round7(double v) { return std::round(v * 1e7) / 1e7; }
}  // namespace

void write_detections_geojson(std::ostream& out, const std::vector<KilnDetection>& detections) {
    ordered_json fc;
    fc["type"] = "FeatureCollection";
    auto& features = fc["features"] = ordered_json::array();
    for (const auto& d : detections) {
        ordered_json f;
        f["type"] = "Feature";
        f["geometry"] = {{"type", "Point"}, {"coordinates", {round7(d.location.lon()), round7(d.location.lat())}}};
        f["properties"] = {{"detection_id", d.detection_id},
                           {"max_score", d.max_score},
                           {"support_count", d.support.size()},
                           {"verified", to_string(d.verified)},
                           {"support", d.support}};
        features.push_back(std::move(f));
    }
    out << fc.dump(1) << '\n';
}

void write_detections_csv(std::ostream& out, const std::vector<KilnDetection>& detections) {
    out << "detection_id,lat,lon,max_score,support_count,verified,support\n";
    char buf[64];
    for (const auto& d : detections) {
        std::snprintf(buf, sizeof buf, "%.7f,%.7f,%.6f", d.location.lat(), d.location.lon(), d.max_score);
        out << d.detection_id << ',' << buf << ',' << d.support.size() << ',' << to_string(d.verified) << ',';
        for (std::size_t i = 0; i < d.support.size(); ++i) out << (i ? ";" : "") << d.support[i];
        out << '\n';
    }
}

std::vector<KilnDetection> read_detections_geojson(std::istream& in) {
    std::vector<KilnDetection> out;
    json fc;
    try {
        fc = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(std::string("detections GeoJSON: ") + e.what());
    }
    std::size_t n = 0;
    for (const auto& f : fc.at("features")) {
        ++n;
        try {
            const auto& g = f.at("geometry");
            if (g.at("type").get<std::string>() != "Point") throw ParseError("detection feature must be a Point", n);
            KilnDetection d;
            d.location = GeoPoint(g.at("coordinates").at(1).get<double>(), g.at("coordinates").at(0).get<double>());
            const auto props = f.value("properties", json::object());
            if (props.contains("detection_id")) d.detection_id = props["detection_id"].get<std::string>();
            else if (props.contains("id")) d.detection_id = props["id"].dump();
            else d.detection_id = "K" + std::to_string(n);
            if (d.detection_id.size() > 1 && d.detection_id.front() == '"')
                d.detection_id = d.detection_id.substr(1, d.detection_id.size() - 2);
            d.max_score = props.value("max_score", 1.0);
            d.verified = parse_verified(props.value("verified", std::string("unreviewed")));
            if (props.contains("support")) d.support = props["support"].get<std::vector<std::string>>();
            out.push_back(std::move(d));
        } catch (const json::exception& e) {
            throw ParseError(std::string("bad detection feature: ") + e.what(), n);
        } catch (const ParseError&) {
            throw;
        } catch (const ValidationError& e) {
            throw ParseError(e.what(), n);
        }
    }
    return out;
}

std::vector<KilnDetection> read_detections_csv(std::istream& in) {
    std::vector<KilnDetection> out;
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    auto col = [&](const std::string& name) -> int {
        auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    };
    int c_id = -1, c_lat = -1, c_lon = -1, c_score = -1, c_ver = -1, c_sup = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (csv::blank(line)) continue;
        auto cols = csv::split(line);
        if (header.empty()) {
            header = cols;
            c_id = col("detection_id") >= 0 ? col("detection_id") : col("id");
            c_lat = col("lat");
            c_lon = col("lon");
            c_score = col("max_score");
            c_ver = col("verified");
            c_sup = col("support");
            if (c_id < 0 || c_lat < 0 || c_lon < 0) throw ParseError("kilns CSV needs detection_id (or id), lat, lon", line_no);
            continue;
        }
        if (cols.size() != header.size()) throw ParseError("column count mismatch", line_no);
        KilnDetection d;
        d.detection_id = cols[c_id];
        try {
            d.location = GeoPoint(csv::to_double(cols[c_lat], line_no, "lat"), csv::to_double(cols[c_lon], line_no, "lon"));
            d.max_score = c_score >= 0 ? csv::to_double(cols[c_score], line_no, "max_score") : 1.0;
            d.verified = c_ver >= 0 ? parse_verified(cols[c_ver]) : Verified::unreviewed;
        } catch (const ParseError&) {
            throw;
        } catch (const ValidationError& e) {
            throw ParseError(e.what(), line_no);
        }
        if (c_sup >= 0 && !cols[c_sup].empty()) {
            std::string s = cols[c_sup];
            std::size_t pos = 0;
            while (pos <= s.size()) {
                auto next = s.find(';', pos);
                d.support.push_back(s.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
                if (next == std::string::npos) break;
                pos = next + 1;
            }
        }
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<KilnDetection> read_detections_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    const auto ext = path.extension().string();
    if (ext == ".csv") return read_detections_csv(in);
    return read_detections_geojson(in);
}

}  // namespace kw::detection
