#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kilnwatch/errors.hpp"
#include "kilnwatch/geo.hpp"
#include "kilnwatch/label_store.hpp"

namespace kw::detection {

inline constexpr double kDefaultThreshold = 0.5;
inline constexpr double kDefaultMergeRadiusM = 250.0;

struct Prediction {
    std::string chip_id;
    GeoPoint center{0.0, 0.0};
    double score = 0.0;
    std::size_t line = 0;  // 1-based source line
};

enum class Verified { unreviewed, true_positive, false_positive };
std::string to_string(Verified v);
Verified parse_verified(const std::string& s);

struct KilnDetection {
    std::string detection_id;
    GeoPoint location{0.0, 0.0};       // score-weighted centroid of the support chips
    std::vector<std::string> support;  // sorted chip ids
    double max_score = 0.0;
    Verified verified = Verified::unreviewed;
};

// CSV with header `chip_id,lat,lon,score`. Errors carry the line number.
std::vector<Prediction> ingest_predictions(std::istream& in);
std::vector<Prediction> ingest_predictions_file(const std::filesystem::path& path);

// Keeps score >= threshold, then single-link clusters chips whose centers are strictly closer
// than merge_radius_m. Output ordering and ids depend only on the set of inputs.
std::vector<KilnDetection> threshold_and_merge(const std::vector<Prediction>& preds,
                                               double threshold = kDefaultThreshold,
                                               double merge_radius_m = kDefaultMergeRadiusM);

// --- metrics -----------------------------------------------------------------

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
};

class UndefinedMetricError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);
double f1(const ConfusionCounts& c);
// Harmonic mean of precision and recall values; undefined when both are 0.
double f1_score(double precision, double recall);

struct DistrictRow {
    std::string state;
    std::string district;
    std::int64_t tp = 0;
    std::int64_t fp = 0;
};

struct DistrictReport {
    std::vector<DistrictRow> rows;
    std::vector<std::optional<double>> row_precision;  // nullopt when tp + fp == 0
    std::int64_t total_tp = 0;
    std::int64_t total_fp = 0;
    double aggregate_precision = 0.0;  // sum(tp) / (sum(tp) + sum(fp))
};

DistrictReport aggregate_stats(const std::vector<DistrictRow>& rows);
// CSV `district,tp,fp` or `state,district,tp,fp`.
std::vector<DistrictRow> read_district_counts(std::istream& in);
void write_district_report(std::ostream& out, const DistrictReport& report);

struct FoldMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};
FoldMetrics fold_summary(const std::vector<FoldMetrics>& folds);

struct Snapshot {
    std::string date;  // ISO-8601 date or year; compared lexicographically
    std::int64_t count = 0;
};

struct GrowthInterval {
    std::string from;
    std::string to;
    std::int64_t delta = 0;
    std::optional<double> percent;  // nullopt when the interval starts at 0
};

struct GrowthReport {
    double total_percent = 0.0;  // (last - first) / first * 100
    std::vector<GrowthInterval> intervals;
};

GrowthReport kiln_growth(const std::vector<Snapshot>& snapshots);
// "+15.1%", "-3.0%", "+0.0%"
std::string format_percent_change(double percent);
// "81.72%"
std::string format_percent(double fraction);

// Ground-truth rows (label no_kiln, source review) for every support chip of a false positive.
std::vector<labels::GroundTruthRow> export_hard_negatives(const std::vector<KilnDetection>& detections);

// --- detection files -----------------------------------------------------------

void write_detections_geojson(std::ostream& out, const std::vector<KilnDetection>& detections);
void write_detections_csv(std::ostream& out, const std::vector<KilnDetection>& detections);
std::vector<KilnDetection> read_detections_geojson(std::istream& in);
std::vector<KilnDetection> read_detections_csv(std::istream& in);
// Dispatches on extension: .geojson/.json vs .csv.
std::vector<KilnDetection> read_detections_file(const std::filesystem::path& path);

}  // namespace kw::detection
