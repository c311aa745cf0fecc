#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kilnwatch/detection.hpp"
#include "kilnwatch/features.hpp"
#include "kilnwatch/geo.hpp"
#include "kilnwatch/spatial_index.hpp"

namespace kw::compliance {

struct Kiln {
    std::string id;
    GeoPoint location{0.0, 0.0};
};

std::vector<Kiln> kilns_from_detections(const std::vector<detection::KilnDetection>& detections);

enum class RuleKind { pairwise_kiln, point_feature, line_feature, zone_prohibition };
std::string to_string(RuleKind k);
RuleKind parse_rule_kind(const std::string& s);

struct PolicyRule {
    std::string rule_id;
    RuleKind kind = RuleKind::pairwise_kiln;
    std::optional<double> threshold_km;     // absent for zone rules
    std::vector<std::string> feature_classes;  // empty: every feature of the matching geometry
    void validate() const;
};

// CPCB siting guidelines: 1 km spacing, 0.8 km from sensitive sites, 0.5 km from rivers,
// 0.2 km from highways and railways, no kilns in OCS or eco-sensitive zones.
std::vector<PolicyRule> default_rules();
// `[[rule]]` tables with rule_id, kind, threshold_km, feature_class (string or list).
std::vector<PolicyRule> read_rules(std::istream& in);
std::vector<PolicyRule> read_rules_file(const std::filesystem::path& path);

struct Evidence {
    std::string kiln_id;
    std::string offender_id;  // nearest kiln or feature, or the containing zone
    std::optional<double> distance_km;  // absent for zone containment
};

struct ViolationReport {
    std::string rule_id;
    std::vector<std::string> violators;  // ascending kiln id
    std::vector<Evidence> evidence;      // parallel to violators
    bool violates(const std::string& kiln_id) const;
};

// Grid cell size follows the query radius.
GridIndex build_index(const std::vector<GeoPoint>& points, double cell_km = 1.0);

// A kiln violates iff another kiln is strictly closer than threshold_km. Duplicate ids are an error.
ViolationReport pairwise_violations(const std::vector<Kiln>& kilns, double threshold_km = 1.0,
                                    const std::string& rule_id = "kiln_spacing");

// Minimum point-to-segment distance in a local equirectangular frame centred on p.
// Accurate for segments up to roughly 50 km; densify longer ones.
double distance_to_polyline_km(const GeoPoint& p, const std::vector<GeoPoint>& line);

// Point or line rule against the matching geometry in `features` (already class-filtered).
ViolationReport feature_violations(const std::vector<Kiln>& kilns, const features::FeatureSet& features,
                                   const PolicyRule& rule);

// Even-odd containment, boundary inside. Evidence names the smallest containing zone id.
ViolationReport zone_violations(const std::vector<Kiln>& kilns, const features::FeatureSet& zones,
                                const std::string& rule_id = "zone");

// Applies one rule to the features of its geometry type whose class it names.
ViolationReport apply_rule(const std::vector<Kiln>& kilns, const features::FeatureSet& features,
                           const PolicyRule& rule);

struct PopulationCell {
    GeoPoint center{0.0, 0.0};
    double population = 0.0;
};
using PopulationGrid = std::vector<PopulationCell>;

// CSV `lat,lon,population`.
PopulationGrid read_population_grid(std::istream& in);
PopulationGrid read_population_grid_file(const std::filesystem::path& path);

struct ExposureRow {
    double radius_km = 0.0;
    double population = 0.0;
    std::size_t cells = 0;
};

// Population over cells whose centre lies within r (inclusive) of any kiln, each cell once.
std::vector<ExposureRow> population_exposure(const std::vector<Kiln>& kilns, const PopulationGrid& grid,
                                             const std::vector<double>& radii_km);

// --- outputs -------------------------------------------------------------------

void write_report_geojson(std::ostream& out, const std::vector<Kiln>& kilns, const ViolationReport& report,
                          const std::optional<PolicyRule>& rule = std::nullopt);
// rule_id,kind,threshold_km,kilns,violators,percent
void write_summary_csv(std::ostream& out, std::size_t kiln_count, const std::vector<PolicyRule>& rules,
                       const std::vector<ViolationReport>& reports);
// rule_id,kiln_id,offender_id,distance_km
void write_violations_csv(std::ostream& out, const std::vector<ViolationReport>& reports);
// radius_km,population,cells
void write_exposure_csv(std::ostream& out, const std::vector<ExposureRow>& rows);

}  // namespace kw::compliance
