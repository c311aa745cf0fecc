#pragma once

// Serial, direct-formula kernels. Tests compare the indexed/parallel library against these and
// the benchmark measures the speedup; nothing in the CLI links them.

#include <vector>

#include "kilnwatch/compliance.hpp"
#include "kilnwatch/ntxent.hpp"

namespace kw::reference {

// O(n^2) scans. Same report contract as the library versions.
compliance::ViolationReport pairwise_violations(const std::vector<compliance::Kiln>& kilns, double threshold_km,
                                                const std::string& rule_id = "kiln_spacing");
compliance::ViolationReport feature_violations(const std::vector<compliance::Kiln>& kilns,
                                               const features::FeatureSet& fs, const compliance::PolicyRule& rule);
compliance::ViolationReport zone_violations(const std::vector<compliance::Kiln>& kilns,
                                            const features::FeatureSet& zones, const std::string& rule_id = "zone");
std::vector<compliance::ExposureRow> population_exposure(const std::vector<compliance::Kiln>& kilns,
                                                         const compliance::PopulationGrid& grid,
                                                         const std::vector<double>& radii_km);

// Plain crossing-number test written independently of Polygon::contains (boundary points are
// reported as inside via an explicit edge check).
bool ray_cast_contains(const Polygon& poly, const GeoPoint& p);

// Direct formula: no max subtraction, explicit exp/log, single thread.
ssl::NtXentResult nt_xent_loss(const ssl::EmbeddingBatch& batch, ssl::NtXentParams params);

}  // namespace kw::reference
