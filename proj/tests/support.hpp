#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "kilnwatch/geo.hpp"

namespace kwtest {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "kw") {
        std::random_device rd;
        path_ = fs::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Point at `km` along `bearing_deg` from p on the sphere.
inline kw::GeoPoint destination(const kw::GeoPoint& p, double km, double bearing_deg) {
    constexpr double d2r = std::numbers::pi / 180.0;
    const double ang = km / kw::kEarthRadiusKm, b = bearing_deg * d2r;
    const double lat1 = p.lat() * d2r, lon1 = p.lon() * d2r;
    const double lat2 = std::asin(std::sin(lat1) * std::cos(ang) + std::cos(lat1) * std::sin(ang) * std::cos(b));
    double lon2 = lon1 + std::atan2(std::sin(b) * std::sin(ang) * std::cos(lat1), std::cos(ang) - std::sin(lat1) * std::sin(lat2));
    double lon = lon2 / d2r;
    while (lon >= 180.0) lon -= 360.0;
    while (lon < -180.0) lon += 360.0;
    return kw::GeoPoint(lat2 / d2r, lon);
}

// Random point within `km` of center (uniform in bearing and distance).
inline kw::GeoPoint scatter(Rng& rng, const kw::GeoPoint& center, double km) {
    return destination(center, uniform(rng, 0.0, km), uniform(rng, 0.0, 360.0));
}

}  // namespace kwtest
