#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kilnwatch/errors.hpp"
#include "kilnwatch/geo.hpp"
#include "kilnwatch/raster.hpp"
#include "kilnwatch/survey.hpp"

namespace kw::ingest {

inline constexpr int kTilePx = 1200;
inline constexpr int kCropPx = 1120;
inline constexpr int kChipPx = 224;
inline constexpr int kChipGrid = 5;
inline constexpr int kChipsPerTile = kChipGrid * kChipGrid;
inline constexpr int kMarginPx = (kTilePx - kCropPx) / 2;

static_assert(kChipGrid * kChipPx == kCropPx);

using Clock = std::chrono::system_clock;

class IngestError : public Error {
public:
    using Error::Error;
};

// No key has daily quota left. `remaining` lists cells that were not attempted.
class QuotaExhaustedError : public IngestError {
public:
    explicit QuotaExhaustedError(std::vector<GridCell> remaining = {})
        : IngestError("daily quota exhausted on every key"), remaining(std::move(remaining)) {}
    std::vector<GridCell> remaining;
};

class TransportError : public IngestError {
public:
    using IngestError::IngestError;
};

class MalformedImageError : public IngestError {
public:
    using IngestError::IngestError;
};

enum class MapType { satellite };

struct TileRequest {
    GridCell cell;
    int zoom = survey::kDefaultZoom;
    int scale = survey::kDefaultScale;
    int width = kTilePx;
    int height = kTilePx;
    MapType maptype = MapType::satellite;

    static TileRequest for_cell(GridCell cell, int zoom = survey::kDefaultZoom, int scale = survey::kDefaultScale);

    GeoPoint center() const { return cell.center(); }
    // center=<lat>,<lon>&zoom=16&size=1200x1200&scale=2&maptype=satellite&key=<k>
    std::string query_string(const std::string& key) const;
};

struct TileImage {
    TileRequest request;
    Raster pixels;
    Clock::time_point fetched_at;
};

struct PixelWindow {
    int top = 0;
    int left = 0;
    int height = kChipPx;
    int width = kChipPx;
    friend bool operator==(const PixelWindow&, const PixelWindow&) = default;
};

struct ChipRef {
    std::string chip_id;
    GridCell tile_cell;
    int row = 0;
    int col = 0;
    GeoPoint center{0.0, 0.0};
    PixelWindow window;
};

struct Chip {
    ChipRef ref;
    Raster pixels;
};

// "28.70_77.10_r2c3"
std::string make_chip_id(const GridCell& cell, int row, int col);
PixelWindow chip_window(int row, int col);
GeoPoint chip_geocenter(const GeoPoint& tile_center, int row, int col, int zoom = survey::kDefaultZoom,
                        int scale = survey::kDefaultScale);
// The 25 chip references of a tile, row-major.
std::vector<ChipRef> chip_refs(const TileRequest& request);
std::vector<Chip> slice_chips(const TileImage& tile);

// --- providers -------------------------------------------------------------

class TileProvider {
public:
    virtual ~TileProvider() = default;
    // Returns the encoded payload (PNG or JPEG). Throws TransportError on failure.
    virtual std::vector<std::uint8_t> fetch(const TileRequest& request, const std::string& key) = 0;
};

// Deterministic synthetic imagery seeded by cell id, with fault injection for tests.
class MockProvider : public TileProvider {
public:
    MockProvider() = default;

    std::vector<std::uint8_t> fetch(const TileRequest& request, const std::string& key) override;

    static Raster render(const GridCell& cell, int width = kTilePx, int height = kTilePx);

    // Every call for these cells fails with TransportError.
    void fail_always(const GridCell& cell);
    // The first `n` calls for this cell fail, later calls succeed.
    void fail_first(const GridCell& cell, int n);
    // Calls for this cell return bytes that are not an image.
    void return_garbage(const GridCell& cell);

    std::size_t calls() const noexcept { return calls_.load(); }
    std::size_t calls_for(const GridCell& cell) const;
    std::map<std::string, std::size_t> calls_per_key() const;

private:
    mutable std::mutex mu_;
    std::atomic<std::size_t> calls_{0};
    std::map<GridCell, std::size_t> per_cell_;
    std::map<std::string, std::size_t> per_key_;
    std::set<GridCell> always_fail_;
    std::map<GridCell, int> fail_budget_;
    std::set<GridCell> garbage_;
};

// HTTP GET `<endpoint>?center=...&key=...` against a GMS-style static imagery endpoint.
class HttpProvider : public TileProvider {
public:
    explicit HttpProvider(std::string endpoint, std::chrono::seconds timeout = std::chrono::seconds(30));
    std::vector<std::uint8_t> fetch(const TileRequest& request, const std::string& key) override;

private:
    std::string scheme_host_;
    std::string path_;
    std::chrono::seconds timeout_;
};

// --- quota and retry -------------------------------------------------------

// Per-key daily call budget. Days roll over at local midnight of the configured UTC offset.
class QuotaLedger {
public:
    using NowFn = std::function<Clock::time_point()>;

    QuotaLedger(std::vector<std::string> keys, std::int64_t daily_quota = survey::kDefaultDailyQuota,
                std::chrono::minutes utc_offset = std::chrono::minutes(0), NowFn now = Clock::now);

    // Claims one call on the first key with budget left; nullopt when all keys are spent.
    std::optional<std::string> acquire();
    std::int64_t remaining(const std::string& key);
    std::int64_t daily_quota() const noexcept { return daily_quota_; }
    const std::vector<std::string>& keys() const noexcept { return keys_; }

private:
    void roll_day();

    std::mutex mu_;
    std::vector<std::string> keys_;
    std::vector<std::int64_t> used_;
    std::int64_t daily_quota_;
    std::chrono::minutes utc_offset_;
    NowFn now_;
    std::int64_t day_ = 0;
};

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};
    double jitter = 0.25;  // backoff multiplied by a uniform factor in [1 - jitter, 1 + jitter]
    std::function<void(std::chrono::milliseconds)> sleep;  // defaults to std::this_thread::sleep_for
};

// --- cache and fetch -------------------------------------------------------

// One PNG per cell: `<root>/tiles/{lat2}_{lon2}_z{zoom}s{scale}.png` plus a `.meta` sidecar
// holding the fetch timestamp.
class TileCache {
public:
    explicit TileCache(std::filesystem::path root);

    const std::filesystem::path& root() const noexcept { return root_; }
    std::filesystem::path relative_path(const TileRequest& request) const;
    std::filesystem::path path(const TileRequest& request) const { return root_ / relative_path(request); }
    bool contains(const TileRequest& request) const;

    std::vector<std::uint8_t> read(const TileRequest& request) const;
    std::optional<Clock::time_point> fetched_at(const TileRequest& request) const;
    // Atomic write (tmp file + rename).
    void write(const TileRequest& request, std::span<const std::uint8_t> png, Clock::time_point fetched_at) const;

private:
    std::filesystem::path root_;
};

class TileFetcher {
public:
    TileFetcher(TileProvider& provider, TileCache& cache, QuotaLedger& quota, RetryPolicy retry = {},
                QuotaLedger::NowFn now = Clock::now);

    // Cache hit: no provider call. Miss: claim quota, call the provider with retries,
    // decode, and write the cache. Raster must be width x height.
    TileImage fetch_tile(const TileRequest& request);

    TileCache& cache() noexcept { return cache_; }
    std::size_t provider_calls() const noexcept { return provider_calls_.load(); }

private:
    TileProvider& provider_;
    TileCache& cache_;
    QuotaLedger& quota_;
    RetryPolicy retry_;
    QuotaLedger::NowFn now_;
    std::atomic<std::size_t> provider_calls_{0};
    std::atomic<std::uint64_t> jitter_state_{0x9e3779b97f4a7c15ULL};
};

// --- manifest and ingest ---------------------------------------------------

struct ManifestRow {
    ChipRef chip;
    int zoom = survey::kDefaultZoom;
    int scale = survey::kDefaultScale;
    std::string image;  // path relative to the manifest's directory
    bool materialized = false;  // image is the chip itself rather than its source tile
    std::string fetched_at;  // ISO-8601 UTC
};

std::string manifest_line(const ManifestRow& row);
ManifestRow parse_manifest_line(const std::string& line);
std::vector<ManifestRow> read_manifest(std::istream& in);
std::vector<ManifestRow> read_manifest_file(const std::filesystem::path& path);

struct IngestOptions {
    int workers = 8;
    bool materialize_chips = false;
};

struct CellFailure {
    GridCell cell;
    std::string reason;
};

struct IngestSummary {
    std::size_t fetched = 0;
    std::size_t skipped = 0;  // already cached
    std::vector<CellFailure> failed;
    std::vector<GridCell> deferred;  // not attempted because quota ran out
    std::size_t manifest_rows = 0;

    bool quota_exhausted() const noexcept { return !deferred.empty(); }
    bool ok() const noexcept { return failed.empty() && deferred.empty(); }
};

// Fetches and slices every plan cell with a worker pool; a single writer emits manifest rows
// in plan order. Per-cell failures are collected, never thrown.
IngestSummary ingest(const survey::QueryPlan& plan, TileFetcher& fetcher, std::ostream& manifest,
                     const IngestOptions& options = {});

std::string format_iso8601(Clock::time_point t);

}  // namespace kw::ingest
