#include "kilnwatch/tile_ingest.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <ctime>
#include <deque>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <thread>

#include <json.hpp>

namespace kw::ingest {

namespace fs = std::filesystem;

TileRequest TileRequest::for_cell(GridCell cell, int zoom, int scale) {
    (void)ground_resolution_m_per_px(cell.lat2(), zoom, scale);
    TileRequest r;
    r.cell = cell;
    r.zoom = zoom;
    r.scale = scale;
    return r;
}

std::string TileRequest::query_string(const std::string& key) const {
    return "center=" + format_2dp(cell.lat2()) + "," + format_2dp(cell.lon2()) + "&zoom=" + std::to_string(zoom) +
           "&size=" + std::to_string(width) + "x" + std::to_string(height) + "&scale=" + std::to_string(scale) +
           "&maptype=satellite&key=" + key;
}

std::string make_chip_id(const GridCell& cell, int row, int col) {
    return cell.key() + "_r" + std::to_string(row) + "c" + std::to_string(col);
}

PixelWindow chip_window(int row, int col) {
    if (row < 0 || row >= kChipGrid || col < 0 || col >= kChipGrid)
        throw ValidationError("chip row/col must be in [0, 4]");
    return PixelWindow{kMarginPx + row * kChipPx, kMarginPx + col * kChipPx, kChipPx, kChipPx};
}

GeoPoint chip_geocenter(const GeoPoint& tile_center, int row, int col, int zoom, int scale) {
    if (row < 0 || row >= kChipGrid || col < 0 || col >= kChipGrid)
        throw ValidationError("chip row/col must be in [0, 4]");
    const double res = ground_resolution_m_per_px(tile_center.lat(), zoom, scale);
    const double east_m = (col - 2) * kChipPx * res;
    const double north_m = (2 - row) * kChipPx * res;
    const double lat = tile_center.lat() + north_m / kMetersPerDegree;
    double lon = tile_center.lon() +
                 east_m / (kMetersPerDegree * std::cos(tile_center.lat() * std::numbers::pi / 180.0));
    if (lon >= 180.0) lon -= 360.0;
    if (lon < -180.0) lon += 360.0;
    return GeoPoint(std::clamp(lat, -90.0, 90.0), lon);
}

std::vector<ChipRef> chip_refs(const TileRequest& request) {
    std::vector<ChipRef> refs;
    refs.reserve(kChipsPerTile);
    const GeoPoint center = request.center();
    for (int row = 0; row < kChipGrid; ++row) {
        for (int col = 0; col < kChipGrid; ++col) {
            refs.push_back(ChipRef{make_chip_id(request.cell, row, col), request.cell, row, col,
                                   chip_geocenter(center, row, col, request.zoom, request.scale),
                                   chip_window(row, col)});
        }
    }
    return refs;
}

std::vector<Chip> slice_chips(const TileImage& tile) {
    if (tile.pixels.width != kTilePx || tile.pixels.height != kTilePx ||
        tile.pixels.data.size() != static_cast<std::size_t>(kTilePx) * kTilePx * Raster::kChannels)
        throw ValidationError("tile raster must be 1200x1200 RGB");
    auto refs = chip_refs(tile.request);
    std::vector<Chip> chips(refs.size());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < static_cast<int>(refs.size()); ++i) {
        const auto& w = refs[i].window;
        chips[i] = Chip{refs[i], tile.pixels.crop(w.top, w.left, w.height, w.width)};
    }
    return chips;
}

// --- MockProvider ------------------------------------------------------------

namespace {
std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace

Raster MockProvider::render(const GridCell& cell, int width, int height) {
    const std::uint64_t seed = splitmix((static_cast<std::uint64_t>(static_cast<std::uint32_t>(cell.lat_hundredths())) << 32) |
                                        static_cast<std::uint32_t>(cell.lon_hundredths()));
    std::mt19937_64 rng(seed);
    Raster out(width, height);
    const int base_r = 90 + static_cast<int>(rng() % 60);
    const int base_g = 100 + static_cast<int>(rng() % 60);
    const int base_b = 70 + static_cast<int>(rng() % 40);
    // Field-like 8 px blocks with seeded texture; unique per position so stitching bugs show up.
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::uint64_t h = splitmix(seed ^ (static_cast<std::uint64_t>(y / 8) << 20) ^ static_cast<std::uint64_t>(x / 8));
            auto* p = out.px(y, x);
            p[0] = static_cast<std::uint8_t>((base_r + static_cast<int>(h & 31) + x / 40) & 0xff);
            p[1] = static_cast<std::uint8_t>((base_g + static_cast<int>((h >> 8) & 31) + y / 40) & 0xff);
            p[2] = static_cast<std::uint8_t>((base_b + static_cast<int>((h >> 16) & 15) + (x ^ y) % 7) & 0xff);
        }
    }
    // A few oval kiln-like rings.
    const int kilns = static_cast<int>(rng() % 3);
    for (int k = 0; k < kilns; ++k) {
        const int cy = 60 + static_cast<int>(rng() % static_cast<std::uint64_t>(std::max(1, height - 120)));
        const int cx = 60 + static_cast<int>(rng() % static_cast<std::uint64_t>(std::max(1, width - 120)));
        for (int y = std::max(0, cy - 30); y < std::min(height, cy + 30); ++y) {
            for (int x = std::max(0, cx - 45); x < std::min(width, cx + 45); ++x) {
                const double e = std::pow((x - cx) / 45.0, 2) + std::pow((y - cy) / 30.0, 2);
                if (e > 0.55 && e < 1.0) {
                    auto* p = out.px(y, x);
                    p[0] = 150;
                    p[1] = 70;
                    p[2] = 50;
                }
            }
        }
    }
    return out;
}

std::vector<std::uint8_t> MockProvider::fetch(const TileRequest& request, const std::string& key) {
    bool fail = false;
    bool garbage = false;
    {
        std::lock_guard lock(mu_);
        ++calls_;
        ++per_cell_[request.cell];
        ++per_key_[key];
        if (always_fail_.contains(request.cell)) {
            fail = true;
        } else if (auto it = fail_budget_.find(request.cell); it != fail_budget_.end() && it->second > 0) {
            --it->second;
            fail = true;
        }
        garbage = garbage_.contains(request.cell);
    }
    if (fail) throw TransportError("mock transport failure for " + request.cell.key());
    if (garbage) return {'n', 'o', 't', ' ', 'a', 'n', ' ', 'i', 'm', 'a', 'g', 'e'};
    return encode_png(render(request.cell, request.width, request.height));
}

void MockProvider::fail_always(const GridCell& cell) {
    std::lock_guard lock(mu_);
    always_fail_.insert(cell);
}

void MockProvider::fail_first(const GridCell& cell, int n) {
    std::lock_guard lock(mu_);
    fail_budget_[cell] = n;
}

void MockProvider::return_garbage(const GridCell& cell) {
    std::lock_guard lock(mu_);
    garbage_.insert(cell);
}

std::size_t MockProvider::calls_for(const GridCell& cell) const {
    std::lock_guard lock(mu_);
    auto it = per_cell_.find(cell);
    return it == per_cell_.end() ? 0 : it->second;
}

std::map<std::string, std::size_t> MockProvider::calls_per_key() const {
    std::lock_guard lock(mu_);
    return per_key_;
}

// --- QuotaLedger -------------------------------------------------------------

QuotaLedger::QuotaLedger(std::vector<std::string> keys, std::int64_t daily_quota, std::chrono::minutes utc_offset,
                         NowFn now)
    : keys_(std::move(keys)), used_(keys_.size(), 0), daily_quota_(daily_quota), utc_offset_(utc_offset),
      now_(std::move(now)) {
    if (keys_.empty()) throw ValidationError("at least one API key is required");
    if (daily_quota_ < 1) throw ValidationError("daily quota must be >= 1");
    day_ = std::chrono::floor<std::chrono::days>(now_() + utc_offset_).time_since_epoch().count();
}

void QuotaLedger::roll_day() {
    const auto day = std::chrono::floor<std::chrono::days>(now_() + utc_offset_).time_since_epoch().count();
    if (day != day_) {
        day_ = day;
        std::fill(used_.begin(), used_.end(), 0);
    }
}

std::optional<std::string> QuotaLedger::acquire() {
    std::lock_guard lock(mu_);
    roll_day();
    for (std::size_t i = 0; i < keys_.size(); ++i) {
        if (used_[i] < daily_quota_) {
            ++used_[i];
            return keys_[i];
        }
    }
    return std::nullopt;
}

std::int64_t QuotaLedger::remaining(const std::string& key) {
    std::lock_guard lock(mu_);
    roll_day();
    for (std::size_t i = 0; i < keys_.size(); ++i)
        if (keys_[i] == key) return daily_quota_ - used_[i];
    throw ValidationError("unknown API key");
}

// --- TileCache ---------------------------------------------------------------

TileCache::TileCache(fs::path root) : root_(std::move(root)) { fs::create_directories(root_ / "tiles"); }

fs::path TileCache::relative_path(const TileRequest& r) const {
    return fs::path("tiles") /
           (r.cell.key() + "_z" + std::to_string(r.zoom) + "s" + std::to_string(r.scale) + ".png");
}

bool TileCache::contains(const TileRequest& request) const { return fs::exists(path(request)); }

std::vector<std::uint8_t> TileCache::read(const TileRequest& request) const {
    std::ifstream in(path(request), std::ios::binary);
    if (!in) throw IoError("cannot read cached tile " + path(request).string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::optional<Clock::time_point> TileCache::fetched_at(const TileRequest& request) const {
    std::ifstream in(path(request).string() + ".meta");
    long long secs = 0;
    if (!(in >> secs)) return std::nullopt;
    return Clock::time_point(std::chrono::seconds(secs));
}

void TileCache::write(const TileRequest& request, std::span<const std::uint8_t> png, Clock::time_point fetched_at) const {
    const fs::path target = path(request);
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
        if (!out) throw IoError("short write " + tmp.string());
    }
    {
        std::ofstream meta(target.string() + ".meta", std::ios::trunc);
        meta << std::chrono::duration_cast<std::chrono::seconds>(fetched_at.time_since_epoch()).count() << "\n";
    }
    fs::rename(tmp, target);
}

// --- TileFetcher -------------------------------------------------------------

TileFetcher::TileFetcher(TileProvider& provider, TileCache& cache, QuotaLedger& quota, RetryPolicy retry,
                         QuotaLedger::NowFn now)
    : provider_(provider), cache_(cache), quota_(quota), retry_(std::move(retry)), now_(std::move(now)) {
    if (retry_.attempts < 1) throw ValidationError("retry attempts must be >= 1");
    if (!retry_.sleep) retry_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

TileImage TileFetcher::fetch_tile(const TileRequest& request) {
    if (cache_.contains(request)) {
        auto bytes = cache_.read(request);
        TileImage img{request, decode_image(bytes), cache_.fetched_at(request).value_or(Clock::time_point{})};
        return img;
    }

    std::vector<std::uint8_t> payload;
    std::string last_error;
    bool ok = false;
    for (int attempt = 0; attempt < retry_.attempts && !ok; ++attempt) {
        if (attempt > 0) {
            const std::uint64_t r = splitmix(jitter_state_.fetch_add(1));
            const double unit = static_cast<double>(r >> 11) / static_cast<double>(1ULL << 53);
            const double factor = 1.0 + retry_.jitter * (2.0 * unit - 1.0);
            const auto base = retry_.initial_backoff * (1LL << (attempt - 1));
            retry_.sleep(std::chrono::milliseconds(static_cast<long long>(base.count() * factor)));
        }
        auto key = quota_.acquire();
        if (!key) throw QuotaExhaustedError({request.cell});
        ++provider_calls_;
        try {
            payload = provider_.fetch(request, *key);
            ok = true;
        } catch (const TransportError& e) {
            last_error = e.what();
        }
    }
    if (!ok) {
        throw TransportError("giving up on " + request.cell.key() + " after " + std::to_string(retry_.attempts) +
                             " attempts: " + last_error);
    }

    Raster pixels = decode_image(payload);
    if (pixels.width != request.width || pixels.height != request.height)
        throw MalformedImageError("provider returned " + std::to_string(pixels.width) + "x" +
                                  std::to_string(pixels.height) + " for " + request.cell.key());
    const auto fetched_at = now_();
    if (sniff_format(payload) == ImageFormat::png) {
        cache_.write(request, payload, fetched_at);
    } else {
        cache_.write(request, encode_png(pixels), fetched_at);
    }
    return TileImage{request, std::move(pixels), fetched_at};
}

// --- manifest ----------------------------------------------------------------

namespace {
double round6(double v) { return std::round(v * 1e6) / 1e6; }
}  // namespace

std::string format_iso8601(Clock::time_point t) {
    const std::time_t tt = Clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string manifest_line(const ManifestRow& row) {
    nlohmann::ordered_json j;
    const auto& c = row.chip;
    j["chip_id"] = c.chip_id;
    j["tile_lat"] = c.tile_cell.lat2();
    j["tile_lon"] = c.tile_cell.lon2();
    j["zoom"] = row.zoom;
    j["scale"] = row.scale;
    j["row"] = c.row;
    j["col"] = c.col;
    j["lat"] = round6(c.center.lat());
    j["lon"] = round6(c.center.lon());
    j["pixel_window"] = {c.window.top, c.window.left, c.window.height, c.window.width};
    j["image"] = row.image;
    j["materialized"] = row.materialized;
    j["fetched_at"] = row.fetched_at;
    return j.dump();
}

namespace {
ManifestRow manifest_row(const nlohmann::json& j) {
    ManifestRow row;
    row.chip.chip_id = j.at("chip_id").get<std::string>();
    row.chip.tile_cell =
        snap_to_centigrid(GeoPoint(j.at("tile_lat").get<double>(), j.at("tile_lon").get<double>()));
    row.zoom = j.value("zoom", survey::kDefaultZoom);
    row.scale = j.value("scale", survey::kDefaultScale);
    row.chip.row = j.at("row").get<int>();
    row.chip.col = j.at("col").get<int>();
    row.chip.center = GeoPoint(j.at("lat").get<double>(), j.at("lon").get<double>());
    const auto& w = j.at("pixel_window");
    row.chip.window = PixelWindow{w.at(0).get<int>(), w.at(1).get<int>(), w.at(2).get<int>(), w.at(3).get<int>()};
    row.image = j.at("image").get<std::string>();
    row.materialized = j.value("materialized", false);
    row.fetched_at = j.value("fetched_at", std::string{});
    return row;
}
}  // namespace

ManifestRow parse_manifest_line(const std::string& line) {
    try {
        return manifest_row(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad manifest row: ") + e.what());
    } catch (const ValidationError& e) {
        throw ParseError(std::string("bad manifest row: ") + e.what());
    }
}

std::vector<ManifestRow> read_manifest(std::istream& in) {
    std::vector<ManifestRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(parse_manifest_line(line));
        } catch (const ParseError& e) {
            throw ParseError(e.what(), line_no);
        } catch (const ValidationError& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return rows;
}

std::vector<ManifestRow> read_manifest_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return read_manifest(in);
}

// --- ingest ------------------------------------------------------------------

namespace {

enum class CellOutcome { fetched, skipped, failed, deferred };

struct CellResult {
    std::size_t index = 0;
    CellOutcome outcome = CellOutcome::failed;
    std::vector<std::string> lines;
    std::string reason;
};

// Single-consumer queue feeding the manifest writer.
class ResultQueue {
public:
    void push(CellResult r) {
        {
            std::lock_guard lock(mu_);
            items_.push_back(std::move(r));
        }
        cv_.notify_one();
    }
    std::optional<CellResult> pop() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        CellResult r = std::move(items_.front());
        items_.pop_front();
        return r;
    }
    void close() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<CellResult> items_;
    bool closed_ = false;
};

std::vector<std::string> rows_for(const TileRequest& request, const TileCache& cache, Clock::time_point fetched_at,
                                  const std::optional<TileImage>& tile, bool materialize) {
    std::vector<std::string> lines;
    const std::string tile_path = cache.relative_path(request).generic_string();
    const std::string stamp = format_iso8601(fetched_at);
    if (materialize && tile) {
        fs::create_directories(cache.root() / "chips");
        for (auto& chip : slice_chips(*tile)) {
            const fs::path rel = fs::path("chips") / (chip.ref.chip_id + ".png");
            const auto bytes = encode_png(chip.pixels);
            std::ofstream out(cache.root() / rel, std::ios::binary | std::ios::trunc);
            out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
            lines.push_back(
                manifest_line(ManifestRow{chip.ref, request.zoom, request.scale, rel.generic_string(), true, stamp}));
        }
    } else {
        for (auto& ref : chip_refs(request))
            lines.push_back(manifest_line(ManifestRow{ref, request.zoom, request.scale, tile_path, false, stamp}));
    }
    return lines;
}

}  // namespace

IngestSummary ingest(const survey::QueryPlan& plan, TileFetcher& fetcher, std::ostream& manifest,
                     const IngestOptions& options) {
    const std::size_t n = plan.centers.size();
    const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(std::max<std::size_t>(n, 1))));
    std::atomic<std::size_t> next{0};
    std::atomic<bool> quota_out{false};
    ResultQueue queue;

    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            CellResult res;
            res.index = i;
            const auto request = TileRequest::for_cell(plan.centers[i], plan.zoom, plan.scale);
            try {
                if (fetcher.cache().contains(request)) {
                    std::optional<TileImage> tile;
                    if (options.materialize_chips) tile = fetcher.fetch_tile(request);
                    const auto at = fetcher.cache().fetched_at(request).value_or(Clock::time_point{});
                    res.lines = rows_for(request, fetcher.cache(), at, tile, options.materialize_chips);
                    res.outcome = CellOutcome::skipped;
                } else if (quota_out.load()) {
                    res.outcome = CellOutcome::deferred;
                } else {
                    auto tile = fetcher.fetch_tile(request);
                    auto at = tile.fetched_at;
                    res.lines = rows_for(request, fetcher.cache(), at, std::optional<TileImage>(std::move(tile)),
                                         options.materialize_chips);
                    res.outcome = CellOutcome::fetched;
                }
            } catch (const QuotaExhaustedError&) {
                quota_out = true;
                res.outcome = CellOutcome::deferred;
            } catch (const std::exception& e) {
                res.outcome = CellOutcome::failed;
                res.reason = e.what();
            }
            queue.push(std::move(res));
        }
    };

    IngestSummary summary;
    std::thread writer([&] {
        std::map<std::size_t, CellResult> pending;
        std::size_t emit = 0;
        while (auto r = queue.pop()) {
            pending.emplace(r->index, std::move(*r));
            for (auto it = pending.find(emit); it != pending.end(); it = pending.find(emit)) {
                CellResult& cell = it->second;
                for (const auto& line : cell.lines) manifest << line << '\n';
                summary.manifest_rows += cell.lines.size();
                switch (cell.outcome) {
                    case CellOutcome::fetched: ++summary.fetched; break;
                    case CellOutcome::skipped: ++summary.skipped; break;
                    case CellOutcome::failed: summary.failed.push_back({plan.centers[cell.index], cell.reason}); break;
                    case CellOutcome::deferred: summary.deferred.push_back(plan.centers[cell.index]); break;
                }
                pending.erase(it);
                ++emit;
            }
        }
        manifest.flush();
    });

    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    queue.close();
    writer.join();
    return summary;
}

}  // namespace kw::ingest
