#include "kilnwatch/run_manifest.hpp"

#include <chrono>
#include <fstream>
#include <random>

#include <json.hpp>

#include "kilnwatch/digest.hpp"
#include "kilnwatch/errors.hpp"
#include "kilnwatch/tile_ingest.hpp"

namespace kw::cli {

namespace fs = std::filesystem;

void RunManifest::add_input(const fs::path& path) {
    input_digests[path.string()] = fs::is_regular_file(path) ? sha256_file(path) : std::string();
}

void RunManifest::add_output(const fs::path& path) { outputs.push_back(path.string()); }

std::string RunManifest::to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["tool_version"] = tool_version;
    j["config"] = config;
    j["input_digests"] = input_digests;
    j["outputs"] = outputs;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["exit_code"] = exit_code;
    return j.dump(2) + "\n";
}

void RunManifest::write(const fs::path& path) const { atomic_write(path, to_json()); }

std::string utc_now_iso8601() { return ingest::format_iso8601(std::chrono::system_clock::now()); }

void atomic_write(const fs::path& path, std::string_view data) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::random_device rd;
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(rd());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        out.flush();
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot replace " + path.string() + ": " + ec.message());
    }
}

}  // namespace kw::cli
