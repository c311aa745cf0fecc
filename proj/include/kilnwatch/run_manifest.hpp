#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace kw::cli {

// Reproducibility record for one command run. Timestamps live here and nowhere else, so the
// command's actual outputs stay byte-identical across reruns.
struct RunManifest {
    std::string command;
    std::string tool_version;
    std::map<std::string, std::string> config;         // resolved settings with their source
    std::map<std::string, std::string> input_digests;  // path -> sha256
    std::vector<std::string> outputs;
    std::string started_at;
    std::string finished_at;
    int exit_code = 0;

    // Hashes a regular file; directories are recorded with an empty digest.
    void add_input(const std::filesystem::path& path);
    void add_output(const std::filesystem::path& path);
    std::string to_json() const;
    void write(const std::filesystem::path& path) const;
};

std::string utc_now_iso8601();

// tmp file in the same directory, then rename.
void atomic_write(const std::filesystem::path& path, std::string_view data);

}  // namespace kw::cli
