#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kilnwatch/label_store.hpp"
#include "kilnwatch/tile_ingest.hpp"

namespace kw::labels {

// Shown to annotators with every batch. Visibility is a human judgment; nothing enforces it.
inline constexpr const char* kInstructions =
    "Mark a chip as `kiln` when at least 20-25% of a brick kiln is visible inside it; otherwise leave it "
    "`no_kiln`. Unlabeled chips default to `no_kiln`.";

inline constexpr const char* kTokenHeader = "X-Auth-Token";

// HTTP/JSON front of a LabelStore:
//   GET  /api/batches/next                 annotator token -> {"batch": {...} | null}
//   POST /api/batches/{id}/labels          {"labels": ["kiln", "no_kiln", ... x25]}
//   GET  /api/conflicts                    moderator token -> {"conflicts": [...]}
//   POST /api/conflicts/{id}/resolution    {"decisions": {"<chip_id>": "kiln", ...}}
//   GET  /api/stats
//   GET  /chips/{chip_id}.png
class LabelServer {
public:
    LabelServer(LabelStore& store, std::vector<ingest::ManifestRow> manifest, std::filesystem::path manifest_dir,
                std::optional<std::filesystem::path> static_dir = std::nullopt);
    ~LabelServer();
    LabelServer(const LabelServer&) = delete;
    LabelServer& operator=(const LabelServer&) = delete;

    // Blocks until stop().
    bool listen(const std::string& host, int port);
    // Binds an ephemeral port and returns it; follow with listen_after_bind() on a thread.
    int bind_any_port(const std::string& host = "127.0.0.1");
    bool listen_after_bind();
    void stop();
    bool running() const;

    // PNG bytes of one chip, cropped from its cached tile unless materialized.
    std::optional<std::vector<std::uint8_t>> chip_png(const std::string& chip_id) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace kw::labels
