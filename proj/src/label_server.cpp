#include "kilnwatch/label_server.hpp"

#include <fstream>
#include <map>

#include <httplib.h>
#include <json.hpp>

namespace kw::labels {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int http_status(LabelError::Kind kind) {
    switch (kind) {
        case LabelError::Kind::unknown_user: return 401;
        case LabelError::Kind::forbidden: return 403;
        case LabelError::Kind::not_found: return 404;
        case LabelError::Kind::state_conflict: return 409;
        case LabelError::Kind::bad_request: return 400;
    }
    return 400;
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& msg) { send_json(res, status, {{"error", msg}}); }

json chip_list(const LabelBatch& b) {
    json chips = json::array();
    for (std::size_t i = 0; i < b.chip_ids.size(); ++i)
        chips.push_back({{"position", i}, {"chip_id", b.chip_ids[i]}, {"url", "/chips/" + b.chip_ids[i] + ".png"}});
    return chips;
}

json batch_json(const LabelBatch& b) {
    return {{"batch_id", b.batch_id},
            {"tile_cell", {{"lat", b.tile_cell.lat2()}, {"lon", b.tile_cell.lon2()}}},
            {"status", to_string(b.status)},
            {"assignees", b.assignees},
            {"chips", chip_list(b)},
            {"instructions", kInstructions}};
}

json conflict_json(const LabelBatch& b) {
    json chips = json::array();
    for (auto pos : b.conflict_positions) {
        json labels = json::object();
        for (const auto& [who, ls] : b.submissions) labels[who] = to_string(ls[pos]);
        chips.push_back({{"position", pos},
                         {"chip_id", b.chip_ids[pos]},
                         {"url", "/chips/" + b.chip_ids[pos] + ".png"},
                         {"labels", labels}});
    }
    json annotators = json::array();
    for (const auto& [who, _] : b.submissions) annotators.push_back(who);
    return {{"batch_id", b.batch_id}, {"annotators", annotators}, {"chips", chips}};
}

}  // namespace

struct LabelServer::Impl {
    LabelStore& store;
    std::map<std::string, ingest::ManifestRow> chips;
    fs::path manifest_dir;
    httplib::Server server;

    Impl(LabelStore& s, std::vector<ingest::ManifestRow> manifest, fs::path dir)
        : store(s), manifest_dir(std::move(dir)) {
        for (auto& row : manifest) chips.emplace(row.chip.chip_id, std::move(row));
    }

    const User* authenticate(const httplib::Request& req, httplib::Response& res) const {
        std::string token = req.get_header_value(kTokenHeader);
        if (token.empty()) {
            const auto auth = req.get_header_value("Authorization");
            if (auth.rfind("Bearer ", 0) == 0) token = auth.substr(7);
        }
        const User* u = store.user_by_token(token);
        if (!u) send_error(res, 401, "missing or unknown token");
        return u;
    }

    template <typename Fn>
    void guarded(httplib::Response& res, Fn&& fn) {
        try {
            fn();
        } catch (const LabelError& e) {
            send_error(res, http_status(e.kind()), e.what());
        } catch (const json::exception& e) {
            send_error(res, 400, std::string("bad JSON: ") + e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    }

    void routes() {
        server.Get("/api/batches/next", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const User* u = authenticate(req, res);
                if (!u) return;
                auto b = store.next_batch(u->id);
                send_json(res, 200, {{"batch", b ? batch_json(*b) : json(nullptr)}});
            });
        });

        server.Post(R"(/api/batches/([^/]+)/labels)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const User* u = authenticate(req, res);
                if (!u) return;
                const auto body = json::parse(req.body);
                std::vector<Label> labels;
                for (const auto& l : body.at("labels")) labels.push_back(parse_label(l.get<std::string>()));
                const auto status = store.submit_labels(req.matches[1], u->id, std::move(labels));
                json out{{"batch_id", std::string(req.matches[1])}, {"status", to_string(status)}};
                if (status == BatchStatus::conflicted) out["conflicts"] = store.batch(req.matches[1])->conflict_chip_ids();
                send_json(res, 200, out);
            });
        });

        server.Get("/api/conflicts", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const User* u = authenticate(req, res);
                if (!u) return;
                if (u->role != Role::moderator) throw LabelError(LabelError::Kind::forbidden, "moderators only");
                json arr = json::array();
                for (const auto& b : store.conflicts()) arr.push_back(conflict_json(b));
                send_json(res, 200, {{"conflicts", arr}});
            });
        });

        server.Post(R"(/api/conflicts/([^/]+)/resolution)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const User* u = authenticate(req, res);
                if (!u) return;
                const auto body = json::parse(req.body);
                std::map<std::string, Label> decisions;
                for (const auto& [chip, l] : body.at("decisions").items()) decisions[chip] = parse_label(l.get<std::string>());
                const auto status = store.resolve_conflict(req.matches[1], u->id, decisions);
                send_json(res, 200, {{"batch_id", std::string(req.matches[1])}, {"status", to_string(status)}});
            });
        });

        server.Get("/api/stats", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                if (!authenticate(req, res)) return;
                const auto s = store.stats();
                send_json(res, 200,
                          {{"batches", s.batches_by_status},
                           {"annotators", s.batches_per_annotator},
                           {"finalized_chips", s.finalized_chips}});
            });
        });

        server.Get(R"(/chips/([^/]+)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto png = chip_png(req.matches[1]);
                if (!png) return send_error(res, 404, "unknown chip");
                res.set_content(std::string(png->begin(), png->end()), "image/png");
            });
        });
    }

    std::optional<std::vector<std::uint8_t>> chip_png(const std::string& chip_id) const {
        auto it = chips.find(chip_id);
        if (it == chips.end()) return std::nullopt;
        const auto& row = it->second;
        std::ifstream in(manifest_dir / row.image, std::ios::binary);
        if (!in) return std::nullopt;
        std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
        if (row.materialized) return bytes;
        const auto& w = row.chip.window;
        return encode_png(decode_image(bytes).crop(w.top, w.left, w.height, w.width));
    }
};

LabelServer::LabelServer(LabelStore& store, std::vector<ingest::ManifestRow> manifest, fs::path manifest_dir,
                         std::optional<fs::path> static_dir)
    : impl_(std::make_unique<Impl>(store, std::move(manifest), std::move(manifest_dir))) {
    impl_->routes();
    if (static_dir) impl_->server.set_mount_point("/", static_dir->string());
}

LabelServer::~LabelServer() { stop(); }

bool LabelServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }
int LabelServer::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }
bool LabelServer::listen_after_bind() { return impl_->server.listen_after_bind(); }
void LabelServer::stop() {
    if (impl_) impl_->server.stop();
}
bool LabelServer::running() const { return impl_->server.is_running(); }

std::optional<std::vector<std::uint8_t>> LabelServer::chip_png(const std::string& chip_id) const {
    return impl_->chip_png(chip_id);
}

}  // namespace kw::labels
