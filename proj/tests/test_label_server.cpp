#include <doctest.h>

#include <httplib.h>
#include <json.hpp>

#include <sstream>
#include <thread>

#include "campaign.hpp"
#include "kilnwatch/label_server.hpp"
#include "kilnwatch/raster.hpp"
#include "support.hpp"

using namespace kw;
using namespace kw::labels;
using nlohmann::json;

namespace {

// A real tile cache with two cells, a store, and a server on an ephemeral port.
struct Service {
    kwtest::TempDir dir{"server"};
    std::vector<ingest::ManifestRow> rows;
    std::unique_ptr<LabelStore> store;
    std::unique_ptr<LabelServer> server;
    std::thread thread;
    int port = 0;

    Service() {
        ingest::MockProvider provider;
        ingest::TileCache cache(dir.path());
        ingest::QuotaLedger quota({"k"});
        ingest::TileFetcher fetcher(provider, cache, quota);
        survey::QueryPlan plan;
        plan.centers = {GridCell::from_hundredths(2870, 7710), GridCell::from_hundredths(2870, 7711)};
        std::ostringstream manifest;
        ingest::ingest(plan, fetcher, manifest);
        std::istringstream in(manifest.str());
        rows = ingest::read_manifest(in);
        store = std::make_unique<LabelStore>(dir / "labels.log", kwtest::campaign_users());
        store->register_batches(rows);
        server = std::make_unique<LabelServer>(*store, rows, dir.path());
        port = server->bind_any_port();
        thread = std::thread([this] { server->listen_after_bind(); });
        for (int i = 0; i < 200 && !server->running(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    ~Service() {
        server->stop();
        thread.join();
    }

    httplib::Result get(const std::string& path, const std::string& token = "") {
        httplib::Client c("127.0.0.1", port);
        httplib::Headers h;
        if (!token.empty()) h.emplace(kTokenHeader, token);
        return c.Get(path, h);
    }
    httplib::Result post(const std::string& path, const json& body, const std::string& token) {
        httplib::Client c("127.0.0.1", port);
        return c.Post(path, {{kTokenHeader, token}}, body.dump(), "application/json");
    }
};

json labels_body(const std::vector<std::string>& v) { return {{"labels", v}}; }

}  // namespace

TEST_SUITE("label_server") {

TEST_CASE("authentication and roles map to 401 and 403") {
    Service svc;
    CHECK(svc.get("/api/batches/next")->status == 401);
    CHECK(svc.get("/api/batches/next", "wrong")->status == 401);
    CHECK(svc.get("/api/conflicts", "t-ann1")->status == 403);
    CHECK(svc.get("/api/batches/next", "t-mod")->status == 403);
    httplib::Client c("127.0.0.1", svc.port);
    const auto bearer = c.Get("/api/batches/next", {{"Authorization", "Bearer t-ann1"}});
    CHECK(bearer->status == 200);
}

TEST_CASE("annotator flow: 25 labels in, agreement out") {
    Service svc;
    auto r = svc.get("/api/batches/next", "t-ann1");
    REQUIRE(r->status == 200);
    const auto batch = json::parse(r->body).at("batch");
    CHECK(batch.at("chips").size() == 25);
    CHECK(batch.at("instructions").get<std::string>().find("20-25%") != std::string::npos);
    const auto id = batch.at("batch_id").get<std::string>();
    const auto url = batch.at("chips")[0].at("url").get<std::string>();

    auto png = svc.get(url);
    REQUIRE(png->status == 200);
    CHECK(png->get_header_value("Content-Type") == "image/png");
    const auto chip = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(png->body.data()), png->body.size()));
    CHECK(chip.width == 224);
    CHECK(chip.height == 224);
    // The served chip is the tile's pixel window.
    const auto tile = ingest::MockProvider::render(GridCell::from_hundredths(2870, 7710));
    CHECK(chip == tile.crop(40, 40, 224, 224));

    std::vector<std::string> labels(25, "no_kiln");
    labels[4] = "kiln";
    CHECK(svc.post("/api/batches/" + id + "/labels", labels_body(labels), "t-ann1")->status == 200);
    CHECK(svc.post("/api/batches/" + id + "/labels", labels_body(labels), "t-ann1")->status == 409);
    REQUIRE(svc.get("/api/batches/next", "t-ann2")->status == 200);
    const auto done = svc.post("/api/batches/" + id + "/labels", labels_body(labels), "t-ann2");
    CHECK(json::parse(done->body).at("status") == "agreed");

    const auto stats = json::parse(svc.get("/api/stats", "t-mod")->body);
    CHECK(stats.at("finalized_chips") == 25);
    CHECK(stats.at("annotators").at("ann1") == 1);
}

TEST_CASE("moderator sees both labels for exactly the conflicting chips") {
    Service svc;
    const auto id = json::parse(svc.get("/api/batches/next", "t-ann1")->body).at("batch").at("batch_id").get<std::string>();
    svc.get("/api/batches/next", "t-ann2");
    std::vector<std::string> a(25, "no_kiln"), b(25, "no_kiln");
    b[0] = "kiln";
    b[24] = "kiln";
    svc.post("/api/batches/" + id + "/labels", labels_body(a), "t-ann1");
    const auto sub = json::parse(svc.post("/api/batches/" + id + "/labels", labels_body(b), "t-ann2")->body);
    CHECK(sub.at("status") == "conflicted");
    CHECK(sub.at("conflicts").size() == 2);

    const auto conflicts = json::parse(svc.get("/api/conflicts", "t-mod")->body).at("conflicts");
    REQUIRE(conflicts.size() == 1);
    const auto chips = conflicts[0].at("chips");
    REQUIRE(chips.size() == 2);
    CHECK(chips[0].at("labels").at("ann1") == "no_kiln");
    CHECK(chips[0].at("labels").at("ann2") == "kiln");

    json decisions = json::object();
    for (const auto& c : chips) decisions[c.at("chip_id").get<std::string>()] = "kiln";
    CHECK(svc.post("/api/conflicts/" + id + "/resolution", {{"decisions", json::object()}}, "t-mod")->status == 400);
    const auto res = svc.post("/api/conflicts/" + id + "/resolution", {{"decisions", decisions}}, "t-mod");
    CHECK(res->status == 200);
    CHECK(json::parse(res->body).at("status") == "resolved");
    CHECK(json::parse(svc.get("/api/conflicts", "t-mod")->body).at("conflicts").empty());
}

TEST_CASE("malformed requests and unknown resources") {
    Service svc;
    httplib::Client c("127.0.0.1", svc.port);
    CHECK(c.Post("/api/batches/25.00_80.00/labels", {{kTokenHeader, "t-ann1"}}, "{not json", "application/json")->status == 400);
    CHECK(svc.post("/api/batches/nope/labels", labels_body(std::vector<std::string>(25, "kiln")), "t-ann1")->status == 404);
    svc.get("/api/batches/next", "t-ann1");
    CHECK(svc.post("/api/batches/28.70_77.10/labels", labels_body({"kiln", "maybe"}), "t-ann1")->status == 400);
    CHECK(svc.get("/chips/none.png")->status == 404);
}

TEST_CASE("no more work returns a null batch") {
    Service svc;
    for (int i = 0; i < 2; ++i) {
        const auto b = json::parse(svc.get("/api/batches/next", "t-ann1")->body).at("batch");
        svc.post("/api/batches/" + b.at("batch_id").get<std::string>() + "/labels",
                 labels_body(std::vector<std::string>(25, "no_kiln")), "t-ann1");
    }
    CHECK(json::parse(svc.get("/api/batches/next", "t-ann1")->body).at("batch").is_null());
}

}  // TEST_SUITE
