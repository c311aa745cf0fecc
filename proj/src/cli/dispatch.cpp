#include "kilnwatch/dispatch.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "kilnwatch/compliance.hpp"
#include "kilnwatch/detection.hpp"
#include "kilnwatch/label_server.hpp"
#include "kilnwatch/label_store.hpp"
#include "kilnwatch/ntxent.hpp"
#include "kilnwatch/permutations.hpp"
#include "kilnwatch/run_manifest.hpp"
#include "kilnwatch/survey.hpp"
#include "kilnwatch/tile_ingest.hpp"
#include "kilnwatch/toml_lite.hpp"

#ifndef KILN_WATCH_VERSION
#define KILN_WATCH_VERSION "dev"
#endif

namespace kw::cli {

namespace fs = std::filesystem;

namespace {

// A setting that can come from the config file, a flag, or KILN_WATCH_<NAME>, in increasing
// precedence. Paths and switches are plain flags; only tunables go through here.
struct Knob {
    std::string command;
    std::string name;  // config key, e.g. merge_radius
    std::string fallback;
    std::string flag_value;
    CLI::Option* option = nullptr;
    std::string value;
    std::string source = "default";
};

std::string value_text(const config::Value& v) {
    struct {
        std::string operator()(const std::string& s) const { return s; }
        std::string operator()(std::int64_t i) const { return std::to_string(i); }
        std::string operator()(double d) const {
            char buf[40];
            const auto res = std::to_chars(buf, buf + sizeof buf, d);  // shortest round-trip form
            return std::string(buf, res.ptr);
        }
        std::string operator()(bool b) const { return b ? "true" : "false"; }
        std::string operator()(const std::vector<std::string>& l) const {
            std::string s;
            for (std::size_t i = 0; i < l.size(); ++i) s += (i ? "," : "") + l[i];
            return s;
        }
    } visit;
    return std::visit(visit, v);
}

std::string env_name(const std::string& key) {
    std::string s = "KILN_WATCH_";
    for (char c : key) s += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

class Knobs {
public:
    Knob& add(CLI::App* sub, const std::string& command, const std::string& flag, std::string fallback,
              const std::string& help) {
        auto& k = store_.emplace_back();
        k.command = command;
        k.name = flag.substr(2);
        std::replace(k.name.begin(), k.name.end(), '-', '_');
        k.fallback = std::move(fallback);
        k.option = sub->add_option(flag, k.flag_value, help + " [default: " + k.fallback + "; env " + env_name(k.name) + "]");
        return k;
    }

    void resolve(const std::string& command, const config::Document* doc) {
        for (auto& k : store_) {
            if (k.command != command) continue;
            k.value = k.fallback;
            if (doc) {
                if (auto it = doc->root.values().find(k.name); it != doc->root.values().end()) {
                    k.value = value_text(it->second);
                    k.source = "config";
                }
                const auto* table = doc->table(section(command));
                if (table)
                    if (auto it = table->values().find(k.name); it != table->values().end()) {
                        k.value = value_text(it->second);
                        k.source = "config";
                    }
            }
            if (k.option->count() > 0) {
                k.value = k.flag_value;
                k.source = "flag";
            }
            if (const char* env = std::getenv(env_name(k.name).c_str()); env && *env) {
                k.value = env;
                k.source = "env";
            }
        }
    }

    void snapshot(const std::string& command, RunManifest& m) const {
        for (const auto& k : store_)
            if (k.command == command) m.config[k.name] = k.value + " (" + k.source + ")";
    }

private:
    // "ssl ntxent" reads the [ssl.ntxent] table.
    static std::string section(std::string command) {
        std::replace(command.begin(), command.end(), ' ', '.');
        return command;
    }
    std::deque<Knob> store_;
};

double as_double(const Knob& k) {
    try {
        std::size_t used = 0;
        const double v = std::stod(k.value, &used);
        if (used == k.value.size()) return v;
    } catch (const std::exception&) {
    }
    throw ValidationError(k.name + ": expected a number, got `" + k.value + "` (from " + k.source + ")");
}

std::int64_t as_int(const Knob& k) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(k.value, &used);
        if (used == k.value.size()) return v;
    } catch (const std::exception&) {
    }
    throw ValidationError(k.name + ": expected an integer, got `" + k.value + "` (from " + k.source + ")");
}

std::vector<double> as_doubles(const Knob& k) {
    std::vector<double> out;
    std::stringstream ss(k.value);
    std::string part;
    while (std::getline(ss, part, ',')) {
        Knob one = k;
        one.value = part;
        out.push_back(as_double(one));
    }
    if (out.empty()) throw ValidationError(k.name + ": expected a comma-separated list of numbers");
    return out;
}

std::string fixed(double v, int dp) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", dp, v);
    return buf;
}

template <typename Fn>
std::string render(Fn&& fn) {
    std::ostringstream os;
    fn(os);
    return os.str();
}

std::vector<std::string> read_keys_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::string> keys;
    std::string line;
    while (std::getline(in, line)) {
        line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }), line.end());
        if (!line.empty() && line[0] != '#') keys.push_back(line);
    }
    if (keys.empty()) throw ValidationError(path.string() + " lists no API keys");
    return keys;
}

GridCell parse_cell_key(const std::string& s) {
    const auto us = s.find('_');
    if (us == std::string::npos) throw ValidationError("cell must look like 28.70_77.10, got `" + s + "`");
    try {
        return snap_to_centigrid(GeoPoint(std::stod(s.substr(0, us)), std::stod(s.substr(us + 1))));
    } catch (const std::invalid_argument&) {
        throw ValidationError("cell must look like 28.70_77.10, got `" + s + "`");
    }
}

std::pair<std::string, std::string> split_assignment(const std::string& s, const char* what) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
        throw ValidationError(std::string(what) + " must look like DATE=VALUE, got `" + s + "`");
    return {s.substr(0, eq), s.substr(eq + 1)};
}

std::atomic<labels::LabelServer*> g_server{nullptr};

extern "C" void on_signal(int) {
    if (auto* s = g_server.load()) s->stop();
}

// What a command hands back: its exit code.
using Runner = std::function<int(RunManifest&)>;

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"kiln-watch: brick-kiln survey planning, tile ingest, labeling, metrics and siting compliance",
                 "kiln-watch"};
    app.set_version_flag("--version", std::string("kiln-watch ") + KILN_WATCH_VERSION);
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string run_manifest_path;
    app.add_option("--config", config_path, "TOML config; [command] tables override top-level keys")
        ->check(CLI::ExistingFile);
    app.add_option("--run-manifest", run_manifest_path, "Write a run manifest (JSON) to this path");

    Knobs knobs;
    std::vector<std::pair<CLI::App*, std::pair<std::string, Runner>>> commands;
    auto command = [&](CLI::App* sub, std::string name, Runner run) {
        commands.push_back({sub, {std::move(name), std::move(run)}});
    };

    // plan ----------------------------------------------------------------------
    auto* plan = app.add_subcommand("plan", "Build a grid query plan over a region");
    std::string region_path, mask_path, plan_out;
    plan->add_option("--region", region_path, "Region file (bbox line or polygon ring)")->required()->check(CLI::ExistingFile);
    plan->add_option("--mask", mask_path, "Extra polygon mask file")->check(CLI::ExistingFile);
    plan->add_option("-o,--output", plan_out, "Plan output (JSON Lines)")->required();
    auto& k_stride = knobs.add(plan, "plan", "--stride", "0.01", "Grid stride in degrees");
    auto& k_zoom = knobs.add(plan, "plan", "--zoom", "16", "Zoom level");
    auto& k_scale = knobs.add(plan, "plan", "--scale", "2", "Scale factor");
    command(plan, "plan", [&](RunManifest& m) {
        m.add_input(region_path);
        auto region = survey::read_region_file(region_path);
        std::optional<Polygon> mask;
        if (!mask_path.empty()) {
            m.add_input(mask_path);
            mask = survey::read_mask_file(mask_path);
        }
        auto q = survey::plan_queries(region.box, region.polygon, as_double(k_stride), static_cast<int>(as_int(k_zoom)),
                                      static_cast<int>(as_int(k_scale)));
        if (mask) {
            std::erase_if(q.centers, [&](const GridCell& c) { return !mask->contains(c.center()); });
        }
        atomic_write(plan_out, render([&](std::ostream& os) { survey::write_plan(os, q); }));
        m.add_output(plan_out);
        const auto est = survey::estimate_effort(q);
        out << "planned " << q.centers.size() << " queries (" << est.chip_count << " chips) at zoom " << q.zoom
            << " scale " << q.scale << " -> " << plan_out << '\n';
        return kExitOk;
    });

    // estimate --------------------------------------------------------------------
    auto* estimate = app.add_subcommand("estimate", "Query, chip and API-day effort for a plan");
    std::string est_plan;
    std::int64_t est_queries = -1;
    auto* est_plan_opt = estimate->add_option("--plan", est_plan, "Plan file")->check(CLI::ExistingFile);
    estimate->add_option("--queries", est_queries, "Query count instead of a plan file")->excludes(est_plan_opt);
    auto& k_keys = knobs.add(estimate, "estimate", "--keys", "1", "Number of API keys");
    auto& k_est_quota = knobs.add(estimate, "estimate", "--quota", "25000", "Daily queries per key");
    command(estimate, "estimate", [&](RunManifest& m) {
        std::int64_t queries = est_queries;
        if (!est_plan.empty()) {
            m.add_input(est_plan);
            queries = static_cast<std::int64_t>(survey::read_plan_file(est_plan).centers.size());
        } else if (queries < 0) {
            throw ValidationError("estimate needs --plan or --queries");
        }
        const auto e = survey::estimate_effort(queries, as_int(k_keys), as_int(k_est_quota));
        out << "queries      " << e.query_count << '\n'
            << "chips        " << e.chip_count << '\n'
            << "keys         " << e.keys << '\n'
            << "daily quota  " << e.daily_quota << '\n'
            << "chips/day    " << e.chips_per_day_per_key() * e.keys << '\n'
            << "api days     " << e.api_days << '\n';
        return kExitOk;
    });

    // fetch -------------------------------------------------------------------------
    auto* fetch = app.add_subcommand("fetch", "Fetch tiles for a plan and write the chip manifest");
    std::string fetch_plan, fetch_out, keys_file;
    bool use_mock = false, materialize = false;
    std::vector<std::string> mock_fail;
    fetch->add_option("--plan", fetch_plan, "Plan file")->required()->check(CLI::ExistingFile);
    fetch->add_option("--out", fetch_out, "Output directory (tile cache + manifest.jsonl)")->required();
    fetch->add_option("--keys-file", keys_file, "One API key per line")->check(CLI::ExistingFile);
    fetch->add_flag("--mock", use_mock, "Use the deterministic synthetic provider");
    fetch->add_flag("--materialize-chips", materialize, "Also write each chip as its own PNG");
    fetch->add_option("--mock-fail-cell", mock_fail, "Mock only: cell (28.70_77.10) that always fails");
    auto& k_workers = knobs.add(fetch, "fetch", "--workers", "8", "Concurrent fetch workers");
    auto& k_quota = knobs.add(fetch, "fetch", "--quota", "25000", "Daily queries per key");
    auto& k_endpoint = knobs.add(fetch, "fetch", "--endpoint", "", "Imagery endpoint URL for the live provider");
    auto& k_offset = knobs.add(fetch, "fetch", "--utc-offset", "0", "Provider day boundary, minutes east of UTC");
    auto& k_backoff = knobs.add(fetch, "fetch", "--backoff-ms", "1000", "Initial retry backoff");
    command(fetch, "fetch", [&](RunManifest& m) {
        m.add_input(fetch_plan);
        const auto q = survey::read_plan_file(fetch_plan);
        std::vector<std::string> keys;
        if (!keys_file.empty()) keys = read_keys_file(keys_file);
        else if (const char* k = std::getenv("KILN_WATCH_API_KEY"); k && *k) keys = {k};
        else if (use_mock) keys = {"mock-key"};
        else throw ValidationError("no API key: pass --keys-file or set KILN_WATCH_API_KEY");

        std::unique_ptr<ingest::TileProvider> provider;
        if (use_mock) {
            auto mock = std::make_unique<ingest::MockProvider>();
            for (const auto& c : mock_fail) mock->fail_always(parse_cell_key(c));
            provider = std::move(mock);
        } else {
            if (!mock_fail.empty()) throw ValidationError("--mock-fail-cell needs --mock");
            if (k_endpoint.value.empty()) throw ValidationError("live provider needs --endpoint");
            provider = std::make_unique<ingest::HttpProvider>(k_endpoint.value);
        }
        fs::create_directories(fetch_out);
        ingest::TileCache cache(fetch_out);
        ingest::QuotaLedger quota(keys, as_int(k_quota), std::chrono::minutes(as_int(k_offset)));
        ingest::RetryPolicy retry;
        retry.initial_backoff = std::chrono::milliseconds(as_int(k_backoff));
        ingest::TileFetcher fetcher(*provider, cache, quota, retry);
        ingest::IngestOptions opts;
        opts.workers = static_cast<int>(as_int(k_workers));
        opts.materialize_chips = materialize;

        std::ostringstream manifest;
        const auto summary = ingest::ingest(q, fetcher, manifest, opts);
        const fs::path manifest_path = fs::path(fetch_out) / "manifest.jsonl";
        atomic_write(manifest_path, manifest.str());
        m.add_output(manifest_path);

        const fs::path deferred_path = fs::path(fetch_out) / "deferred.jsonl";
        if (summary.quota_exhausted()) {
            survey::QueryPlan rest = q;
            rest.centers = summary.deferred;
            atomic_write(deferred_path, render([&](std::ostream& os) { survey::write_plan(os, rest); }));
            m.add_output(deferred_path);
        } else {
            fs::remove(deferred_path);
        }
        out << "fetched " << summary.fetched << ", cached " << summary.skipped << ", failed " << summary.failed.size()
            << ", deferred " << summary.deferred.size() << "; " << summary.manifest_rows << " manifest rows -> "
            << manifest_path.string() << '\n';
        for (const auto& f : summary.failed) err << "failed " << f.cell.key() << ": " << f.reason << '\n';
        if (summary.quota_exhausted())
            err << "quota exhausted; " << summary.deferred.size() << " cells written to " << deferred_path.string()
                << '\n';
        if (!summary.failed.empty()) return kExitFailure;
        return summary.quota_exhausted() ? kExitQuota : kExitOk;
    });

    // serve-labels ---------------------------------------------------------------------
    auto* serve = app.add_subcommand("serve-labels", "Run the dual-annotator labeling service");
    std::string serve_manifest, store_path, users_path, static_dir;
    serve->add_option("--manifest", serve_manifest, "Chip manifest (JSON Lines)")->required()->check(CLI::ExistingFile);
    serve->add_option("--store", store_path, "Event log path (created if missing)")->required();
    serve->add_option("--users", users_path, "TOML with [[user]] id, role, token")->required()->check(CLI::ExistingFile);
    serve->add_option("--static", static_dir, "Directory served at / (labeling UI build)")->check(CLI::ExistingDirectory);
    auto& k_port = knobs.add(serve, "serve-labels", "--port", "8080", "Listen port");
    auto& k_host = knobs.add(serve, "serve-labels", "--host", "127.0.0.1", "Listen address");
    command(serve, "serve-labels", [&](RunManifest& m) {
        m.add_input(serve_manifest);
        m.add_input(users_path);
        auto rows = ingest::read_manifest_file(serve_manifest);
        labels::LabelStore store(store_path, labels::read_users(users_path));
        const auto added = store.register_batches(rows);
        std::optional<fs::path> web;
        if (!static_dir.empty()) web = static_dir;
        labels::LabelServer server(store, rows, fs::path(serve_manifest).parent_path(), web);
        g_server = &server;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        out << "registered " << added << " new batches; serving on http://" << k_host.value << ':' << k_port.value
            << std::endl;
        const bool ok = server.listen(k_host.value, static_cast<int>(as_int(k_port)));
        g_server = nullptr;
        std::signal(SIGINT, SIG_DFL);
        std::signal(SIGTERM, SIG_DFL);
        if (!ok && !server.running()) {
            err << "could not listen on " << k_host.value << ':' << k_port.value << '\n';
            return kExitFailure;
        }
        return kExitOk;
    });

    // export-labels ----------------------------------------------------------------------
    auto* export_labels = app.add_subcommand("export-labels", "Replay the event log and write final labels");
    std::string export_store, export_out;
    export_labels->add_option("--store", export_store, "Event log")->required()->check(CLI::ExistingFile);
    export_labels->add_option("-o,--output", export_out, "Ground-truth CSV")->required();
    command(export_labels, "export-labels", [&](RunManifest& m) {
        m.add_input(export_store);
        const auto state = labels::LabelStore::replay(export_store);
        const auto rows = state.ground_truth();
        atomic_write(export_out, render([&](std::ostream& os) { labels::export_ground_truth(state, os); }));
        m.add_output(export_out);
        out << rows.size() << " finalized chips -> " << export_out << '\n';
        return kExitOk;
    });

    // ssl ------------------------------------------------------------------------------------
    auto* ssl = app.add_subcommand("ssl", "Self-supervised math kernels");
    ssl->require_subcommand(1);
    auto* ntxent = ssl->add_subcommand("ntxent", "NT-Xent loss of an embedding batch");
    std::string emb_path;
    bool per_anchor = false;
    ntxent->add_option("--embeddings", emb_path, "CSV, one embedding per row; rows 2k and 2k+1 are positives")
        ->required()
        ->check(CLI::ExistingFile);
    ntxent->add_flag("--per-anchor", per_anchor, "Also print each anchor's loss");
    auto& k_tau = knobs.add(ntxent, "ssl ntxent", "--tau", "0.5", "Temperature");
    command(ntxent, "ssl ntxent", [&](RunManifest& m) {
        m.add_input(emb_path);
        std::ifstream in(emb_path);
        const auto batch = ssl::read_embeddings_csv(in);
        const auto r = ssl::nt_xent_loss(batch, {as_double(k_tau)});
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.12f", r.total);
        out << "nt_xent " << buf << " (2N=" << batch.rows() << ", d=" << batch.dim() << ", tau=" << k_tau.value
            << ")\n";
        if (per_anchor)
            for (std::size_t i = 0; i < r.per_anchor.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%.12f", r.per_anchor[i]);
                out << "anchor " << i << ' ' << buf << '\n';
            }
        return kExitOk;
    });

    auto* perms = ssl->add_subcommand("perms", "Jigsaw permutation set by greedy max-min Hamming distance");
    std::string perms_out;
    perms->add_option("-o,--output", perms_out, "Output file (one permutation per line)")->required();
    auto& k_n = knobs.add(perms, "ssl perms", "--n", "2", "Patches per side");
    auto& k_k = knobs.add(perms, "ssl perms", "--k", "4", "Number of permutations");
    auto& k_seed = knobs.add(perms, "ssl perms", "--seed", "7", "Candidate sampling seed");
    auto& k_pool = knobs.add(perms, "ssl perms", "--pool", std::to_string(ssl::kCandidatePool),
                             "Candidate pool size when N^2! is larger");
    command(perms, "ssl perms", [&](RunManifest& m) {
        const auto set = ssl::select_permutations(static_cast<int>(as_int(k_n)), static_cast<std::size_t>(as_int(k_k)),
                                                  static_cast<std::uint64_t>(as_int(k_seed)),
                                                  static_cast<std::size_t>(as_int(k_pool)));
        atomic_write(perms_out, render([&](std::ostream& os) { ssl::write_permutations(os, set); }));
        m.add_output(perms_out);
        out << set.k() << " permutations of " << set.grid_n * set.grid_n << " patches, min pairwise Hamming "
            << ssl::min_pairwise_hamming(set.permutations) << " -> " << perms_out << '\n';
        return kExitOk;
    });

    // detections ---------------------------------------------------------------------------
    auto* detections = app.add_subcommand("detections", "Threshold chip predictions and merge them into kilns");
    std::string preds_path, det_out;
    detections->add_option("--preds", preds_path, "Predictions CSV chip_id,lat,lon,score")->required()->check(CLI::ExistingFile);
    detections->add_option("-o,--output", det_out, "Kilns GeoJSON; a .csv twin is written beside it")->required();
    auto& k_threshold = knobs.add(detections, "detections", "--threshold", "0.5", "Score threshold");
    auto& k_merge = knobs.add(detections, "detections", "--merge-radius", "250", "Merge radius in meters");
    command(detections, "detections", [&](RunManifest& m) {
        m.add_input(preds_path);
        const auto preds = detection::ingest_predictions_file(preds_path);
        const double theta = as_double(k_threshold);
        const auto kilns = detection::threshold_and_merge(preds, theta, as_double(k_merge));
        fs::path geo = det_out, csv = det_out;
        if (geo.extension() == ".csv") geo.replace_extension(".geojson");
        else csv.replace_extension(".csv");
        atomic_write(geo, render([&](std::ostream& os) { detection::write_detections_geojson(os, kilns); }));
        atomic_write(csv, render([&](std::ostream& os) { detection::write_detections_csv(os, kilns); }));
        m.add_output(geo);
        m.add_output(csv);
        const auto kept = std::count_if(preds.begin(), preds.end(), [&](const auto& p) { return p.score >= theta; });
        out << preds.size() << " predictions, " << kept << " at or above " << k_threshold.value << ", " << kilns.size()
            << " kilns -> " << geo.string() << '\n';
        return kExitOk;
    });

    // metrics ------------------------------------------------------------------------------
    auto* metrics = app.add_subcommand("metrics", "Precision, recall and F1 from counts or from P and R");
    std::optional<std::int64_t> tp, fp, fn;
    std::optional<double> p_in, r_in;
    auto* tp_opt = metrics->add_option("--tp", tp, "True positives");
    metrics->add_option("--fp", fp, "False positives");
    metrics->add_option("--fn", fn, "False negatives");
    auto* p_opt = metrics->add_option("--precision", p_in, "Precision (with --recall: F1 only)")->excludes(tp_opt);
    metrics->add_option("--recall", r_in, "Recall")->needs(p_opt);
    command(metrics, "metrics", [&](RunManifest&) {
        if (p_in) {
            if (!r_in) throw ValidationError("--precision needs --recall");
            out << "f1 " << fixed(detection::f1_score(*p_in, *r_in), 4) << '\n';
            return kExitOk;
        }
        if (!tp) throw ValidationError("metrics needs --tp (with --fp and/or --fn) or --precision/--recall");
        const detection::ConfusionCounts c{*tp, fp.value_or(0), fn.value_or(0)};
        if (fp) out << "precision " << fixed(detection::precision(c), 4) << '\n';
        if (fn) out << "recall    " << fixed(detection::recall(c), 4) << '\n';
        if (fp && fn) out << "f1        " << fixed(detection::f1(c), 4) << '\n';
        if (!fp && !fn) throw ValidationError("metrics needs --fp and/or --fn");
        return kExitOk;
    });

    // district-report ---------------------------------------------------------------------
    auto* district = app.add_subcommand("district-report", "Per-district and aggregate precision");
    std::string counts_path, district_out;
    district->add_option("--counts", counts_path, "CSV state,district,tp,fp (state optional)")->required()->check(CLI::ExistingFile);
    district->add_option("-o,--output", district_out, "Also write the report CSV here");
    command(district, "district-report", [&](RunManifest& m) {
        m.add_input(counts_path);
        std::ifstream in(counts_path);
        const auto report = detection::aggregate_stats(detection::read_district_counts(in));
        const auto text = render([&](std::ostream& os) { detection::write_district_report(os, report); });
        out << text;
        if (!district_out.empty()) {
            atomic_write(district_out, text);
            m.add_output(district_out);
        }
        return kExitOk;
    });

    // check ---------------------------------------------------------------------------------
    auto* check = app.add_subcommand("check", "Audit kilns against siting rules");
    std::string check_kilns, rules_path, report_dir;
    std::vector<std::string> feature_paths;
    check->add_option("--kilns", check_kilns, "Kilns GeoJSON or CSV")->required()->check(CLI::ExistingFile);
    check->add_option("--rules", rules_path, "Rules TOML ([[rule]] tables); built-in defaults otherwise")
        ->check(CLI::ExistingFile);
    check->add_option("--features", feature_paths, "Feature GeoJSON files (repeatable)")->check(CLI::ExistingFile);
    check->add_option("-o,--output", report_dir, "Report directory")->required();
    command(check, "check", [&](RunManifest& m) {
        m.add_input(check_kilns);
        const auto kilns = compliance::kilns_from_detections(detection::read_detections_file(check_kilns));
        std::vector<compliance::PolicyRule> rules;
        if (!rules_path.empty()) {
            m.add_input(rules_path);
            rules = compliance::read_rules_file(rules_path);
        } else {
            rules = compliance::default_rules();
        }
        features::FeatureSet fset;
        for (const auto& p : feature_paths) {
            m.add_input(p);
            fset.append(features::read_features_file(p));
        }
        std::vector<compliance::PolicyRule> applied;
        std::vector<compliance::ViolationReport> reports;
        for (const auto& rule : rules) {
            const auto sel = fset.select(rule.feature_classes);
            const bool none = (rule.kind == compliance::RuleKind::point_feature && sel.points.empty()) ||
                              (rule.kind == compliance::RuleKind::line_feature && sel.lines.empty()) ||
                              (rule.kind == compliance::RuleKind::zone_prohibition && sel.zones.empty());
            if (none) {
                out << "skipped " << rule.rule_id << ": no matching features loaded\n";
                continue;
            }
            reports.push_back(compliance::apply_rule(kilns, fset, rule));
            applied.push_back(rule);
        }
        const fs::path dir = report_dir;
        fs::create_directories(dir);
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const fs::path p = dir / (reports[i].rule_id + ".geojson");
            atomic_write(p, render([&](std::ostream& os) {
                             compliance::write_report_geojson(os, kilns, reports[i], applied[i]);
                         }));
            m.add_output(p);
        }
        const auto summary = render([&](std::ostream& os) {
            compliance::write_summary_csv(os, kilns.size(), applied, reports);
        });
        atomic_write(dir / "summary.csv", summary);
        atomic_write(dir / "violations.csv",
                     render([&](std::ostream& os) { compliance::write_violations_csv(os, reports); }));
        m.add_output(dir / "summary.csv");
        m.add_output(dir / "violations.csv");
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const double pct = kilns.empty() ? 0.0 : 100.0 * static_cast<double>(reports[i].violators.size()) /
                                                         static_cast<double>(kilns.size());
            out << reports[i].rule_id << ": " << reports[i].violators.size() << " of " << kilns.size()
                << " kilns violate (" << fixed(pct, 1) << "%)\n";
        }
        return kExitOk;
    });

    // exposure ------------------------------------------------------------------------------
    auto* exposure = app.add_subcommand("exposure", "Population living within given radii of any kiln");
    std::string exp_kilns, pop_path, exp_out;
    exposure->add_option("--kilns", exp_kilns, "Kilns GeoJSON or CSV")->required()->check(CLI::ExistingFile);
    exposure->add_option("--pop", pop_path, "Population grid CSV lat,lon,population")->required()->check(CLI::ExistingFile);
    exposure->add_option("-o,--output", exp_out, "Also write the exposure CSV here");
    auto& k_radii = knobs.add(exposure, "exposure", "--radii", "1,2,10", "Ascending radii in km");
    command(exposure, "exposure", [&](RunManifest& m) {
        m.add_input(exp_kilns);
        m.add_input(pop_path);
        const auto kilns = compliance::kilns_from_detections(detection::read_detections_file(exp_kilns));
        const auto grid = compliance::read_population_grid_file(pop_path);
        const auto rows = compliance::population_exposure(kilns, grid, as_doubles(k_radii));
        const auto text = render([&](std::ostream& os) { compliance::write_exposure_csv(os, rows); });
        out << text;
        if (!exp_out.empty()) {
            atomic_write(exp_out, text);
            m.add_output(exp_out);
        }
        return kExitOk;
    });

    // growth ----------------------------------------------------------------------------------
    auto* growth = app.add_subcommand("growth", "Kiln-count change across dated snapshots");
    std::vector<std::string> snapshot_files, snapshot_counts;
    std::string growth_out;
    growth->add_option("--snapshot", snapshot_files, "DATE=kilns-file (repeatable)");
    growth->add_option("--count", snapshot_counts, "DATE=N, a count without a file (repeatable)");
    growth->add_option("-o,--output", growth_out, "Also write the interval CSV here");
    command(growth, "growth", [&](RunManifest& m) {
        std::vector<detection::Snapshot> snaps;
        for (const auto& s : snapshot_files) {
            auto [date, file] = split_assignment(s, "--snapshot");
            m.add_input(file);
            snaps.push_back({date, static_cast<std::int64_t>(detection::read_detections_file(file).size())});
        }
        for (const auto& s : snapshot_counts) {
            auto [date, n] = split_assignment(s, "--count");
            Knob k;
            k.name = "count";
            k.value = n;
            k.source = "flag";
            snaps.push_back({date, as_int(k)});
        }
        std::sort(snaps.begin(), snaps.end(), [](const auto& a, const auto& b) { return a.date < b.date; });
        const auto rep = detection::kiln_growth(snaps);
        const auto text = render([&](std::ostream& os) {
            os << "from,to,from_count,to_count,delta,percent\n";
            for (std::size_t i = 0; i < rep.intervals.size(); ++i) {
                const auto& g = rep.intervals[i];
                os << g.from << ',' << g.to << ',' << snaps[i].count << ',' << snaps[i + 1].count << ',' << g.delta
                   << ',' << (g.percent ? detection::format_percent_change(*g.percent) : std::string("n/a")) << '\n';
            }
        });
        out << text;
        out << "total " << detection::format_percent_change(rep.total_percent) << " (" << snaps.front().date << ' '
            << snaps.front().count << " -> " << snaps.back().date << ' ' << snaps.back().count << ")\n";
        if (!growth_out.empty()) {
            atomic_write(growth_out, text);
            m.add_output(growth_out);
        }
        return kExitOk;
    });

    // export-hard-negatives ---------------------------------------------------------------------
    auto* hard = app.add_subcommand("export-hard-negatives", "Chips of reviewed false positives as no_kiln labels");
    std::string hard_kilns, hard_out;
    hard->add_option("--kilns", hard_kilns, "Kilns GeoJSON or CSV with a verified column")->required()->check(CLI::ExistingFile);
    hard->add_option("-o,--output", hard_out, "Ground-truth CSV")->required();
    command(hard, "export-hard-negatives", [&](RunManifest& m) {
        m.add_input(hard_kilns);
        const auto rows = detection::export_hard_negatives(detection::read_detections_file(hard_kilns));
        atomic_write(hard_out, render([&](std::ostream& os) { labels::write_ground_truth(rows, os); }));
        m.add_output(hard_out);
        out << rows.size() << " hard-negative chips -> " << hard_out << '\n';
        return kExitOk;
    });

    // parse and run ----------------------------------------------------------------------------
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    for (auto& [sub, entry] : commands) {
        if (!sub->parsed()) continue;
        auto& [name, run] = entry;
        RunManifest manifest;
        manifest.command = name;
        manifest.tool_version = KILN_WATCH_VERSION;
        manifest.started_at = utc_now_iso8601();
        int code = kExitFailure;
        try {
            std::optional<config::Document> doc;
            if (!config_path.empty()) {
                doc = config::parse_file(config_path);
                manifest.add_input(config_path);
            }
            knobs.resolve(name, doc ? &*doc : nullptr);
            knobs.snapshot(name, manifest);
            code = run(manifest);
        } catch (const ParseError& e) {
            err << "kiln-watch " << name << ": " << e.what() << '\n';
        } catch (const Error& e) {
            err << "kiln-watch " << name << ": " << e.what() << '\n';
        } catch (const std::exception& e) {
            err << "kiln-watch " << name << ": unexpected error: " << e.what() << '\n';
        }
        manifest.exit_code = code;
        manifest.finished_at = utc_now_iso8601();
        if (!run_manifest_path.empty()) {
            try {
                manifest.write(run_manifest_path);
            } catch (const Error& e) {
                err << "kiln-watch: cannot write run manifest: " << e.what() << '\n';
                if (code == kExitOk) code = kExitFailure;
            }
        }
        return code;
    }
    err << "kiln-watch: no command given\n";
    return kExitUsage;
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return dispatch(args, std::cout, std::cerr);
}

}  // namespace kw::cli
