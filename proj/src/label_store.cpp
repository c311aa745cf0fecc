#include "kilnwatch/label_store.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "kilnwatch/toml_lite.hpp"

namespace kw::labels {

using nlohmann::ordered_json;
using Kind = LabelError::Kind;

std::string to_string(Label l) { return l == Label::kiln ? "kiln" : "no_kiln"; }

std::string to_string(BatchStatus s) {
    switch (s) {
        case BatchStatus::open: return "open";
        case BatchStatus::partially_labeled: return "partially_labeled";
        case BatchStatus::agreed: return "agreed";
        case BatchStatus::conflicted: return "conflicted";
        case BatchStatus::resolved: return "resolved";
    }
    return "open";
}

std::string to_string(TruthSource s) {
    switch (s) {
        case TruthSource::agreement: return "agreement";
        case TruthSource::moderator: return "moderator";
        case TruthSource::review: return "review";
    }
    return "agreement";
}

std::string to_string(Role r) { return r == Role::moderator ? "moderator" : "annotator"; }

Label parse_label(const std::string& s) {
    if (s == "kiln") return Label::kiln;
    if (s == "no_kiln") return Label::no_kiln;
    throw LabelError(Kind::bad_request, "label must be `kiln` or `no_kiln`, got `" + s + "`");
}

TruthSource parse_source(const std::string& s) {
    if (s == "agreement") return TruthSource::agreement;
    if (s == "moderator") return TruthSource::moderator;
    if (s == "review") return TruthSource::review;
    throw ValidationError("unknown ground-truth source `" + s + "`");
}

Role parse_role(const std::string& s) {
    if (s == "annotator") return Role::annotator;
    if (s == "moderator") return Role::moderator;
    throw ValidationError("unknown role `" + s + "`");
}

// --- LabelBatch ----------------------------------------------------------------

bool LabelBatch::submitted_by(const std::string& annotator) const { return labels_of(annotator) != nullptr; }

const std::vector<Label>* LabelBatch::labels_of(const std::string& annotator) const {
    for (const auto& [who, labels] : submissions)
        if (who == annotator) return &labels;
    return nullptr;
}

std::vector<std::string> LabelBatch::conflict_chip_ids() const {
    std::vector<std::string> out;
    for (auto pos : conflict_positions) out.push_back(chip_ids[pos]);
    return out;
}

std::vector<LabelRecord> LabelBatch::records() const {
    std::vector<LabelRecord> out;
    for (std::size_t s = 0; s < submissions.size(); ++s)
        for (std::size_t i = 0; i < chip_ids.size(); ++i)
            out.push_back({chip_ids[i], submissions[s].first, submissions[s].second[i], submitted_at[s]});
    return out;
}

// --- events --------------------------------------------------------------------

std::string encode_event(const Event& e) {
    ordered_json j;
    std::visit(
        [&](const auto& ev) {
            using T = std::decay_t<decltype(ev)>;
            if constexpr (std::is_same_v<T, BatchCreated>) {
                j["event"] = "batch";
                j["batch_id"] = ev.batch_id;
                j["lat_c"] = ev.tile_cell.lat_hundredths();
                j["lon_c"] = ev.tile_cell.lon_hundredths();
                j["chip_ids"] = ev.chip_ids;
            } else if constexpr (std::is_same_v<T, Assigned>) {
                j["event"] = "assign";
                j["batch_id"] = ev.batch_id;
                j["annotator"] = ev.annotator;
                j["at"] = ev.at;
            } else if constexpr (std::is_same_v<T, Submitted>) {
                j["event"] = "submit";
                j["batch_id"] = ev.batch_id;
                j["annotator"] = ev.annotator;
                auto& arr = j["labels"] = ordered_json::array();
                for (auto l : ev.labels) arr.push_back(to_string(l));
                j["at"] = ev.at;
            } else {
                j["event"] = "resolve";
                j["batch_id"] = ev.batch_id;
                j["moderator"] = ev.moderator;
                auto& d = j["decisions"] = ordered_json::object();
                for (const auto& [chip, l] : ev.decisions) d[chip] = to_string(l);
                j["at"] = ev.at;
            }
        },
        e);
    return j.dump();
}

namespace {
Event decode_event_json(const nlohmann::json& j);
}  // namespace

Event decode_event(const std::string& line) {
    try {
        return decode_event_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad event: ") + e.what());
    }
}

namespace {
Event decode_event_json(const nlohmann::json& j) {
    const auto type = j.at("event").get<std::string>();
    if (type == "batch") {
        return BatchCreated{j.at("batch_id").get<std::string>(),
                            GridCell::from_hundredths(j.at("lat_c").get<std::int32_t>(), j.at("lon_c").get<std::int32_t>()),
                            j.at("chip_ids").get<std::vector<std::string>>()};
    }
    if (type == "assign")
        return Assigned{j.at("batch_id").get<std::string>(), j.at("annotator").get<std::string>(),
                        j.value("at", std::string{})};
    if (type == "submit") {
        Submitted s{j.at("batch_id").get<std::string>(), j.at("annotator").get<std::string>(), {},
                    j.value("at", std::string{})};
        for (const auto& l : j.at("labels")) s.labels.push_back(parse_label(l.get<std::string>()));
        return s;
    }
    if (type == "resolve") {
        Resolved r{j.at("batch_id").get<std::string>(), j.at("moderator").get<std::string>(), {},
                   j.value("at", std::string{})};
        for (const auto& [chip, l] : j.at("decisions").items()) r.decisions[chip] = parse_label(l.get<std::string>());
        return r;
    }
    throw ParseError("unknown event type `" + type + "`");
}
}  // namespace

// --- LabelState ----------------------------------------------------------------

const LabelBatch* LabelState::find(const std::string& batch_id) const {
    auto it = by_id_.find(batch_id);
    return it == by_id_.end() ? nullptr : &batches_[it->second];
}

LabelBatch& LabelState::mutable_batch(const std::string& batch_id) {
    auto it = by_id_.find(batch_id);
    if (it == by_id_.end()) throw LabelError(Kind::not_found, "unknown batch `" + batch_id + "`");
    return batches_[it->second];
}

void LabelState::check(const BatchCreated& e) const {
    if (by_id_.contains(e.batch_id)) throw LabelError(Kind::state_conflict, "batch `" + e.batch_id + "` exists");
    if (e.chip_ids.size() != kBatchSize)
        throw LabelError(Kind::bad_request, "batch `" + e.batch_id + "` needs exactly 25 chips, has " +
                                                std::to_string(e.chip_ids.size()));
    std::set<std::string> uniq(e.chip_ids.begin(), e.chip_ids.end());
    if (uniq.size() != e.chip_ids.size()) throw LabelError(Kind::bad_request, "duplicate chip ids in batch");
}

void LabelState::check(const Submitted& e) const {
    const LabelBatch* b = find(e.batch_id);
    if (!b) throw LabelError(Kind::not_found, "unknown batch `" + e.batch_id + "`");
    if (std::find(b->assignees.begin(), b->assignees.end(), e.annotator) == b->assignees.end())
        throw LabelError(Kind::forbidden, "`" + e.annotator + "` is not assigned to batch `" + e.batch_id + "`");
    if (b->finalized()) throw LabelError(Kind::state_conflict, "batch `" + e.batch_id + "` is final");
    if (b->submitted_by(e.annotator))
        throw LabelError(Kind::state_conflict, "`" + e.annotator + "` already submitted batch `" + e.batch_id + "`");
    if (b->status == BatchStatus::conflicted)
        throw LabelError(Kind::state_conflict, "batch `" + e.batch_id + "` awaits moderation");
    if (e.labels.size() != kBatchSize)
        throw LabelError(Kind::bad_request, "expected 25 labels, got " + std::to_string(e.labels.size()));
}

void LabelState::check(const Resolved& e) const {
    const LabelBatch* b = find(e.batch_id);
    if (!b) throw LabelError(Kind::not_found, "unknown batch `" + e.batch_id + "`");
    if (b->status != BatchStatus::conflicted)
        throw LabelError(Kind::state_conflict, "batch `" + e.batch_id + "` is " + to_string(b->status) +
                                                   ", not conflicted");
    const auto expected = b->conflict_chip_ids();
    std::set<std::string> want(expected.begin(), expected.end());
    for (const auto& [chip, _] : e.decisions)
        if (!want.contains(chip))
            throw LabelError(Kind::bad_request, "decision for non-conflicting chip `" + chip + "`");
    for (const auto& chip : want)
        if (!e.decisions.contains(chip)) throw LabelError(Kind::bad_request, "missing decision for `" + chip + "`");
}

std::optional<std::pair<std::size_t, bool>> LabelState::pick_for(const std::string& annotator) const {
    for (std::size_t i = 0; i < batches_.size(); ++i) {
        const auto& b = batches_[i];
        if (b.finalized() || b.status == BatchStatus::conflicted || b.submitted_by(annotator)) continue;
        const bool assigned = std::find(b.assignees.begin(), b.assignees.end(), annotator) != b.assignees.end();
        if (assigned) return std::pair{i, false};
        if (b.assignees.size() < kAnnotatorsPerBatch) return std::pair{i, true};
    }
    return std::nullopt;
}

void LabelState::apply(const Event& e) {
    std::visit(
        [&](const auto& ev) {
            using T = std::decay_t<decltype(ev)>;
            if constexpr (std::is_same_v<T, BatchCreated>) {
                LabelBatch b;
                b.batch_id = ev.batch_id;
                b.tile_cell = ev.tile_cell;
                b.chip_ids = ev.chip_ids;
                by_id_[b.batch_id] = batches_.size();
                batches_.push_back(std::move(b));
            } else if constexpr (std::is_same_v<T, Assigned>) {
                auto& b = mutable_batch(ev.batch_id);
                b.assignees.push_back(ev.annotator);
            } else if constexpr (std::is_same_v<T, Submitted>) {
                auto& b = mutable_batch(ev.batch_id);
                b.submissions.emplace_back(ev.annotator, ev.labels);
                b.submitted_at.push_back(ev.at);
                if (b.submissions.size() < kAnnotatorsPerBatch) {
                    b.status = BatchStatus::partially_labeled;
                } else {
                    const auto& x = b.submissions[0].second;
                    const auto& y = b.submissions[1].second;
                    b.conflict_positions.clear();
                    for (std::size_t i = 0; i < x.size(); ++i)
                        if (x[i] != y[i]) b.conflict_positions.push_back(i);
                    b.status = b.conflict_positions.empty() ? BatchStatus::agreed : BatchStatus::conflicted;
                }
            } else {
                auto& b = mutable_batch(ev.batch_id);
                b.moderator_decisions = ev.decisions;
                b.moderator_id = ev.moderator;
                b.resolved_at = ev.at;
                b.status = BatchStatus::resolved;
            }
        },
        e);
}

std::vector<GroundTruthRow> LabelState::ground_truth() const {
    std::vector<GroundTruthRow> rows;
    for (const auto& b : batches_) {
        if (!b.finalized()) continue;
        const auto& agreed = b.submissions[0].second;
        for (std::size_t i = 0; i < b.chip_ids.size(); ++i) {
            auto it = b.moderator_decisions.find(b.chip_ids[i]);
            if (it != b.moderator_decisions.end())
                rows.push_back({b.chip_ids[i], it->second, TruthSource::moderator});
            else
                rows.push_back({b.chip_ids[i], agreed[i], TruthSource::agreement});
        }
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.chip_id < b.chip_id; });
    return rows;
}

std::string LabelState::canonical() const {
    ordered_json arr = ordered_json::array();
    for (const auto& b : batches_) {
        ordered_json j;
        j["batch_id"] = b.batch_id;
        j["cell"] = b.tile_cell.key();
        j["chip_ids"] = b.chip_ids;
        j["assignees"] = b.assignees;
        j["status"] = to_string(b.status);
        auto& subs = j["submissions"] = ordered_json::array();
        for (std::size_t s = 0; s < b.submissions.size(); ++s) {
            ordered_json sj;
            sj["annotator"] = b.submissions[s].first;
            sj["at"] = b.submitted_at[s];
            std::string bits;
            for (auto l : b.submissions[s].second) bits += l == Label::kiln ? '1' : '0';
            sj["labels"] = bits;
            subs.push_back(sj);
        }
        j["conflicts"] = b.conflict_positions;
        auto& dec = j["decisions"] = ordered_json::object();
        for (const auto& [chip, l] : b.moderator_decisions) dec[chip] = to_string(l);
        j["moderator"] = b.moderator_id;
        j["resolved_at"] = b.resolved_at;
        arr.push_back(j);
    }
    return arr.dump();
}

// --- LabelStore ----------------------------------------------------------------

LabelStore::LabelStore(std::filesystem::path log_path, std::vector<User> users, NowFn now)
    : log_path_(std::move(log_path)), users_(std::move(users)), now_(std::move(now)) {
    if (!now_) now_ = [] { return ingest::format_iso8601(ingest::Clock::now()); };
    std::set<std::string> ids, tokens;
    for (const auto& u : users_) {
        if (u.id.empty()) throw ValidationError("user id must not be empty");
        if (!ids.insert(u.id).second) throw ValidationError("duplicate user id `" + u.id + "`");
        if (!u.token.empty() && !tokens.insert(u.token).second) throw ValidationError("duplicate user token");
    }
    if (std::filesystem::exists(log_path_)) state_ = replay(log_path_);
    if (log_path_.has_parent_path()) std::filesystem::create_directories(log_path_.parent_path());
    log_ = std::fopen(log_path_.c_str(), "a");
    if (!log_) throw IoError("cannot open label log " + log_path_.string());
}

LabelStore::~LabelStore() {
    if (log_) std::fclose(log_);
}

void LabelStore::append(const Event& e) {
    const std::string line = encode_event(e) + "\n";
    if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fflush(log_) != 0)
        throw IoError("label log write failed");
    ::fsync(::fileno(log_));
    state_.apply(e);
}

const User* LabelStore::user(const std::string& id) const {
    for (const auto& u : users_)
        if (u.id == id) return &u;
    return nullptr;
}

const User* LabelStore::user_by_token(const std::string& token) const {
    if (token.empty()) return nullptr;
    for (const auto& u : users_)
        if (u.token == token) return &u;
    return nullptr;
}

void LabelStore::require_role(const std::string& id, Role role) const {
    const User* u = user(id);
    if (!u) throw LabelError(Kind::unknown_user, "unknown user `" + id + "`");
    if (u->role != role) throw LabelError(Kind::forbidden, "`" + id + "` is not a " + to_string(role));
}

std::size_t LabelStore::register_batch(const std::string& batch_id, const GridCell& cell,
                                       std::vector<std::string> chip_ids) {
    std::lock_guard lock(mu_);
    if (state_.find(batch_id)) return 0;
    BatchCreated e{batch_id, cell, std::move(chip_ids)};
    state_.check(e);
    append(e);
    return 1;
}

std::size_t LabelStore::register_batches(const std::vector<ingest::ManifestRow>& manifest) {
    std::vector<GridCell> order;
    std::map<GridCell, std::vector<const ingest::ManifestRow*>> by_cell;
    for (const auto& row : manifest) {
        auto& v = by_cell[row.chip.tile_cell];
        if (v.empty()) order.push_back(row.chip.tile_cell);
        v.push_back(&row);
    }
    std::size_t created = 0;
    for (const auto& cell : order) {
        auto rows = by_cell[cell];
        std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) {
            return std::pair{a->chip.row, a->chip.col} < std::pair{b->chip.row, b->chip.col};
        });
        std::vector<std::string> ids;
        for (auto* r : rows) ids.push_back(r->chip.chip_id);
        created += register_batch(cell.key(), cell, std::move(ids));
    }
    return created;
}

std::optional<LabelBatch> LabelStore::next_batch(const std::string& annotator_id) {
    std::lock_guard lock(mu_);
    require_role(annotator_id, Role::annotator);
    auto pick = state_.pick_for(annotator_id);
    if (!pick) return std::nullopt;
    const auto& b = state_.batches()[pick->first];
    if (pick->second) append(Assigned{b.batch_id, annotator_id, now_()});
    return state_.batches()[pick->first];
}

BatchStatus LabelStore::submit_labels(const std::string& batch_id, const std::string& annotator_id,
                                      std::vector<Label> labels) {
    std::lock_guard lock(mu_);
    require_role(annotator_id, Role::annotator);
    Submitted e{batch_id, annotator_id, std::move(labels), now_()};
    state_.check(e);
    append(e);
    return state_.find(batch_id)->status;
}

BatchStatus LabelStore::resolve_conflict(const std::string& batch_id, const std::string& moderator_id,
                                         const std::map<std::string, Label>& decisions) {
    std::lock_guard lock(mu_);
    require_role(moderator_id, Role::moderator);
    Resolved e{batch_id, moderator_id, decisions, now_()};
    state_.check(e);
    append(e);
    return state_.find(batch_id)->status;
}

std::vector<LabelBatch> LabelStore::conflicts() const {
    std::lock_guard lock(mu_);
    std::vector<LabelBatch> out;
    for (const auto& b : state_.batches())
        if (b.status == BatchStatus::conflicted) out.push_back(b);
    return out;
}

std::optional<LabelBatch> LabelStore::batch(const std::string& batch_id) const {
    std::lock_guard lock(mu_);
    if (const auto* b = state_.find(batch_id)) return *b;
    return std::nullopt;
}

StoreStats LabelStore::stats() const {
    std::lock_guard lock(mu_);
    StoreStats s;
    for (auto st : {BatchStatus::open, BatchStatus::partially_labeled, BatchStatus::agreed, BatchStatus::conflicted,
                    BatchStatus::resolved})
        s.batches_by_status[to_string(st)] = 0;
    for (const auto& u : users_)
        if (u.role == Role::annotator) s.batches_per_annotator[u.id] = 0;
    for (const auto& b : state_.batches()) {
        ++s.batches_by_status[to_string(b.status)];
        for (const auto& [who, _] : b.submissions) ++s.batches_per_annotator[who];
        if (b.finalized()) s.finalized_chips += b.chip_ids.size();
    }
    return s;
}

LabelState LabelStore::snapshot() const {
    std::lock_guard lock(mu_);
    return state_;
}

LabelState LabelStore::replay(const std::filesystem::path& log_path) {
    std::ifstream in(log_path);
    if (!in) throw IoError("cannot open label log " + log_path.string());
    LabelState state;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const Event e = decode_event(line);
            std::visit(
                [&](const auto& ev) {
                    if constexpr (!std::is_same_v<std::decay_t<decltype(ev)>, Assigned>) state.check(ev);
                },
                e);
            state.apply(e);
        } catch (const ParseError& ex) {
            throw ParseError(std::string("corrupt label log: ") + ex.what(), line_no);
        } catch (const LabelError& ex) {
            throw ParseError(std::string("inconsistent label log: ") + ex.what(), line_no);
        }
    }
    return state;
}

// --- CSV -----------------------------------------------------------------------

void write_ground_truth(const std::vector<GroundTruthRow>& rows, std::ostream& out) {
    out << "chip_id,final_label,source\n";
    for (const auto& r : rows) out << r.chip_id << ',' << to_string(r.final_label) << ',' << to_string(r.source) << '\n';
}

void export_ground_truth(const LabelState& state, std::ostream& out) { write_ground_truth(state.ground_truth(), out); }

std::vector<GroundTruthRow> read_ground_truth(std::istream& in) {
    std::vector<GroundTruthRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != "chip_id,final_label,source") throw ParseError("unexpected ground-truth header", 1);
            continue;
        }
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string chip, label, source, extra;
        if (!std::getline(ss, chip, ',') || !std::getline(ss, label, ',') || !std::getline(ss, source, ',') ||
            std::getline(ss, extra, ','))
            throw ParseError("expected 3 columns", line_no);
        try {
            rows.push_back({chip, parse_label(label), parse_source(source)});
        } catch (const ValidationError& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return rows;
}

std::vector<User> read_users(const std::filesystem::path& config_path) {
    const auto doc = config::parse_file(config_path);
    std::vector<User> users;
    for (const auto& t : doc.array("user")) {
        User u;
        u.id = t.get_string("id").value_or("");
        u.role = parse_role(t.get_string("role").value_or("annotator"));
        u.token = t.get_string("token").value_or("");
        if (u.id.empty() || u.token.empty()) throw ValidationError("each [[user]] needs id and token");
        users.push_back(std::move(u));
    }
    return users;
}

}  // namespace kw::labels
