#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "kilnwatch/errors.hpp"
#include "kilnwatch/geo.hpp"
#include "kilnwatch/tile_ingest.hpp"

namespace kw::labels {

inline constexpr std::size_t kBatchSize = 25;
inline constexpr std::size_t kAnnotatorsPerBatch = 2;

enum class Label { no_kiln, kiln };
enum class BatchStatus { open, partially_labeled, agreed, conflicted, resolved };
enum class TruthSource { agreement, moderator, review };
enum class Role { annotator, moderator };

std::string to_string(Label l);
std::string to_string(BatchStatus s);
std::string to_string(TruthSource s);
std::string to_string(Role r);
Label parse_label(const std::string& s);
TruthSource parse_source(const std::string& s);
Role parse_role(const std::string& s);

class LabelError : public ValidationError {
public:
    enum class Kind { unknown_user, forbidden, not_found, state_conflict, bad_request };
    LabelError(Kind kind, const std::string& what) : ValidationError(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct User {
    std::string id;
    Role role = Role::annotator;
    std::string token;
};

struct LabelRecord {
    std::string chip_id;
    std::string annotator_id;
    Label label = Label::no_kiln;
    std::string at;
};

struct LabelBatch {
    std::string batch_id;
    GridCell tile_cell;
    std::vector<std::string> chip_ids;  // exactly 25, row-major
    std::vector<std::string> assignees;
    BatchStatus status = BatchStatus::open;
    // Submission order is kept so replay is deterministic.
    std::vector<std::pair<std::string, std::vector<Label>>> submissions;
    std::vector<std::string> submitted_at;
    std::vector<std::size_t> conflict_positions;
    std::map<std::string, Label> moderator_decisions;
    std::string moderator_id;
    std::string resolved_at;

    bool submitted_by(const std::string& annotator) const;
    const std::vector<Label>* labels_of(const std::string& annotator) const;
    bool finalized() const noexcept { return status == BatchStatus::agreed || status == BatchStatus::resolved; }
    std::vector<std::string> conflict_chip_ids() const;
    std::vector<LabelRecord> records() const;
};

struct GroundTruthRow {
    std::string chip_id;
    Label final_label = Label::no_kiln;
    TruthSource source = TruthSource::agreement;
    friend bool operator==(const GroundTruthRow&, const GroundTruthRow&) = default;
};

// --- events ------------------------------------------------------------------

struct BatchCreated {
    std::string batch_id;
    GridCell tile_cell;
    std::vector<std::string> chip_ids;
};
struct Assigned {
    std::string batch_id;
    std::string annotator;
    std::string at;
};
struct Submitted {
    std::string batch_id;
    std::string annotator;
    std::vector<Label> labels;
    std::string at;
};
struct Resolved {
    std::string batch_id;
    std::string moderator;
    std::map<std::string, Label> decisions;
    std::string at;
};
using Event = std::variant<BatchCreated, Assigned, Submitted, Resolved>;

std::string encode_event(const Event& e);
Event decode_event(const std::string& line);

// Pure state: a fold over events. `check_*` validate a would-be event against the current
// state and throw LabelError; `apply` assumes the event is valid.
class LabelState {
public:
    void apply(const Event& e);

    void check(const BatchCreated& e) const;
    void check(const Submitted& e) const;
    void check(const Resolved& e) const;

    const std::vector<LabelBatch>& batches() const noexcept { return batches_; }
    const LabelBatch* find(const std::string& batch_id) const;
    // Batch the annotator would be served next, and whether serving it needs a new assignment.
    std::optional<std::pair<std::size_t, bool>> pick_for(const std::string& annotator) const;

    std::vector<GroundTruthRow> ground_truth() const;  // sorted by chip_id
    // Canonical JSON of the whole state; equal strings mean equal states.
    std::string canonical() const;

private:
    LabelBatch& mutable_batch(const std::string& batch_id);

    std::vector<LabelBatch> batches_;
    std::map<std::string, std::size_t> by_id_;
};

struct StoreStats {
    std::map<std::string, std::size_t> batches_by_status;
    std::map<std::string, std::size_t> batches_per_annotator;  // submitted batches
    std::size_t finalized_chips = 0;
};

// Durable store: every accepted command is appended to the JSON Lines event log before
// it is applied to the in-memory state. All writes are serialized by one mutex.
class LabelStore {
public:
    using NowFn = std::function<std::string()>;

    LabelStore(std::filesystem::path log_path, std::vector<User> users, NowFn now = {});
    ~LabelStore();
    LabelStore(const LabelStore&) = delete;
    LabelStore& operator=(const LabelStore&) = delete;

    // One batch per tile cell, in first-appearance order. Cells already in the log are skipped.
    std::size_t register_batches(const std::vector<ingest::ManifestRow>& manifest);
    std::size_t register_batch(const std::string& batch_id, const GridCell& cell, std::vector<std::string> chip_ids);

    std::optional<LabelBatch> next_batch(const std::string& annotator_id);
    BatchStatus submit_labels(const std::string& batch_id, const std::string& annotator_id, std::vector<Label> labels);
    BatchStatus resolve_conflict(const std::string& batch_id, const std::string& moderator_id,
                                 const std::map<std::string, Label>& decisions);

    std::vector<LabelBatch> conflicts() const;
    std::optional<LabelBatch> batch(const std::string& batch_id) const;
    StoreStats stats() const;
    LabelState snapshot() const;
    const User* user_by_token(const std::string& token) const;
    const User* user(const std::string& id) const;

    static LabelState replay(const std::filesystem::path& log_path);

private:
    void require_role(const std::string& id, Role role) const;
    void append(const Event& e);

    mutable std::mutex mu_;
    std::filesystem::path log_path_;
    std::FILE* log_ = nullptr;
    std::vector<User> users_;
    NowFn now_;
    LabelState state_;
};

// CSV `chip_id,final_label,source`, sorted by chip_id, header always present.
void export_ground_truth(const LabelState& state, std::ostream& out);
void write_ground_truth(const std::vector<GroundTruthRow>& rows, std::ostream& out);
std::vector<GroundTruthRow> read_ground_truth(std::istream& in);

std::vector<User> read_users(const std::filesystem::path& config_path);

}  // namespace kw::labels
