#pragma once

// Simulated labeling campaign shared by the label tests and the acceptance run.

#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kilnwatch/label_store.hpp"
#include "kilnwatch/tile_ingest.hpp"

namespace kwtest {

inline std::vector<kw::ingest::ManifestRow> synthetic_manifest(int cells) {
    std::vector<kw::ingest::ManifestRow> rows;
    for (int i = 0; i < cells; ++i) {
        const auto cell = kw::GridCell::from_hundredths(2500 + i / 50, 8000 + i % 50);
        for (const auto& ref : kw::ingest::chip_refs(kw::ingest::TileRequest::for_cell(cell))) {
            kw::ingest::ManifestRow row;
            row.chip = ref;
            row.image = "tiles/" + cell.key() + "_z16s2.png";
            row.fetched_at = "2024-01-01T00:00:00Z";
            rows.push_back(row);
        }
    }
    return rows;
}

inline std::vector<kw::labels::User> campaign_users() {
    using kw::labels::Role;
    return {{"ann1", Role::annotator, "t-ann1"}, {"ann2", Role::annotator, "t-ann2"}, {"mod", Role::moderator, "t-mod"}};
}

struct CampaignResult {
    std::size_t batches = 0;
    std::size_t conflicted_batches = 0;
    std::size_t disagreements = 0;
    std::map<std::string, kw::labels::Label> truth;          // what the moderator decides
    std::map<std::string, kw::labels::Label> first_labels;   // ann1's labels
    std::set<std::string> disputed;
};

// Two annotators label every batch; the second flips each chip with probability `flip`.
// The moderator then resolves every conflict in favour of the hidden truth.
inline CampaignResult run_campaign(kw::labels::LabelStore& store, std::uint64_t seed, double flip) {
    using kw::labels::Label;
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution kiln(0.2), disagree(flip);
    CampaignResult res;
    for (;;) {
        auto b1 = store.next_batch("ann1");
        if (!b1) break;
        auto b2 = store.next_batch("ann2");
        if (!b2 || b2->batch_id != b1->batch_id) throw std::logic_error("annotators were served different batches");
        std::vector<Label> l1, l2;
        for (const auto& chip : b1->chip_ids) {
            const Label t = kiln(rng) ? Label::kiln : Label::no_kiln;
            res.truth[chip] = t;
            res.first_labels[chip] = t;
            l1.push_back(t);
            if (disagree(rng)) {
                l2.push_back(t == Label::kiln ? Label::no_kiln : Label::kiln);
                res.disputed.insert(chip);
                ++res.disagreements;
            } else {
                l2.push_back(t);
            }
        }
        store.submit_labels(b1->batch_id, "ann1", l1);
        if (store.submit_labels(b1->batch_id, "ann2", l2) == kw::labels::BatchStatus::conflicted) ++res.conflicted_batches;
        ++res.batches;
    }
    for (const auto& b : store.conflicts()) {
        std::map<std::string, Label> decisions;
        for (const auto& chip : b.conflict_chip_ids()) decisions[chip] = res.truth.at(chip);
        store.resolve_conflict(b.batch_id, "mod", decisions);
    }
    return res;
}

}  // namespace kwtest
