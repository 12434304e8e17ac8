#include "dboot/bootstrap.hpp"

#include <cmath>

namespace dboot {

ObjectKey jump(const ObjectKey& key) {
    ObjectKey out = key;
    out.view = (key.view == 1) ? 2 : 1;
    return out;
}

void MemoryBank::insert(std::uint64_t image_id,
                        const std::vector<std::pair<int, Vector>>& objects) {
    BankGroup g{image_id, objects};
    for (const auto& [k, rep] : g.objects) {
        if (!rep.allFinite() || rep.norm() == 0.0)
            throw NumericError("bank_insert: non-finite or zero representation");
    }
    groups_.push_back(std::move(g));
    while (static_cast<int>(groups_.size()) > capacity_) groups_.pop_front();
}

void MemoryBank::restore(std::deque<BankGroup> groups) {
    if (static_cast<int>(groups.size()) > capacity_)
        throw InternalError("bank restore: more groups than capacity");
    groups_ = std::move(groups);
}

std::vector<BankEntry> MemoryBank::snapshot() const {
    std::vector<BankEntry> out;
    for (const auto& g : groups_)
        for (const auto& [k, rep] : g.objects)
            out.push_back({ObjectKey{g.image_id, view_index_, k}, rep});
    return out;
}

std::vector<std::uint64_t> MemoryBank::image_ids() const {
    std::vector<std::uint64_t> out;
    for (const auto& g : groups_) out.push_back(g.image_id);
    return out;
}

std::optional<Vector> MemoryBank::find(std::uint64_t image_id, int k) const {
    for (const auto& g : groups_) {
        if (g.image_id != image_id) continue;
        for (const auto& [kk, rep] : g.objects)
            if (kk == k) return rep;
    }
    return std::nullopt;
}

std::optional<RetrievalHit> nn_retrieve(const Vector& query,
                                        const std::vector<Vector>& collection) {
    if (collection.empty()) return std::nullopt;
    double qn = query.norm();
    if (!(qn > 0.0) || !query.allFinite())
        throw NumericError("nn_retrieve: zero or non-finite query");
    RetrievalHit best;
    for (std::size_t i = 0; i < collection.size(); ++i) {
        const Vector& c = collection[i];
        double cn = c.norm();
        double cosine = (cn > 0.0) ? query.dot(c) / (qn * cn) : -1.0;
        if (cosine > best.cosine) {
            best.cosine = cosine;
            best.index = static_cast<int>(i);
        }
    }
    return best;
}

MatchRecord cycle_consistent(const BatchObject& query, const MemoryBank& bank_same,
                             const MemoryBank& bank_other,
                             const std::vector<BatchObject>& batch_same_view,
                             const std::vector<BatchObject>& batch_other_view) {
    (void)batch_same_view;
    MatchRecord rec;
    rec.object_key = query.key;
    if (bank_same.empty() || bank_other.empty()) {
        rec.warmup = true;
        return rec;
    }

    // Hop 1: nearest neighbor in the same-view bank.
    auto entries = bank_same.snapshot();
    std::vector<Vector> reps;
    reps.reserve(entries.size());
    for (const auto& e : entries) reps.push_back(e.rep);
    auto hit = nn_retrieve(query.rep, reps);
    if (!hit) {
        rec.warmup = true;
        return rec;
    }
    rec.nn_key = entries[hit->index].key;
    rec.nn_rep = entries[hit->index].rep;
    rec.cosine = hit->cosine;

    // Hop 2: jump to the other view's stored counterpart.
    ObjectKey jumped = jump(rec.nn_key);
    auto counterpart = bank_other.find(jumped.image_id, jumped.k);
    if (!counterpart)
        throw InternalError("cycle_consistent: bank counterpart missing; banks must "
                            "store only objects spanning both views");

    // Hop 3: nearest neighbor in the other view's batch objects.
    if (batch_other_view.empty()) {
        rec.warmup = true;
        return rec;
    }
    std::vector<Vector> batch_reps;
    batch_reps.reserve(batch_other_view.size());
    for (const auto& b : batch_other_view) batch_reps.push_back(b.rep);
    auto hit2 = nn_retrieve(*counterpart, batch_reps);

    // Hop 4: jump back and compare keys.
    ObjectKey back = jump(batch_other_view[hit2->index].key);
    rec.cycle_consistent = (back == query.key);
    return rec;
}

RatioReport bootstrapping_ratio(const std::vector<MatchRecord>& records) {
    RatioReport r;
    if (records.empty()) {
        r.empty = true;
        return r;
    }
    int consistent = 0;
    for (const auto& rec : records) consistent += rec.cycle_consistent ? 1 : 0;
    r.ratio = static_cast<double>(consistent) / static_cast<double>(records.size());
    return r;
}

}  // namespace dboot
