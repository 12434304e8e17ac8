#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "dboot/common.hpp"

namespace dboot {

struct ObjectKey {
    std::uint64_t image_id = 0;
    int view = 1;  // 1 or 2
    int k = 0;     // cluster index within the image

    bool operator==(const ObjectKey&) const = default;
};

ObjectKey jump(const ObjectKey& key);

struct BankEntry {
    ObjectKey key;
    Vector rep;
};

struct BankGroup {
    std::uint64_t image_id;
    std::vector<std::pair<int, Vector>> objects;  // (k, rep)
};

// FIFO store of object representations grouped by source image, one bank per
// view index. Capacity is measured in images.
class MemoryBank {
public:
    MemoryBank(int view_index, int capacity_images)
        : view_index_(view_index), capacity_(capacity_images) {}

    int view_index() const { return view_index_; }
    int capacity() const { return capacity_; }
    int image_count() const { return static_cast<int>(groups_.size()); }
    bool empty() const { return groups_.empty(); }

    // Appends one image's valid objects as a group; evicts FIFO past capacity.
    void insert(std::uint64_t image_id, const std::vector<std::pair<int, Vector>>& objects);

    // Flattened entries in insertion order.
    std::vector<BankEntry> snapshot() const;

    std::vector<std::uint64_t> image_ids() const;

    // Entry for (image_id, k) if present.
    std::optional<Vector> find(std::uint64_t image_id, int k) const;

    // Grouped contents, oldest first (serialization support).
    const std::deque<BankGroup>& groups() const { return groups_; }
    void restore(std::deque<BankGroup> groups);

private:
    int view_index_;
    int capacity_;
    std::deque<BankGroup> groups_;
};

struct RetrievalHit {
    int index = -1;  // insertion index within the scanned collection
    double cosine = -2.0;
};

// Exhaustive cosine argmax; ties go to the smallest insertion index.
// Empty collections yield nullopt (caller skips the cross-image loss).
std::optional<RetrievalHit> nn_retrieve(const Vector& query,
                                        const std::vector<Vector>& collection);

struct BatchObject {
    ObjectKey key;
    Vector rep;  // teacher representation
};

struct MatchRecord {
    ObjectKey object_key;
    ObjectKey nn_key;       // matched bank entry (first hop)
    Vector nn_rep;          // its stored representation
    double cosine = 0.0;
    bool cycle_consistent = false;
    bool warmup = false;    // bank was empty, criterion vacuously false
};

// Full cycle trace for one batch object: bank hop, jump, batch hop,
// jump back, then key identity with the starting object.
MatchRecord cycle_consistent(const BatchObject& query, const MemoryBank& bank_same,
                             const MemoryBank& bank_other,
                             const std::vector<BatchObject>& batch_same_view,
                             const std::vector<BatchObject>& batch_other_view);

struct RatioReport {
    double ratio = 0.0;
    bool empty = false;  // no valid objects in the batch
};

RatioReport bootstrapping_ratio(const std::vector<MatchRecord>& records);

}  // namespace dboot
