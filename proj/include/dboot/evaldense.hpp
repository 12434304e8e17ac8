#pragma once

#include <cstdint>
#include <vector>

#include "dboot/common.hpp"
#include "dboot/encoder.hpp"
#include "dboot/synth.hpp"

namespace dboot {

struct FeatureEntry {
    Vector feature;
    int label = 0;
    std::uint64_t image_id = 0;
};

struct FeatureStore {
    std::vector<FeatureEntry> entries;
    int class_count = 0;
};

// Frozen-encoder patch features of every ratio-th image (canonical views,
// deterministic seeded stride offset).
FeatureStore build_store(const EncoderParams& params, const EncoderConfig& enc_cfg,
                         const std::vector<SceneImage>& dataset,
                         const AugConfig& aug_cfg, int subsample_ratio,
                         int class_count, std::uint64_t seed = 0);

// Exhaustive cosine top-k then majority vote. Vote ties go to the class with
// the smallest cumulative cosine distance among the tied ones, then to the
// smallest class id.
std::vector<int> knn_predict(const FeatureStore& store, const Matrix& queries, int k);

struct SegMetrics {
    std::vector<double> per_class_iou;     // -1 marks a class absent on both sides
    double miou = 0.0;
};

SegMetrics miou(const std::vector<int>& preds, const std::vector<int>& labels,
                int class_count);

struct ProbeResult {
    Matrix weights;  // C x d
    Vector bias;     // C
    std::vector<double> loss_trajectory;  // mean train CE per epoch
    SegMetrics metrics;                   // on the held-out store
};

// Single linear layer trained with patch-wise cross-entropy by full-batch
// gradient descent; deterministic for a fixed seed.
ProbeResult linear_probe(const FeatureStore& train, const FeatureStore& val,
                         int epochs, double lr, std::uint64_t seed);

}  // namespace dboot
