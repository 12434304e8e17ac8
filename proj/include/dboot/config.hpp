#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dboot/clustering.hpp"
#include "dboot/encoder.hpp"
#include "dboot/objectives.hpp"
#include "dboot/synth.hpp"

namespace dboot {

struct EvalConfig {
    int knn_k = 5;
    std::vector<int> ratios = {1, 8, 64, 128};
    int eval_scenes = 64;
    int probe_epochs = 100;
    double probe_lr = 1.0;
};

struct RunConfig {
    SceneConfig scene;
    AugConfig aug;
    EncoderConfig encoder;
    ClusterConfig cluster;
    LossConfig loss;
    EvalConfig eval;
    std::string cluster_algorithm = "sinkhorn";  // or "kmeans"

    int bank_size = 64;  // images per view queue
    int batch_size = 16;
    int epochs = 30;
    int train_scenes = 256;
    double lr = 3e-3;
    double weight_decay = 1e-4;
    double ema_momentum = 0.996;
    int checkpoint_every = 10;  // epochs
    std::uint64_t seed = 0;

    void validate() const;
};

// Flat key=value lines with dotted namespaces (e.g. cluster.k=32).
// Unknown keys are rejected; '#' starts a comment.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value);
std::string dump_config(const RunConfig& cfg);

}  // namespace dboot
