#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dboot/bootstrap.hpp"
#include "dboot/config.hpp"
#include "dboot/encoder.hpp"
#include "dboot/evaldense.hpp"
#include "dboot/objectives.hpp"

namespace dboot {

struct TrainState {
    EncoderParams student;
    EncoderParams teacher;
    TeacherCenter center;
    AdamW opt;
    MemoryBank bank1{1, 1};
    MemoryBank bank2{2, 1};
    std::int64_t step = 0;
    int epoch = 0;  // next epoch to run
    Rng rng;
};

TrainState init_state(const RunConfig& cfg);

// Deterministic synthetic datasets; train and eval use disjoint seed streams.
std::vector<SceneImage> build_train_dataset(const RunConfig& cfg);
std::vector<SceneImage> build_eval_dataset(const RunConfig& cfg);

ViewPairBatch make_batch(const std::vector<SceneImage>& dataset,
                         const std::vector<int>& indices, std::uint64_t epoch_seed,
                         const RunConfig& cfg);

LossReport train_step(TrainState& state, const ViewPairBatch& batch,
                      const RunConfig& cfg);

// Versioned little-endian binary container; save -> load -> save is
// byte-identical. Writes go through a temp file and a rename.
void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

struct RunSummary {
    std::vector<double> epoch_loss;   // mean l_total per epoch
    std::vector<double> epoch_ratio;  // mean bootstrapping ratio per epoch
    std::string checkpoint_path;
    std::string metrics_path;
};

RunSummary run_pretrain(const RunConfig& cfg, const std::string& out_dir,
                        const std::string& resume_path = "");

// Dense nearest-neighbor retrieval mIoU for one subsample ratio, using the
// frozen teacher encoder.
SegMetrics eval_knn(const EncoderParams& teacher, const RunConfig& cfg, int ratio);

struct EvalRow {
    int ratio;
    double miou;
};
std::vector<EvalRow> run_eval_knn(const TrainState& state, const RunConfig& cfg,
                                  const std::string& out_csv);

SegMetrics run_eval_probe(const TrainState& state, const RunConfig& cfg,
                          const std::string& out_csv);

// Debug artifact: JSON with per-pair hard-assignment grids for one seeded
// view pair, clustered with the given encoder's dense features.
void cluster_debug_dump(const RunConfig& cfg, const EncoderParams& params,
                        std::uint64_t seed, const std::string& out_json);

}  // namespace dboot
