#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dboot/clustering.hpp"
#include "dboot/common.hpp"
#include "dboot/rng.hpp"

namespace dboot {

struct SceneConfig {
    int img_h = 64;
    int img_w = 64;
    int classes = 4;      // including background class 0
    int min_objects = 1;
    int max_objects = 3;
    int patch_size = 8;   // views must tile into patches of this size
    double pixel_noise = 0.02;
    // Per-scene photometric nuisance: channel gains in [1-g, 1+g] and a
    // shared offset in [-o, o]. Makes raw color an unreliable class cue
    // across scenes, which is what the encoder has to learn away.
    double scene_gain = 0.25;
    double scene_offset = 0.15;

    void validate() const;
};

enum class ShapeKind { Rect, Disk, Triangle };

struct ShapeSpec {
    ShapeKind kind;
    int class_id;
    std::array<double, 3> color;
    // Rect: (x0,y0,x1,y1). Disk: (cx,cy,r,_). Triangle uses pts.
    std::array<double, 4> box{};
    std::array<double, 6> pts{};  // triangle vertices x0,y0,x1,y1,x2,y2

    bool covers(double x, double y) const;
};

struct SceneImage {
    std::array<Matrix, 3> pixels;  // H x W per channel, values in [0,1]
    Eigen::MatrixXi labels;        // H x W class ids in [0, C)
    std::uint64_t image_id = 0;
    std::vector<ShapeSpec> shapes;  // draw list, background excluded

    int height() const { return labels.rows(); }
    int width() const { return labels.cols(); }
};

// Base color of a class before per-scene jitter.
std::array<double, 3> class_palette(int class_id);

SceneImage generate_scene(std::uint64_t seed, const SceneConfig& cfg);

struct AugConfig {
    int view_h = 32;
    int view_w = 32;
    int patch_size = 8;
    double crop_min = 0.5;   // crop side as a fraction of the source side
    double crop_max = 1.0;
    double flip_prob = 0.5;
    double brightness = 0.2;  // additive, per view
    double contrast = 0.2;    // multiplicative, per channel per view
    double min_overlap = 0.3;  // IoU of the two crop boxes in source space
    int max_retries = 100;

    void validate(const SceneConfig& scene) const;
};

struct CropBox {
    double x0 = 0, y0 = 0, w = 0, h = 0;  // source-image pixels
};

struct AugmentedView {
    std::array<Matrix, 3> pixels;  // view_h x view_w
    Eigen::VectorXi patch_labels;  // N, majority pixel label per patch
    Matrix patch_coords;           // N x 2, source coords normalized to [0,1]
    CropBox crop_box;
    bool flip = false;
    int patch_size = 0;

    int height() const { return static_cast<int>(pixels[0].rows()); }
    int width() const { return static_cast<int>(pixels[0].cols()); }
    int patch_count() const { return static_cast<int>(patch_labels.size()); }
};

// Closed-form map from a view-local point to normalized source coordinates.
// Exposed so tests (and patch_coords consumers) share one definition.
std::array<double, 2> view_to_source_norm(const CropBox& crop, bool flip,
                                          int view_h, int view_w,
                                          double vx, double vy,
                                          int img_h, int img_w);

// Identity augmentation: full crop, no flip, no photometric jitter.
AugmentedView canonical_view(const SceneImage& img, const AugConfig& cfg);

std::pair<AugmentedView, AugmentedView> augment_pair(const SceneImage& img,
                                                     std::uint64_t seed,
                                                     const AugConfig& cfg);

struct ViewPairItem {
    std::uint64_t image_id;
    AugmentedView view1;
    AugmentedView view2;
};

struct ViewPairBatch {
    std::vector<ViewPairItem> items;
    int batch_size() const { return static_cast<int>(items.size()); }
};

void write_manifest(const std::string& path, const SceneConfig& scene,
                    const AugConfig& aug);

// Supervised-oracle pooling: one object representation per label present in
// the view, each the mean of its patches' token vectors.
ObjectSet ground_truth_object_pool(const AugmentedView& view,
                                   const Matrix& dense_tokens);

}  // namespace dboot
