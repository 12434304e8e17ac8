#include "dboot/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace dboot {

void SceneConfig::validate() const {
    if (classes < 2) throw ConfigError("scene: need at least 2 classes");
    if (img_h <= 0 || img_w <= 0) throw ConfigError("scene: bad image size");
    if (patch_size <= 0 || img_h % patch_size != 0 || img_w % patch_size != 0)
        throw ConfigError("scene: image size must be divisible by patch size");
    if (min_objects < 0 || max_objects < min_objects)
        throw ConfigError("scene: bad object count range");
}

std::array<double, 3> class_palette(int class_id) {
    static const std::array<double, 3> base[] = {
        {0.25, 0.25, 0.25},  // background
        {0.85, 0.15, 0.15},
        {0.15, 0.75, 0.20},
        {0.20, 0.30, 0.85},
        {0.85, 0.80, 0.20},
        {0.70, 0.20, 0.80},
        {0.15, 0.75, 0.75},
        {0.90, 0.55, 0.15},
    };
    if (class_id < 8) return base[class_id];
    // Deterministic pseudo-colors past the fixed palette.
    Rng r(0x5EEDC01Full + static_cast<std::uint64_t>(class_id));
    return {0.2 + 0.6 * r.uniform(), 0.2 + 0.6 * r.uniform(),
            0.2 + 0.6 * r.uniform()};
}

bool ShapeSpec::covers(double x, double y) const {
    switch (kind) {
        case ShapeKind::Rect:
            return x >= box[0] && x <= box[2] && y >= box[1] && y <= box[3];
        case ShapeKind::Disk: {
            double dx = x - box[0], dy = y - box[1];
            return dx * dx + dy * dy <= box[2] * box[2];
        }
        case ShapeKind::Triangle: {
            auto edge = [](double ax, double ay, double bx, double by,
                           double px, double py) {
                return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
            };
            double d0 = edge(pts[0], pts[1], pts[2], pts[3], x, y);
            double d1 = edge(pts[2], pts[3], pts[4], pts[5], x, y);
            double d2 = edge(pts[4], pts[5], pts[0], pts[1], x, y);
            bool neg = (d0 < 0) || (d1 < 0) || (d2 < 0);
            bool pos = (d0 > 0) || (d1 > 0) || (d2 > 0);
            return !(neg && pos);
        }
    }
    return false;
}

static double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

SceneImage generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
    cfg.validate();
    Rng rng(Rng::derive(seed, 0xA11CE));

    const int h = cfg.img_h, w = cfg.img_w;
    const double dim = std::min(h, w);

    // Per-scene photometric nuisance shared by all classes in the scene.
    std::array<double, 3> gain, offset;
    for (int c = 0; c < 3; ++c) gain[c] = rng.uniform(1.0 - cfg.scene_gain, 1.0 + cfg.scene_gain);
    double off = rng.uniform(-cfg.scene_offset, cfg.scene_offset);
    for (int c = 0; c < 3; ++c) offset[c] = off;

    auto scene_color = [&](int class_id) {
        auto base = class_palette(class_id);
        std::array<double, 3> out;
        for (int c = 0; c < 3; ++c) out[c] = clamp01(base[c] * gain[c] + offset[c]);
        return out;
    };

    SceneImage img;
    img.image_id = seed;
    img.labels = Eigen::MatrixXi::Zero(h, w);
    auto bg = scene_color(0);
    for (int c = 0; c < 3; ++c) img.pixels[c] = Matrix::Constant(h, w, bg[c]);

    int n_objects = cfg.min_objects +
                    static_cast<int>(rng.below(cfg.max_objects - cfg.min_objects + 1));
    for (int i = 0; i < n_objects; ++i) {
        ShapeSpec s;
        s.kind = static_cast<ShapeKind>(rng.below(3));
        s.class_id = 1 + static_cast<int>(rng.below(cfg.classes - 1));
        s.color = scene_color(s.class_id);
        double size = rng.uniform(0.15, 0.45) * dim;
        double cx = rng.uniform(size * 0.5, w - size * 0.5);
        double cy = rng.uniform(size * 0.5, h - size * 0.5);
        switch (s.kind) {
            case ShapeKind::Rect: {
                double hw = size * 0.5, hh = rng.uniform(0.5, 1.0) * size * 0.5;
                s.box = {cx - hw, cy - hh, cx + hw, cy + hh};
                break;
            }
            case ShapeKind::Disk:
                s.box = {cx, cy, size * 0.5, 0.0};
                break;
            case ShapeKind::Triangle:
                for (int v = 0; v < 3; ++v) {
                    double ang = rng.uniform(0.0, 2.0 * M_PI);
                    double rad = rng.uniform(0.4, 0.6) * size;
                    s.pts[2 * v] = cx + rad * std::cos(ang);
                    s.pts[2 * v + 1] = cy + rad * std::sin(ang);
                }
                break;
        }
        img.shapes.push_back(s);
    }

    // Later shapes occlude earlier ones; test at pixel centers.
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double x = c + 0.5, y = r + 0.5;
            for (const auto& s : img.shapes) {
                if (s.covers(x, y)) {
                    img.labels(r, c) = s.class_id;
                    for (int ch = 0; ch < 3; ++ch) img.pixels[ch](r, c) = s.color[ch];
                }
            }
        }
    }

    if (cfg.pixel_noise > 0) {
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int ch = 0; ch < 3; ++ch)
                    img.pixels[ch](r, c) =
                        clamp01(img.pixels[ch](r, c) + cfg.pixel_noise * rng.normal());
    }
    return img;
}

void AugConfig::validate(const SceneConfig& scene) const {
    if (view_h <= 0 || view_w <= 0 || patch_size <= 0)
        throw ConfigError("aug: bad view geometry");
    if (view_h % patch_size != 0 || view_w % patch_size != 0)
        throw ConfigError("aug: view size must be divisible by patch size");
    if (crop_min <= 0 || crop_max > 1.0 || crop_min > crop_max)
        throw ConfigError("aug: bad crop scale range");
    double min_side = crop_min * std::min(scene.img_h, scene.img_w);
    if (min_side < patch_size)
        throw ConfigError("aug: crop smaller than one patch");
    if (min_overlap < 0 || min_overlap > 1)
        throw ConfigError("aug: bad min_overlap");
}

std::array<double, 2> view_to_source_norm(const CropBox& crop, bool flip,
                                          int view_h, int view_w,
                                          double vx, double vy,
                                          int img_h, int img_w) {
    double fx = flip ? (view_w - vx) : vx;
    double sx = crop.x0 + fx / view_w * crop.w;
    double sy = crop.y0 + vy / view_h * crop.h;
    return {sx / img_w, sy / img_h};
}

static double bilinear(const Matrix& m, double x, double y) {
    // x, y in pixel coordinates with pixel centers at integer + 0.5
    double gx = x - 0.5, gy = y - 0.5;
    int x0 = static_cast<int>(std::floor(gx));
    int y0 = static_cast<int>(std::floor(gy));
    double tx = gx - x0, ty = gy - y0;
    auto at = [&](int r, int c) {
        r = std::clamp(r, 0, static_cast<int>(m.rows()) - 1);
        c = std::clamp(c, 0, static_cast<int>(m.cols()) - 1);
        return m(r, c);
    };
    return (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
           ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
}

static AugmentedView render_view(const SceneImage& img, const CropBox& crop,
                                 bool flip, double bright,
                                 const std::array<double, 3>& contrast,
                                 const AugConfig& cfg) {
    AugmentedView v;
    v.crop_box = crop;
    v.flip = flip;
    v.patch_size = cfg.patch_size;
    const int H = cfg.view_h, W = cfg.view_w, P = cfg.patch_size;
    Eigen::MatrixXi vlabels(H, W);
    for (int c = 0; c < 3; ++c) v.pixels[c] = Matrix(H, W);

    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            auto nc = view_to_source_norm(crop, flip, H, W, c + 0.5, r + 0.5,
                                          img.height(), img.width());
            double sx = nc[0] * img.width(), sy = nc[1] * img.height();
            for (int ch = 0; ch < 3; ++ch) {
                double val = bilinear(img.pixels[ch], sx, sy);
                v.pixels[ch](r, c) = clamp01(val * contrast[ch] + bright);
            }
            int lr = std::clamp(static_cast<int>(std::floor(sy)), 0, img.height() - 1);
            int lc = std::clamp(static_cast<int>(std::floor(sx)), 0, img.width() - 1);
            vlabels(r, c) = img.labels(lr, lc);
        }
    }

    const int ph = H / P, pw = W / P, n = ph * pw;
    v.patch_labels.resize(n);
    v.patch_coords.resize(n, 2);
    for (int pr = 0; pr < ph; ++pr) {
        for (int pc = 0; pc < pw; ++pc) {
            std::map<int, int> votes;
            for (int r = pr * P; r < (pr + 1) * P; ++r)
                for (int c = pc * P; c < (pc + 1) * P; ++c) votes[vlabels(r, c)]++;
            int best = -1, best_count = -1;
            for (auto [cls, count] : votes)
                if (count > best_count) { best = cls; best_count = count; }
            int idx = pr * pw + pc;
            v.patch_labels[idx] = best;
            auto coord = view_to_source_norm(crop, flip, H, W, (pc + 0.5) * P,
                                             (pr + 0.5) * P, img.height(), img.width());
            v.patch_coords(idx, 0) = coord[0];
            v.patch_coords(idx, 1) = coord[1];
        }
    }
    return v;
}

AugmentedView canonical_view(const SceneImage& img, const AugConfig& cfg) {
    CropBox full{0.0, 0.0, static_cast<double>(img.width()),
                 static_cast<double>(img.height())};
    return render_view(img, full, false, 0.0, {1.0, 1.0, 1.0}, cfg);
}

static double iou(const CropBox& a, const CropBox& b) {
    double ix = std::max(0.0, std::min(a.x0 + a.w, b.x0 + b.w) - std::max(a.x0, b.x0));
    double iy = std::max(0.0, std::min(a.y0 + a.h, b.y0 + b.h) - std::max(a.y0, b.y0));
    double inter = ix * iy;
    double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

std::pair<AugmentedView, AugmentedView> augment_pair(const SceneImage& img,
                                                     std::uint64_t seed,
                                                     const AugConfig& cfg) {
    SceneConfig probe;  // only used for geometric validation
    probe.img_h = img.height();
    probe.img_w = img.width();
    probe.patch_size = cfg.patch_size;
    probe.classes = 2;
    cfg.validate(probe);

    Rng rng(Rng::derive(seed, 0xA76));
    auto draw_crop = [&]() {
        double s = rng.uniform(cfg.crop_min, cfg.crop_max);
        CropBox b;
        b.h = s * img.height();
        b.w = s * img.width();
        b.x0 = rng.uniform(0.0, img.width() - b.w);
        b.y0 = rng.uniform(0.0, img.height() - b.h);
        return b;
    };

    CropBox c1, c2;
    int tries = 0;
    do {
        if (++tries > cfg.max_retries)
            throw ConfigError("aug: could not satisfy min_overlap after retries");
        c1 = draw_crop();
        c2 = draw_crop();
    } while (iou(c1, c2) < cfg.min_overlap);

    auto draw_photo = [&](bool& flip, double& bright, std::array<double, 3>& contr) {
        flip = rng.bernoulli(cfg.flip_prob);
        bright = rng.uniform(-cfg.brightness, cfg.brightness);
        for (int c = 0; c < 3; ++c)
            contr[c] = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast);
    };

    bool f1, f2;
    double b1, b2;
    std::array<double, 3> k1, k2;
    draw_photo(f1, b1, k1);
    draw_photo(f2, b2, k2);
    return {render_view(img, c1, f1, b1, k1, cfg),
            render_view(img, c2, f2, b2, k2, cfg)};
}

void write_manifest(const std::string& path, const SceneConfig& scene,
                    const AugConfig& aug) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << "scene.img_h=" << scene.img_h << "\n"
        << "scene.img_w=" << scene.img_w << "\n"
        << "scene.classes=" << scene.classes << "\n"
        << "scene.min_objects=" << scene.min_objects << "\n"
        << "scene.max_objects=" << scene.max_objects << "\n"
        << "scene.patch_size=" << scene.patch_size << "\n"
        << "scene.pixel_noise=" << scene.pixel_noise << "\n"
        << "scene.scene_gain=" << scene.scene_gain << "\n"
        << "scene.scene_offset=" << scene.scene_offset << "\n"
        << "aug.view_h=" << aug.view_h << "\n"
        << "aug.view_w=" << aug.view_w << "\n"
        << "aug.patch_size=" << aug.patch_size << "\n"
        << "aug.crop_min=" << aug.crop_min << "\n"
        << "aug.crop_max=" << aug.crop_max << "\n"
        << "aug.flip_prob=" << aug.flip_prob << "\n"
        << "aug.brightness=" << aug.brightness << "\n"
        << "aug.contrast=" << aug.contrast << "\n"
        << "aug.min_overlap=" << aug.min_overlap << "\n";
}

ObjectSet ground_truth_object_pool(const AugmentedView& view,
                                   const Matrix& dense_tokens) {
    const int n = view.patch_count();
    if (dense_tokens.rows() != n)
        throw ShapeError("ground_truth_object_pool: token count != patch count");

    std::map<int, std::vector<int>> groups;
    for (int i = 0; i < n; ++i) groups[view.patch_labels[i]].push_back(i);

    ObjectSet set;
    const int k = static_cast<int>(groups.size());
    const int d = static_cast<int>(dense_tokens.cols());
    set.reps_view1 = Matrix::Zero(k, d);
    set.reps_view2 = Matrix::Zero(k, d);
    set.centroids = Matrix::Zero(k, d);
    set.valid_mask.assign(k, true);
    int idx = 0;
    for (auto& [label, members] : groups) {
        Vector mean = Vector::Zero(d);
        for (int m : members) mean += dense_tokens.row(m).transpose();
        mean /= static_cast<double>(members.size());
        set.reps_view1.row(idx) = mean.transpose();
        set.centroids.row(idx) = mean.transpose();
        set.labels.push_back(label);
        ++idx;
    }
    return set;
}

}  // namespace dboot
