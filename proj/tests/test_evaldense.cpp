#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "dboot/evaldense.hpp"
#include "dboot/rng.hpp"

using namespace dboot;

namespace {

struct EvalFixture {
    SceneConfig scene;
    AugConfig aug;
    EncoderConfig enc;
    EncoderParams params;
    std::vector<SceneImage> dataset;

    explicit EvalFixture(int images, std::uint64_t seed = 0) {
        scene.img_h = 16;
        scene.img_w = 16;
        scene.patch_size = 4;
        scene.classes = 3;
        aug.view_h = 8;
        aug.view_w = 8;
        aug.patch_size = 4;
        enc.patch_size = 4;
        enc.dim = 6;
        enc.mixer_layers = 1;
        enc.head_hidden = 6;
        enc.out_object = 8;
        enc.out_global = 8;
        params = init_params(enc, seed);
        for (int i = 0; i < images; ++i)
            dataset.push_back(generate_scene(Rng::derive(seed, 0x400 + i), scene));
    }
};

// One-hot features from the true labels: a perfectly separable store.
FeatureStore onehot_store(const std::vector<int>& labels, int classes) {
    FeatureStore s;
    s.class_count = classes;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Vector f = Vector::Zero(classes);
        f[labels[i]] = 1.0;
        s.entries.push_back({f, labels[i], i});
    }
    return s;
}

}  // namespace

TEST_CASE("feature store subsampling arithmetic") {
    EvalFixture fx(8);
    const int patches_per_image = 4;  // 8x8 view with 4x4 patches

    SUBCASE("ratio one keeps every image") {
        FeatureStore s = build_store(fx.params, fx.enc, fx.dataset, fx.aug, 1, 3);
        CHECK(static_cast<int>(s.entries.size()) == 8 * patches_per_image);
    }

    SUBCASE("ratio equal to the dataset size keeps one image") {
        FeatureStore s = build_store(fx.params, fx.enc, fx.dataset, fx.aug, 8, 3);
        CHECK(static_cast<int>(s.entries.size()) == patches_per_image);
        std::set<std::uint64_t> ids;
        for (const auto& e : s.entries) ids.insert(e.image_id);
        CHECK(ids.size() == 1);
    }

    SUBCASE("divisible ratios give exactly images/ratio images") {
        for (int ratio : {2, 4}) {
            FeatureStore s =
                build_store(fx.params, fx.enc, fx.dataset, fx.aug, ratio, 3);
            CHECK(static_cast<int>(s.entries.size()) ==
                  (8 / ratio) * patches_per_image);
        }
    }

    SUBCASE("stride offset is deterministic in the seed") {
        FeatureStore a = build_store(fx.params, fx.enc, fx.dataset, fx.aug, 4, 3, 5);
        FeatureStore b = build_store(fx.params, fx.enc, fx.dataset, fx.aug, 4, 3, 5);
        REQUIRE(a.entries.size() == b.entries.size());
        for (std::size_t i = 0; i < a.entries.size(); ++i)
            CHECK(a.entries[i].image_id == b.entries[i].image_id);
    }

    SUBCASE("bad ratios are rejected") {
        CHECK_THROWS_AS(build_store(fx.params, fx.enc, fx.dataset, fx.aug, 0, 3),
                        ConfigError);
        CHECK_THROWS_AS(build_store(fx.params, fx.enc, fx.dataset, fx.aug, 9, 3),
                        ConfigError);
    }
}

TEST_CASE("k-nearest-neighbor voting") {
    SUBCASE("k=1 copies the nearest label") {
        FeatureStore s = onehot_store({0, 1, 2}, 3);
        Matrix q(2, 3);
        q << 0.9, 0.1, 0.0,  // closest to class 0
             0.0, 0.2, 0.8;  // closest to class 2
        std::vector<int> pred = knn_predict(s, q, 1);
        CHECK(pred == std::vector<int>{0, 2});
    }

    SUBCASE("majority of three wins") {
        // Two near-identical class-0 entries and one class-1 entry.
        FeatureStore s;
        s.class_count = 2;
        Vector a(2), b(2), c(2);
        a << 1.0, 0.0;
        b << 0.99, 0.14;
        c << 0.0, 1.0;
        s.entries = {{a, 0, 0}, {b, 0, 1}, {c, 1, 2}};
        Matrix q(1, 2);
        q << 1.0, 0.05;
        CHECK(knn_predict(s, q, 3) == std::vector<int>{0});
    }

    SUBCASE("matches a full-sort oracle on a 40-entry store") {
        Rng rng(17);
        FeatureStore s;
        s.class_count = 4;
        for (int i = 0; i < 40; ++i) {
            Vector f(5);
            for (int j = 0; j < 5; ++j) f[j] = rng.normal();
            s.entries.push_back({f, static_cast<int>(rng.below(4)), 0});
        }
        const int k = 7;
        Matrix queries(25, 5);
        for (int i = 0; i < 25; ++i)
            for (int j = 0; j < 5; ++j) queries(i, j) = rng.normal();
        std::vector<int> got = knn_predict(s, queries, k);
        for (int qi = 0; qi < 25; ++qi) {
            Vector q = queries.row(qi).transpose();
            std::vector<std::pair<double, int>> all;
            for (int i = 0; i < 40; ++i) {
                const Vector& f = s.entries[i].feature;
                all.push_back({q.dot(f) / (q.norm() * f.norm()), i});
            }
            std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
                if (x.first != y.first) return x.first > y.first;
                return x.second < y.second;
            });
            std::map<int, std::pair<int, double>> votes;
            for (int i = 0; i < k; ++i) {
                auto& v = votes[s.entries[all[i].second].label];
                v.first++;
                v.second += 1.0 - all[i].first;
            }
            int want = -1, bc = -1;
            double bd = 0.0;
            for (auto& [cls, v] : votes)
                if (v.first > bc || (v.first == bc && v.second < bd)) {
                    want = cls;
                    bc = v.first;
                    bd = v.second;
                }
            CHECK(got[qi] == want);
        }
    }

    SUBCASE("bad k is rejected") {
        FeatureStore s = onehot_store({0, 1}, 2);
        Matrix q = Matrix::Ones(1, 2);
        CHECK_THROWS_AS(knn_predict(s, q, 0), ConfigError);
        CHECK_THROWS_AS(knn_predict(s, q, 3), ConfigError);
        CHECK_THROWS_AS(knn_predict(FeatureStore{}, q, 1), ConfigError);
    }
}

TEST_CASE("mean intersection over union") {
    SUBCASE("identity is exactly one") {
        std::vector<int> l{0, 1, 2, 1, 0};
        CHECK(miou(l, l, 3).miou == 1.0);
    }

    SUBCASE("the worked four-patch example gives 7/12") {
        std::vector<int> labels{0, 0, 1, 1};
        std::vector<int> preds{0, 1, 1, 1};
        SegMetrics m = miou(preds, labels, 2);
        CHECK(m.per_class_iou[0] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(m.per_class_iou[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
        CHECK(m.miou == doctest::Approx(7.0 / 12.0).epsilon(1e-9));
    }

    SUBCASE("fully disjoint predictions score zero") {
        std::vector<int> labels{0, 0, 0};
        std::vector<int> preds{1, 1, 1};
        CHECK(miou(preds, labels, 2).miou == 0.0);
    }

    SUBCASE("classes absent on both sides are skipped, not averaged") {
        std::vector<int> labels{0, 0};
        std::vector<int> preds{0, 0};
        SegMetrics m = miou(preds, labels, 5);
        CHECK(m.miou == 1.0);
        CHECK(m.per_class_iou[3] == -1.0);
    }

    SUBCASE("permuting positions does not change the score") {
        std::vector<int> labels{0, 1, 2, 2, 1, 0, 2};
        std::vector<int> preds{0, 2, 2, 1, 1, 0, 2};
        double base = miou(preds, labels, 3).miou;
        std::vector<int> l2 = labels, p2 = preds;
        std::reverse(l2.begin(), l2.end());
        std::reverse(p2.begin(), p2.end());
        CHECK(miou(p2, l2, 3).miou == doctest::Approx(base).epsilon(1e-15));
    }

    SUBCASE("shape and range violations are rejected") {
        CHECK_THROWS_AS(miou({0, 1}, {0}, 2), ShapeError);
        CHECK_THROWS_AS(miou({0, 5}, {0, 1}, 2), ShapeError);
    }
}

TEST_CASE("linear probe") {
    SUBCASE("a separable store reaches miou 1 within 50 epochs") {
        std::vector<int> labels;
        for (int i = 0; i < 30; ++i) labels.push_back(i % 3);
        FeatureStore train = onehot_store(labels, 3);
        ProbeResult res = linear_probe(train, train, 50, 5.0, 0);
        CHECK(res.metrics.miou == 1.0);
        CHECK(res.loss_trajectory.size() == 50);
        CHECK(res.loss_trajectory.back() < res.loss_trajectory.front());
    }

    SUBCASE("zero epochs only evaluates the random head") {
        FeatureStore s = onehot_store({0, 1, 0, 1}, 2);
        ProbeResult res = linear_probe(s, s, 0, 1.0, 0);
        CHECK(res.loss_trajectory.empty());
    }

    SUBCASE("first-epoch loss is close to log class count") {
        // Weights start at 0.01-scale noise, so the initial softmax is near
        // uniform and the first recorded mean loss is close to log C.
        EvalFixture fx(4);
        FeatureStore s = build_store(fx.params, fx.enc, fx.dataset, fx.aug, 1, 3);
        ProbeResult res = linear_probe(s, s, 1, 0.1, 7);
        REQUIRE(res.loss_trajectory.size() == 1);
        CHECK(std::abs(res.loss_trajectory[0] - std::log(3.0)) < 0.05);
    }

    SUBCASE("deterministic for a fixed seed") {
        EvalFixture fx(4);
        FeatureStore s = build_store(fx.params, fx.enc, fx.dataset, fx.aug, 1, 3);
        ProbeResult a = linear_probe(s, s, 5, 0.5, 3);
        ProbeResult b = linear_probe(s, s, 5, 0.5, 3);
        CHECK(a.loss_trajectory == b.loss_trajectory);
        CHECK((a.weights - b.weights).cwiseAbs().maxCoeff() == 0.0);
        CHECK(a.metrics.miou == b.metrics.miou);
    }

    SUBCASE("empty stores are rejected") {
        FeatureStore s = onehot_store({0, 1}, 2);
        CHECK_THROWS_AS(linear_probe(FeatureStore{}, s, 1, 0.1, 0), ConfigError);
        CHECK_THROWS_AS(linear_probe(s, FeatureStore{}, 1, 0.1, 0), ConfigError);
    }
}
