#include "dboot/evaldense.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dboot/rng.hpp"

namespace dboot {

FeatureStore build_store(const EncoderParams& params, const EncoderConfig& enc_cfg,
                         const std::vector<SceneImage>& dataset,
                         const AugConfig& aug_cfg, int subsample_ratio,
                         int class_count, std::uint64_t seed) {
    if (subsample_ratio < 1) throw ConfigError("build_store: ratio must be >= 1");
    if (subsample_ratio > static_cast<int>(dataset.size()))
        throw ConfigError("build_store: ratio exceeds dataset size");
    FeatureStore store;
    store.class_count = class_count;
    const int offset = static_cast<int>(Rng::derive(seed, 0x57A7) %
                                        static_cast<std::uint64_t>(subsample_ratio));
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (static_cast<int>(i % subsample_ratio) != offset) continue;
        const auto& img = dataset[i];
        AugmentedView view = canonical_view(img, aug_cfg);
        ViewForward fwd = forward_dense(params, enc_cfg, view);
        for (int n = 0; n < view.patch_count(); ++n) {
            store.entries.push_back({fwd.tokens.row(n).transpose(),
                                     view.patch_labels[n], img.image_id});
        }
    }
    if (store.entries.empty()) throw ConfigError("build_store: empty subsample");
    return store;
}

std::vector<int> knn_predict(const FeatureStore& store, const Matrix& queries, int k) {
    const int m = static_cast<int>(store.entries.size());
    if (m == 0) throw ConfigError("knn_predict: empty store");
    if (k < 1 || k > m) throw ConfigError("knn_predict: need 1 <= k <= store size");

    std::vector<int> out(queries.rows());
    std::vector<std::pair<double, int>> scored(m);  // (cosine, entry index)
    for (int qi = 0; qi < queries.rows(); ++qi) {
        Vector q = queries.row(qi).transpose();
        double qn = std::max(q.norm(), 1e-30);
        for (int i = 0; i < m; ++i) {
            const Vector& f = store.entries[i].feature;
            double fn = f.norm();
            double cosine = (fn > 0.0) ? q.dot(f) / (qn * fn) : -1.0;
            scored[i] = {cosine, i};
        }
        // Top-k by cosine, stable toward earlier entries on exact ties.
        std::partial_sort(scored.begin(), scored.begin() + k, scored.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });
        std::map<int, std::pair<int, double>> votes;  // class -> (count, dist sum)
        for (int i = 0; i < k; ++i) {
            int cls = store.entries[scored[i].second].label;
            auto& v = votes[cls];
            v.first += 1;
            v.second += 1.0 - scored[i].first;  // cosine distance
        }
        int best_cls = -1;
        int best_count = -1;
        double best_dist = 0.0;
        for (auto& [cls, v] : votes) {
            bool better = v.first > best_count ||
                          (v.first == best_count && v.second < best_dist);
            // std::map iterates ascending class id, so equal (count, dist)
            // keeps the smallest class.
            if (better) {
                best_cls = cls;
                best_count = v.first;
                best_dist = v.second;
            }
        }
        out[qi] = best_cls;
    }
    return out;
}

SegMetrics miou(const std::vector<int>& preds, const std::vector<int>& labels,
                int class_count) {
    if (preds.size() != labels.size())
        throw ShapeError("miou: prediction/label sizes differ");
    std::vector<long> inter(class_count, 0), uni(class_count, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        int p = preds[i], l = labels[i];
        if (p < 0 || p >= class_count || l < 0 || l >= class_count)
            throw ShapeError("miou: class id out of range");
        if (p == l) {
            inter[p]++;
            uni[p]++;
        } else {
            uni[p]++;
            uni[l]++;
        }
    }
    SegMetrics m;
    m.per_class_iou.assign(class_count, -1.0);
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < class_count; ++c) {
        if (uni[c] == 0) continue;  // absent from both sides
        m.per_class_iou[c] = static_cast<double>(inter[c]) / uni[c];
        sum += m.per_class_iou[c];
        ++present;
    }
    m.miou = present > 0 ? sum / present : 0.0;
    return m;
}

ProbeResult linear_probe(const FeatureStore& train, const FeatureStore& val,
                         int epochs, double lr, std::uint64_t seed) {
    if (train.entries.empty() || val.entries.empty())
        throw ConfigError("linear_probe: empty store");
    const int d = static_cast<int>(train.entries[0].feature.size());
    const int c = train.class_count;

    Rng rng(Rng::derive(seed, 0x9806E));
    ProbeResult res;
    res.weights = Matrix(c, d);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < d; ++j)
            res.weights(i, j) = 0.01 * rng.normal();
    res.bias = Vector::Zero(c);

    const int n = static_cast<int>(train.entries.size());
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Matrix gw = Matrix::Zero(c, d);
        Vector gb = Vector::Zero(c);
        double total = 0.0;
        for (const auto& e : train.entries) {
            Vector logits = res.weights * e.feature + res.bias;
            double m = logits.maxCoeff();
            Vector ex = (logits.array() - m).exp();
            Vector p = ex / ex.sum();
            total -= std::log(std::max(p[e.label], 1e-300));
            Vector dl = p;
            dl[e.label] -= 1.0;
            gw += dl * e.feature.transpose();
            gb += dl;
        }
        double mean_loss = total / n;
        if (!std::isfinite(mean_loss))
            throw NumericError("linear_probe: diverged (non-finite loss)");
        res.loss_trajectory.push_back(mean_loss);
        res.weights -= (lr / n) * gw;
        res.bias -= (lr / n) * gb;
    }

    std::vector<int> preds, labels;
    for (const auto& e : val.entries) {
        Vector logits = res.weights * e.feature + res.bias;
        int best = 0;
        for (int i = 1; i < c; ++i)
            if (logits[i] > logits[best]) best = i;
        preds.push_back(best);
        labels.push_back(e.label);
    }
    res.metrics = miou(preds, labels, c);
    return res;
}

}  // namespace dboot
