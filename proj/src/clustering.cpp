#include "dboot/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dboot/rng.hpp"

namespace dboot {

std::vector<int> init_centroid_indices(int n, int k, std::uint64_t seed) {
    if (k < 1 || k > n)
        throw ConfigError("init_centroids: need 1 <= K <= token count");
    Rng rng(Rng::derive(seed, 0xCE27));
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    // Fisher-Yates prefix of length k.
    for (int i = 0; i < k; ++i) {
        int j = i + static_cast<int>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

Matrix init_centroids(const Matrix& z_cat, int k, std::uint64_t seed) {
    auto idx = init_centroid_indices(static_cast<int>(z_cat.rows()), k, seed);
    Matrix out(k, z_cat.cols());
    for (int i = 0; i < k; ++i) out.row(i) = z_cat.row(idx[i]);
    return out;
}

Matrix semantic_cost(const Matrix& z_cat, const Matrix& centroids) {
    const int n = static_cast<int>(z_cat.rows());
    const int k = static_cast<int>(centroids.rows());
    Matrix cost(n, k);
    Vector zn(n), cn(k);
    for (int i = 0; i < n; ++i) zn[i] = std::max(z_cat.row(i).norm(), 1e-30);
    for (int j = 0; j < k; ++j) cn[j] = std::max(centroids.row(j).norm(), 1e-30);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            cost(i, j) = -z_cat.row(i).dot(centroids.row(j)) / (zn[i] * cn[j]);
    return cost;
}

Matrix positional_cost(const Matrix& coords,
                       const std::vector<std::vector<int>>& prev_sets) {
    const int n = static_cast<int>(coords.rows());
    const int k = static_cast<int>(prev_sets.size());
    Matrix cost(n, k);
    for (int j = 0; j < k; ++j) {
        if (prev_sets[j].empty())
            throw InternalError("positional_cost: empty member set for cluster " +
                                std::to_string(j));
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int l : prev_sets[j]) {
                double d = (coords.row(i) - coords.row(l)).norm();
                best = std::min(best, d);
            }
            cost(i, j) = best;
        }
    }
    return cost;
}

static double logsumexp(const Vector& v) {
    double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

Matrix sinkhorn_assign(const Matrix& cost_total, double epsilon, int iters,
                       double tol) {
    if (epsilon <= 0) throw ConfigError("sinkhorn: epsilon must be positive");
    if (iters < 1) throw ConfigError("sinkhorn: need at least one iteration");
    if (cost_total.rows() < 1 || cost_total.cols() < 1)
        throw ShapeError("sinkhorn: cost matrix must be non-empty");
    require_finite(cost_total, "sinkhorn cost");

    const int n = static_cast<int>(cost_total.rows());
    const int k = static_cast<int>(cost_total.cols());
    const double log_r = -std::log(static_cast<double>(n));  // row marginal 1/(2N)
    const double log_c = -std::log(static_cast<double>(k));  // col marginal 1/K

    Matrix neg = -cost_total / epsilon;
    Vector f = Vector::Zero(n);  // log row scalings
    Vector g = Vector::Zero(k);  // log column scalings

    auto plan = [&]() {
        Matrix q = neg;
        q.colwise() += f;
        q.rowwise() += g.transpose();
        return Matrix(q.array().exp());
    };

    for (int it = 0; it < iters; ++it) {
        // Row log-sum-exps of neg + g; these are also the log row sums of the
        // current plan up to f, so they double as the convergence check.
        Matrix a = neg;
        a.rowwise() += g.transpose();
        Vector m = a.rowwise().maxCoeff();
        Vector s = ((a.colwise() - m).array().exp().rowwise().sum()).array().log();
        s += m;
        if (it > 0) {
            // Column marginals are exact after the g update; check rows.
            double res =
                ((f + s).array().exp() - std::exp(log_r)).abs().maxCoeff();
            if (res <= tol) return plan();
        }
        f = Vector::Constant(n, log_r) - s;

        Matrix b = neg;
        b.colwise() += f;
        Vector mc = b.colwise().maxCoeff();
        Vector sc =
            ((b.rowwise() - mc.transpose()).array().exp().colwise().sum())
                .array()
                .log();
        sc += mc;
        g = Vector::Constant(k, log_c) - sc;
    }
    return plan();
}

static ClusterResult extract_objects(const Matrix& z1, const Matrix& z2,
                                     const Matrix& soft, const Matrix& centroids,
                                     int k_total,
                                     const std::vector<int>& cluster_ids) {
    const int n = static_cast<int>(z1.rows());
    const int d = static_cast<int>(z1.cols());

    ClusterResult res;
    res.assignment.soft = Matrix::Zero(2 * n, k_total);
    for (int j = 0; j < static_cast<int>(cluster_ids.size()); ++j)
        res.assignment.soft.col(cluster_ids[j]) = soft.col(j);

    // Hard assignment: argmax per row, smallest surviving cluster id on ties.
    res.assignment.hard.resize(2 * n);
    for (int i = 0; i < 2 * n; ++i) {
        int best = cluster_ids[0];
        double best_val = soft(i, 0);
        for (int j = 1; j < static_cast<int>(cluster_ids.size()); ++j) {
            if (soft(i, j) > best_val) {
                best_val = soft(i, j);
                best = cluster_ids[j];
            }
        }
        res.assignment.hard[i] = best;
    }

    if (cluster_ids.empty())
        throw NumericError("clustering: all clusters empty (degenerate input)");
    Matrix hard1 = Matrix::Zero(n, k_total), hard2 = Matrix::Zero(n, k_total);
    for (int i = 0; i < n; ++i) hard1(i, res.assignment.hard[i]) = 1.0;
    for (int i = 0; i < n; ++i) hard2(i, res.assignment.hard[n + i]) = 1.0;

    res.objects.reps_view1 = Matrix::Zero(k_total, d);
    res.objects.reps_view2 = Matrix::Zero(k_total, d);
    res.objects.centroids = Matrix::Zero(k_total, d);
    for (int j = 0; j < static_cast<int>(cluster_ids.size()); ++j)
        res.objects.centroids.row(cluster_ids[j]) = centroids.row(j);
    res.objects.valid_mask.assign(k_total, false);

    for (int j = 0; j < k_total; ++j) {
        double s1 = hard1.col(j).sum(), s2 = hard2.col(j).sum();
        if (s1 > 0) hard1.col(j) /= s1;
        if (s2 > 0) hard2.col(j) /= s2;
        if (s1 > 0 && s2 > 0) {
            res.objects.valid_mask[j] = true;
            res.objects.reps_view1.row(j) = hard1.col(j).transpose() * z1;
            res.objects.reps_view2.row(j) = hard2.col(j).transpose() * z2;
        }
    }
    res.assignment.view1 = hard1;
    res.assignment.view2 = hard2;
    return res;
}

ClusterResult cluster_joint(const Matrix& z1, const Matrix& z2,
                            const Matrix& coords, const ClusterConfig& cfg) {
    if (z1.rows() != z2.rows() || z1.cols() != z2.cols())
        throw ShapeError("cluster_joint: view token matrices disagree");
    const int n = static_cast<int>(z1.rows());
    if (cfg.k > 2 * n)
        throw ConfigError("cluster_joint: K must not exceed 2N");
    if (coords.rows() != 2 * n || coords.cols() != 2)
        throw ShapeError("cluster_joint: coords must be 2N x 2");

    Matrix z_cat(2 * n, z1.cols());
    z_cat << z1, z2;

    auto seed_idx = init_centroid_indices(2 * n, cfg.k, cfg.seed);
    Matrix centroids(cfg.k, z_cat.cols());
    std::vector<std::vector<int>> members(cfg.k);
    for (int j = 0; j < cfg.k; ++j) {
        centroids.row(j) = z_cat.row(seed_idx[j]);
        members[j] = {seed_idx[j]};  // first-iteration positional sets
    }
    std::vector<int> cluster_ids(cfg.k);
    for (int j = 0; j < cfg.k; ++j) cluster_ids[j] = j;

    Matrix soft;
    for (int it = 0; it < cfg.outer_iters; ++it) {
        TransportCost cost;
        cost.semantic = semantic_cost(z_cat, centroids);
        cost.lambda_pos = cfg.lambda_pos;
        if (cfg.lambda_pos != 0.0) cost.positional = positional_cost(coords, members);
        soft = sinkhorn_assign(cost.total(), cfg.epsilon, cfg.sinkhorn_iters,
                               cfg.sinkhorn_tol);

        // Soft centroid update, then refresh member sets from the argmax.
        centroids = soft.transpose() * z_cat;
        int k_live = static_cast<int>(cluster_ids.size());
        for (auto& m : members) m.clear();
        for (int i = 0; i < 2 * n; ++i) {
            int best = 0;
            for (int j = 1; j < k_live; ++j)
                if (soft(i, j) > soft(i, best)) best = j;
            members[best].push_back(i);
        }
        // Drop clusters that lost all members; they stay dropped.
        std::vector<int> keep;
        for (int j = 0; j < k_live; ++j)
            if (!members[j].empty()) keep.push_back(j);
        if (static_cast<int>(keep.size()) < k_live) {
            Matrix c2(keep.size(), centroids.cols());
            Matrix s2(2 * n, keep.size());
            std::vector<std::vector<int>> m2;
            std::vector<int> id2;
            for (std::size_t j = 0; j < keep.size(); ++j) {
                c2.row(j) = centroids.row(keep[j]);
                s2.col(j) = soft.col(keep[j]);
                m2.push_back(members[keep[j]]);
                id2.push_back(cluster_ids[keep[j]]);
            }
            centroids = c2;
            soft = s2;
            members = m2;
            cluster_ids = id2;
        }
    }
    return extract_objects(z1, z2, soft, centroids, cfg.k, cluster_ids);
}

ClusterResult kmeans_joint(const Matrix& z1, const Matrix& z2,
                           const ClusterConfig& cfg) {
    if (z1.rows() != z2.rows() || z1.cols() != z2.cols())
        throw ShapeError("kmeans_joint: view token matrices disagree");
    const int n = static_cast<int>(z1.rows());
    if (cfg.k > 2 * n)
        throw ConfigError("kmeans_joint: K must not exceed 2N");

    Matrix z_cat(2 * n, z1.cols());
    z_cat << z1, z2;
    // Spherical variant: work on unit-normalized tokens so the mean-direction
    // centroid update monotonically decreases the sum of cosine distances.
    Matrix zn = z_cat;
    for (int i = 0; i < 2 * n; ++i)
        zn.row(i) /= std::max(zn.row(i).norm(), 1e-30);
    Matrix centroids = init_centroids(zn, cfg.k, cfg.seed);

    std::vector<int> assign(2 * n, 0);
    std::vector<int> cluster_ids(cfg.k);
    for (int j = 0; j < cfg.k; ++j) cluster_ids[j] = j;

    for (int it = 0; it < cfg.outer_iters; ++it) {
        Matrix cost = semantic_cost(zn, centroids);  // negative cosine
        int k_live = static_cast<int>(cluster_ids.size());
        for (int i = 0; i < 2 * n; ++i) {
            int best = 0;
            for (int j = 1; j < k_live; ++j)
                if (cost(i, j) < cost(i, best)) best = j;
            assign[i] = best;
        }
        std::vector<int> counts(k_live, 0);
        Matrix sums = Matrix::Zero(k_live, z_cat.cols());
        for (int i = 0; i < 2 * n; ++i) {
            counts[assign[i]]++;
            sums.row(assign[i]) += zn.row(i);
        }
        std::vector<int> keep;
        for (int j = 0; j < k_live; ++j)
            if (counts[j] > 0) keep.push_back(j);
        Matrix c2(keep.size(), z_cat.cols());
        std::vector<int> id2;
        std::vector<int> remap(k_live, -1);
        for (std::size_t j = 0; j < keep.size(); ++j) {
            c2.row(j) = sums.row(keep[j]) / counts[keep[j]];
            id2.push_back(cluster_ids[keep[j]]);
            remap[keep[j]] = static_cast<int>(j);
        }
        for (int i = 0; i < 2 * n; ++i) assign[i] = remap[assign[i]];
        centroids = c2;
        cluster_ids = id2;
    }

    // Reuse the shared extraction; encode the final hard assignment as a
    // one-hot "soft" matrix over surviving clusters.
    int k_live = static_cast<int>(cluster_ids.size());
    Matrix onehot = Matrix::Zero(2 * n, k_live);
    for (int i = 0; i < 2 * n; ++i) onehot(i, assign[i]) = 1.0;
    return extract_objects(z1, z2, onehot, centroids, cfg.k, cluster_ids);
}

}  // namespace dboot
