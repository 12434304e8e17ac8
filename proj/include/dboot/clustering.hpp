#pragma once

#include <cstdint>
#include <vector>

#include "dboot/common.hpp"

namespace dboot {

struct ClusterConfig {
    int k = 8;
    double lambda_pos = 1.0;
    double epsilon = 0.05;      // entropic regularization of the transport plan
    int outer_iters = 5;
    int sinkhorn_iters = 100;
    double sinkhorn_tol = 1e-6;  // early exit on marginal residual
    std::uint64_t seed = 0;
};

struct TransportCost {
    Matrix semantic;    // 2N x K, negative cosine similarity, in [-1, 1]
    Matrix positional;  // 2N x K
    double lambda_pos = 0.0;

    Matrix total() const {
        if (lambda_pos == 0.0 || positional.size() == 0) return semantic;
        return semantic + lambda_pos * positional;
    }
};

struct Assignment {
    Matrix soft;               // 2N x K, row sums 1/(2N), column sums 1/K
    Eigen::VectorXi hard;      // 2N cluster ids, argmax with smallest-k ties
    Matrix view1;              // N x K, hard one-hot, columns l1-normalized
    Matrix view2;              // N x K
};

struct ObjectSet {
    Matrix reps_view1;              // K x d (rows for invalid k are zero)
    Matrix reps_view2;              // K x d
    std::vector<bool> valid_mask;   // object spans both views
    Matrix centroids;               // K x d, final soft-update centroids
    std::vector<int> labels;        // only set by the supervised oracle pool

    int valid_count() const {
        int n = 0;
        for (bool v : valid_mask) n += v ? 1 : 0;
        return n;
    }
};

// Seeded sampling without replacement of K token rows as initial centroids.
Matrix init_centroids(const Matrix& z_cat, int k, std::uint64_t seed);
std::vector<int> init_centroid_indices(int n, int k, std::uint64_t seed);

// Log-domain Sinkhorn-Knopp toward row marginal 1/(2N) and column marginal
// 1/K. Stops at marginal residual `tol` or after `iters` full sweeps.
Matrix sinkhorn_assign(const Matrix& cost_total, double epsilon, int iters,
                       double tol = 1e-6);

// Entry (i,j) = min over members l of cluster j (previous iteration) of the
// euclidean distance between coords[i] and coords[l].
Matrix positional_cost(const Matrix& coords,
                       const std::vector<std::vector<int>>& prev_sets);

Matrix semantic_cost(const Matrix& z_cat, const Matrix& centroids);

struct ClusterResult {
    Assignment assignment;
    ObjectSet objects;
};

ClusterResult cluster_joint(const Matrix& z1, const Matrix& z2,
                            const Matrix& coords, const ClusterConfig& cfg);

// Spherical k-means baseline on the same 2N tokens; ignores lambda_pos and
// epsilon, shares the ObjectSet extraction with cluster_joint.
ClusterResult kmeans_joint(const Matrix& z1, const Matrix& z2,
                           const ClusterConfig& cfg);

}  // namespace dboot
