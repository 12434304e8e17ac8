#pragma once

#include <vector>

#include "dboot/common.hpp"

namespace dboot {

struct LossConfig {
    bool enable_global = true;     // L_cv^g
    bool enable_cv_object = true;  // L_cv^o
    bool enable_ci_object = true;  // L_ci^o
    double tau_s = 0.1;
    double tau_t = 0.04;
    double tau_global_s = 0.1;
    double tau_global_t = 0.04;
    bool centering = true;
    double center_momentum = 0.9;

    void validate() const;
};

struct LossReport {
    double l_cv_g = 0.0;
    double l_cv_o = 0.0;
    double l_ci_o = 0.0;
    double l_total = 0.0;
    int z1 = 0;  // cycle-consistent objects, view 1
    int z2 = 0;
    int valid_object_count = 0;
    bool ci_warmup = false;       // no bank content yet
    bool cv_empty = false;        // no valid objects for the cross-view term
    double bootstrap_ratio = 0.0;
};

// H(a, b) = -sum_l a_l log(b_l)
double cross_entropy(const Vector& p_teacher, const Vector& p_student);

// Per view pair: (1/K_valid) * sum_k [H(p1t_k, p2s_k) + H(p2t_k, p1s_k)]
// over objects with valid_mask true. Zero valid objects -> 0 with flag.
struct CvObjectResult {
    double value = 0.0;
    bool empty = false;
};
CvObjectResult loss_cv_object(const std::vector<Vector>& p1_teacher,
                              const std::vector<Vector>& p2_teacher,
                              const std::vector<Vector>& p1_student,
                              const std::vector<Vector>& p2_student,
                              const std::vector<bool>& valid_mask);

// One filtered cross-image pair: the retrieved neighbor's teacher projection
// against the same object's student projection in the other view.
struct CiTerm {
    int query_view = 1;          // view of the queried object c_i^k
    bool cycle_consistent = false;
    Vector teacher_nn_prob;      // p~_{i,t}^k
    Vector student_prob;         // p_{j,s}^k, j != i
};

struct CiObjectResult {
    double value = 0.0;
    int z1 = 0;
    int z2 = 0;
};
// (1/Z1) sum over consistent view-1 queries + (1/Z2) sum over consistent
// view-2 queries; a side with Z=0 contributes 0.
CiObjectResult loss_ci_object(const std::vector<CiTerm>& terms);

double loss_global(const Vector& p1_teacher, const Vector& p2_teacher,
                   const Vector& p1_student, const Vector& p2_student);

struct LossParts {
    double l_cv_g = 0.0;
    double l_cv_o = 0.0;
    double l_ci_o = 0.0;
    int z1 = 0;
    int z2 = 0;
    int valid_object_count = 0;
    bool ci_warmup = false;
    bool cv_empty = false;
};

// Unweighted sum of the enabled terms.
LossReport loss_total(const LossConfig& cfg, const LossParts& parts);

}  // namespace dboot
