#include "dboot/objectives.hpp"

#include <cmath>

namespace dboot {

void LossConfig::validate() const {
    if (!enable_global && !enable_cv_object && !enable_ci_object)
        throw ConfigError("loss: at least one term must be enabled");
    if (tau_s <= 0 || tau_t <= 0 || tau_global_s <= 0 || tau_global_t <= 0)
        throw ConfigError("loss: temperatures must be positive");
    if (center_momentum < 0 || center_momentum > 1)
        throw ConfigError("loss: center momentum must be in [0, 1]");
}

double cross_entropy(const Vector& p_teacher, const Vector& p_student) {
    if (p_teacher.size() != p_student.size())
        throw ShapeError("cross_entropy: distribution sizes differ");
    double h = 0.0;
    for (int i = 0; i < p_teacher.size(); ++i) {
        double a = p_teacher[i];
        if (a == 0.0) continue;
        double b = p_student[i];
        if (b <= 0.0) throw NumericError("cross_entropy: zero student probability");
        h -= a * std::log(b);
    }
    return h;
}

CvObjectResult loss_cv_object(const std::vector<Vector>& p1_teacher,
                              const std::vector<Vector>& p2_teacher,
                              const std::vector<Vector>& p1_student,
                              const std::vector<Vector>& p2_student,
                              const std::vector<bool>& valid_mask) {
    const std::size_t k_total = valid_mask.size();
    if (p1_teacher.size() != k_total || p2_teacher.size() != k_total ||
        p1_student.size() != k_total || p2_student.size() != k_total)
        throw ShapeError("loss_cv_object: per-object lists must match the mask");
    CvObjectResult res;
    int valid = 0;
    double sum = 0.0;
    for (std::size_t k = 0; k < valid_mask.size(); ++k) {
        if (!valid_mask[k]) continue;
        sum += cross_entropy(p1_teacher[k], p2_student[k]) +
               cross_entropy(p2_teacher[k], p1_student[k]);
        ++valid;
    }
    if (valid == 0) {
        res.empty = true;
        return res;
    }
    res.value = sum / valid;
    return res;
}

CiObjectResult loss_ci_object(const std::vector<CiTerm>& terms) {
    CiObjectResult res;
    double sum1 = 0.0, sum2 = 0.0;
    for (const auto& t : terms) {
        if (!t.cycle_consistent) continue;
        double h = cross_entropy(t.teacher_nn_prob, t.student_prob);
        if (t.query_view == 1) {
            sum1 += h;
            ++res.z1;
        } else {
            sum2 += h;
            ++res.z2;
        }
    }
    if (res.z1 > 0) res.value += sum1 / res.z1;
    if (res.z2 > 0) res.value += sum2 / res.z2;
    return res;
}

double loss_global(const Vector& p1_teacher, const Vector& p2_teacher,
                   const Vector& p1_student, const Vector& p2_student) {
    return cross_entropy(p1_teacher, p2_student) +
           cross_entropy(p2_teacher, p1_student);
}

LossReport loss_total(const LossConfig& cfg, const LossParts& parts) {
    cfg.validate();
    LossReport r;
    r.z1 = parts.z1;
    r.z2 = parts.z2;
    r.valid_object_count = parts.valid_object_count;
    r.ci_warmup = parts.ci_warmup;
    r.cv_empty = parts.cv_empty;
    if (cfg.enable_global) r.l_cv_g = parts.l_cv_g;
    if (cfg.enable_cv_object) r.l_cv_o = parts.l_cv_o;
    if (cfg.enable_ci_object) r.l_ci_o = parts.l_ci_o;
    r.l_total = r.l_cv_g + r.l_cv_o + r.l_ci_o;
    return r;
}

}  // namespace dboot
