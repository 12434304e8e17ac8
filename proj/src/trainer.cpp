#include "dboot/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

namespace dboot {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Per-pair forward and projection caches; loss terms hold pointers into this,
// so the containing vector must be sized once and never reallocated.
struct PairCache {
    std::uint64_t image_id = 0;
    ViewForward sf1, sf2;  // student
    ViewForward tf1, tf2;  // teacher
    ClusterResult cluster;
    bool clustered = false;
    HeadCache s1_glob, s2_glob;
    Vector p1t_glob, p2t_glob;
    std::vector<HeadCache> s1_obj, s2_obj;  // indexed by cluster id
    std::vector<Vector> p1t_obj, p2t_obj;
};

Vector pooled_rep(const Matrix& tokens, const Vector& weights) {
    return tokens.transpose() * weights;
}

}  // namespace

TrainState init_state(const RunConfig& cfg) {
    cfg.validate();
    TrainState s;
    s.student = init_params(cfg.encoder, cfg.seed);
    s.teacher = s.student;
    s.center.momentum = cfg.loss.center_momentum;
    s.center.enabled = cfg.loss.centering;
    s.center.center_object = Vector::Zero(cfg.encoder.out_object);
    s.center.center_global = Vector::Zero(cfg.encoder.out_global);
    s.opt.lr = cfg.lr;
    s.opt.weight_decay = cfg.weight_decay;
    s.opt.init(s.student);
    s.bank1 = MemoryBank(1, cfg.bank_size);
    s.bank2 = MemoryBank(2, cfg.bank_size);
    s.rng.set_state(Rng::derive(cfg.seed, 0x7AA1));
    return s;
}

std::vector<SceneImage> build_train_dataset(const RunConfig& cfg) {
    std::vector<SceneImage> out;
    out.reserve(cfg.train_scenes);
    for (int i = 0; i < cfg.train_scenes; ++i)
        out.push_back(generate_scene(Rng::derive(cfg.seed, 0x10000 + i), cfg.scene));
    return out;
}

std::vector<SceneImage> build_eval_dataset(const RunConfig& cfg) {
    std::vector<SceneImage> out;
    out.reserve(cfg.eval.eval_scenes);
    for (int i = 0; i < cfg.eval.eval_scenes; ++i)
        out.push_back(generate_scene(Rng::derive(cfg.seed, 0x20000 + i), cfg.scene));
    return out;
}

ViewPairBatch make_batch(const std::vector<SceneImage>& dataset,
                         const std::vector<int>& indices, std::uint64_t epoch_seed,
                         const RunConfig& cfg) {
    ViewPairBatch batch;
    batch.items.reserve(indices.size());
    for (int idx : indices) {
        if (idx < 0 || idx >= static_cast<int>(dataset.size()))
            throw InternalError("make_batch: index out of range");
        const SceneImage& img = dataset[idx];
        auto [v1, v2] =
            augment_pair(img, Rng::derive(epoch_seed, static_cast<std::uint64_t>(idx)),
                         cfg.aug);
        batch.items.push_back({img.image_id, std::move(v1), std::move(v2)});
    }
    return batch;
}

LossReport train_step(TrainState& state, const ViewPairBatch& batch,
                      const RunConfig& cfg) {
    const auto& L = cfg.loss;
    L.validate();
    const int B = batch.batch_size();
    if (B == 0) throw ConfigError("train_step: empty batch");
    const bool need_objects = L.enable_cv_object || L.enable_ci_object;

    std::vector<PairCache> pairs(B);
    std::vector<StudentLossTerm> terms;
    LossParts parts;

    double sum_g = 0.0, sum_cv = 0.0;
    bool any_cv_valid = false;

    Vector obj_logit_sum, glob_logit_sum;
    long obj_logit_n = 0, glob_logit_n = 0;

    std::vector<BatchObject> batch_v1, batch_v2;
    struct CiRef {
        int pair;
        int k;
    };
    std::vector<CiRef> ci_refs;  // aligned with batch_v1 / batch_v2

    for (int i = 0; i < B; ++i) {
        PairCache& pc = pairs[i];
        const ViewPairItem& item = batch.items[i];
        pc.image_id = item.image_id;
        pc.tf1 = forward_dense(state.teacher, cfg.encoder, item.view1);
        pc.tf2 = forward_dense(state.teacher, cfg.encoder, item.view2);
        pc.sf1 = forward_dense(state.student, cfg.encoder, item.view1);
        pc.sf2 = forward_dense(state.student, cfg.encoder, item.view2);

        if (L.enable_global) {
            HeadCache t1 = project(state.teacher, HeadKind::Global, pc.tf1.global,
                                   L.tau_global_t, state.center.global_ptr());
            HeadCache t2 = project(state.teacher, HeadKind::Global, pc.tf2.global,
                                   L.tau_global_t, state.center.global_ptr());
            pc.p1t_glob = t1.prob;
            pc.p2t_glob = t2.prob;
            pc.s1_glob = project(state.student, HeadKind::Global, pc.sf1.global, L.tau_global_s);
            pc.s2_glob = project(state.student, HeadKind::Global, pc.sf2.global, L.tau_global_s);
            sum_g += loss_global(t1.prob, t2.prob, pc.s1_glob.prob, pc.s2_glob.prob);
            if (glob_logit_sum.size() == 0) glob_logit_sum = Vector::Zero(t1.logits.size());
            glob_logit_sum += t1.logits + t2.logits;
            glob_logit_n += 2;
        }

        if (!need_objects) continue;

        const int n1 = pc.tf1.tokens.rows();
        const int n2 = pc.tf2.tokens.rows();
        Matrix coords(n1 + n2, 2);
        coords.topRows(n1) = item.view1.patch_coords;
        coords.bottomRows(n2) = item.view2.patch_coords;

        ClusterConfig cc = cfg.cluster;
        cc.seed = Rng::derive(cfg.seed ^ 0xC1A57E5ULL,
                              static_cast<std::uint64_t>(state.step) * 1000003ULL +
                                  static_cast<std::uint64_t>(i));
        pc.cluster = (cfg.cluster_algorithm == "kmeans")
                         ? kmeans_joint(pc.tf1.tokens, pc.tf2.tokens, cc)
                         : cluster_joint(pc.tf1.tokens, pc.tf2.tokens, coords, cc);
        pc.clustered = true;

        const auto& obj = pc.cluster.objects;
        const int K = static_cast<int>(obj.valid_mask.size());
        pc.s1_obj.resize(K);
        pc.s2_obj.resize(K);
        pc.p1t_obj.resize(K);
        pc.p2t_obj.resize(K);

        double pair_cv = 0.0;
        int kv = 0;
        for (int k = 0; k < K; ++k) {
            if (!obj.valid_mask[k]) continue;
            Vector rep1_t = obj.reps_view1.row(k).transpose();
            Vector rep2_t = obj.reps_view2.row(k).transpose();
            HeadCache t1 = project(state.teacher, HeadKind::Object, rep1_t, L.tau_t,
                                   state.center.object_ptr());
            HeadCache t2 = project(state.teacher, HeadKind::Object, rep2_t, L.tau_t,
                                   state.center.object_ptr());
            pc.p1t_obj[k] = t1.prob;
            pc.p2t_obj[k] = t2.prob;
            if (obj_logit_sum.size() == 0) obj_logit_sum = Vector::Zero(t1.logits.size());
            obj_logit_sum += t1.logits + t2.logits;
            obj_logit_n += 2;

            Vector w1 = pc.cluster.assignment.view1.col(k);
            Vector w2 = pc.cluster.assignment.view2.col(k);
            pc.s1_obj[k] = project(state.student, HeadKind::Object,
                                   pooled_rep(pc.sf1.tokens, w1), L.tau_s);
            pc.s2_obj[k] = project(state.student, HeadKind::Object,
                                   pooled_rep(pc.sf2.tokens, w2), L.tau_s);

            if (L.enable_cv_object) {
                pair_cv += cross_entropy(t1.prob, pc.s2_obj[k].prob) +
                           cross_entropy(t2.prob, pc.s1_obj[k].prob);
            }
            ++kv;
            parts.valid_object_count += 2;

            // Saturated activations can give an exactly-zero pooled rep; such
            // objects cannot participate in cosine retrieval or the banks.
            if (L.enable_ci_object && rep1_t.norm() > 0.0 && rep2_t.norm() > 0.0) {
                batch_v1.push_back({ObjectKey{pc.image_id, 1, k}, rep1_t});
                batch_v2.push_back({ObjectKey{pc.image_id, 2, k}, rep2_t});
                ci_refs.push_back({i, k});
            }
        }

        if (L.enable_cv_object && kv > 0) {
            any_cv_valid = true;
            sum_cv += pair_cv / kv;
            double coeff = 1.0 / (static_cast<double>(B) * kv);
            for (int k = 0; k < K; ++k) {
                if (!obj.valid_mask[k]) continue;
                terms.push_back({&pc.sf2, pc.cluster.assignment.view2.col(k),
                                 pc.s2_obj[k], pc.p1t_obj[k], coeff});
                terms.push_back({&pc.sf1, pc.cluster.assignment.view1.col(k),
                                 pc.s1_obj[k], pc.p2t_obj[k], coeff});
            }
        }
    }

    if (L.enable_global) {
        parts.l_cv_g = sum_g / B;
        double coeff = 1.0 / B;
        for (int i = 0; i < B; ++i) {
            terms.push_back({&pairs[i].sf2, Vector(), pairs[i].s2_glob,
                             pairs[i].p1t_glob, coeff});
            terms.push_back({&pairs[i].sf1, Vector(), pairs[i].s1_glob,
                             pairs[i].p2t_glob, coeff});
        }
    }
    if (L.enable_cv_object) {
        parts.l_cv_o = sum_cv / B;
        parts.cv_empty = !any_cv_valid;
    }

    // Cross-image term: trace every valid object through the banks before any
    // insertion from this step.
    std::vector<MatchRecord> records;
    if (L.enable_ci_object) {
        struct PendingCi {
            int pair;
            int k;
            int query_view;
            Vector teacher_nn_prob;
            bool consistent;
        };
        std::vector<CiTerm> citerms;
        std::vector<PendingCi> pending;

        auto trace = [&](const BatchObject& q, int query_view, int pair_idx, int k) {
            const MemoryBank& bank_same = (query_view == 1) ? state.bank1 : state.bank2;
            const MemoryBank& bank_other = (query_view == 1) ? state.bank2 : state.bank1;
            const auto& batch_same = (query_view == 1) ? batch_v1 : batch_v2;
            const auto& batch_other = (query_view == 1) ? batch_v2 : batch_v1;
            MatchRecord rec = cycle_consistent(q, bank_same, bank_other, batch_same, batch_other);
            records.push_back(rec);
            if (rec.warmup) return;
            HeadCache nn = project(state.teacher, HeadKind::Object, rec.nn_rep, L.tau_t,
                                   state.center.object_ptr());
            const PairCache& pc = pairs[pair_idx];
            const Vector& student_prob =
                (query_view == 1) ? pc.s2_obj[k].prob : pc.s1_obj[k].prob;
            citerms.push_back({query_view, rec.cycle_consistent, nn.prob, student_prob});
            if (rec.cycle_consistent)
                pending.push_back({pair_idx, k, query_view, nn.prob, true});
        };

        for (std::size_t idx = 0; idx < ci_refs.size(); ++idx) {
            trace(batch_v1[idx], 1, ci_refs[idx].pair, ci_refs[idx].k);
            trace(batch_v2[idx], 2, ci_refs[idx].pair, ci_refs[idx].k);
        }

        CiObjectResult ci = loss_ci_object(citerms);
        parts.l_ci_o = ci.value;
        parts.z1 = ci.z1;
        parts.z2 = ci.z2;
        bool all_warmup = true;
        for (const auto& r : records)
            if (!r.warmup) all_warmup = false;
        parts.ci_warmup = records.empty() || all_warmup;

        for (const auto& pnd : pending) {
            const PairCache& pc = pairs[pnd.pair];
            int z = (pnd.query_view == 1) ? ci.z1 : ci.z2;
            const ViewForward* view = (pnd.query_view == 1) ? &pc.sf2 : &pc.sf1;
            Vector pool = (pnd.query_view == 1)
                              ? Vector(pc.cluster.assignment.view2.col(pnd.k))
                              : Vector(pc.cluster.assignment.view1.col(pnd.k));
            const HeadCache& head =
                (pnd.query_view == 1) ? pc.s2_obj[pnd.k] : pc.s1_obj[pnd.k];
            terms.push_back({view, pool, head, pnd.teacher_nn_prob, 1.0 / z});
        }
    }

    EncoderParams grad = backward(state.student, cfg.encoder, terms);
    state.opt.step(state.student, grad);
    ema_update(state.teacher, state.student, cfg.ema_momentum);

    if (L.centering) {
        Vector mo = obj_logit_n > 0 ? Vector(obj_logit_sum / obj_logit_n) : Vector();
        Vector mg = glob_logit_n > 0 ? Vector(glob_logit_sum / glob_logit_n) : Vector();
        state.center.update(mo, mg);
    }

    if (L.enable_ci_object) {
        for (int i = 0; i < B; ++i) {
            const PairCache& pc = pairs[i];
            if (!pc.clustered) continue;
            std::vector<std::pair<int, Vector>> o1, o2;
            for (std::size_t idx = 0; idx < ci_refs.size(); ++idx) {
                if (ci_refs[idx].pair != i) continue;
                o1.emplace_back(ci_refs[idx].k, batch_v1[idx].rep);
                o2.emplace_back(ci_refs[idx].k, batch_v2[idx].rep);
            }
            state.bank1.insert(pc.image_id, o1);
            state.bank2.insert(pc.image_id, o2);
        }
    }

    ++state.step;

    LossReport report = loss_total(L, parts);
    report.bootstrap_ratio = bootstrapping_ratio(records).ratio;
    return report;
}

RunSummary run_pretrain(const RunConfig& cfg, const std::string& out_dir,
                        const std::string& resume_path) {
    cfg.validate();
    if (cfg.train_scenes < cfg.batch_size)
        throw ConfigError("run_pretrain: fewer scenes than one batch");
    std::filesystem::create_directories(out_dir);

    auto dataset = build_train_dataset(cfg);
    TrainState state = resume_path.empty() ? init_state(cfg) : load_checkpoint(resume_path);

    {
        std::ofstream f(out_dir + "/config.txt");
        f << dump_config(cfg);
    }
    write_manifest(out_dir + "/manifest.txt", cfg.scene, cfg.aug);

    RunSummary summary;
    summary.metrics_path = out_dir + "/metrics.csv";
    summary.checkpoint_path = out_dir + "/checkpoint.bin";

    std::ofstream metrics(summary.metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics: " + summary.metrics_path);
    metrics << "step,epoch,l_cv_g,l_cv_o,l_ci_o,l_total,Z1,Z2,bootstrap_ratio\n";

    const int steps_per_epoch = cfg.train_scenes / cfg.batch_size;

    for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        std::uint64_t eseed = Rng::derive(cfg.seed, 0xE60C000ULL + epoch);
        std::vector<int> order(dataset.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffler(eseed);
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[i], order[shuffler.below(i + 1)]);

        double lsum = 0.0, rsum = 0.0;
        for (int b = 0; b < steps_per_epoch; ++b) {
            std::vector<int> idx(order.begin() + b * cfg.batch_size,
                                 order.begin() + (b + 1) * cfg.batch_size);
            ViewPairBatch batch =
                make_batch(dataset, idx, Rng::derive(eseed, 0xBA7C), cfg);
            std::int64_t step_id = state.step;
            LossReport r = train_step(state, batch, cfg);
            metrics << step_id << ',' << epoch << ',' << fmt(r.l_cv_g) << ','
                    << fmt(r.l_cv_o) << ',' << fmt(r.l_ci_o) << ',' << fmt(r.l_total)
                    << ',' << r.z1 << ',' << r.z2 << ',' << fmt(r.bootstrap_ratio)
                    << '\n';
            lsum += r.l_total;
            rsum += r.bootstrap_ratio;
        }
        metrics.flush();
        state.epoch = epoch + 1;
        summary.epoch_loss.push_back(lsum / steps_per_epoch);
        summary.epoch_ratio.push_back(rsum / steps_per_epoch);

        if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs)
            save_checkpoint(summary.checkpoint_path, state);
    }
    if (cfg.epochs == 0 || state.epoch >= cfg.epochs)
        save_checkpoint(summary.checkpoint_path, state);
    return summary;
}

SegMetrics eval_knn(const EncoderParams& teacher, const RunConfig& cfg, int ratio) {
    auto train_ds = build_train_dataset(cfg);
    auto eval_ds = build_eval_dataset(cfg);
    FeatureStore store = build_store(teacher, cfg.encoder, train_ds, cfg.aug, ratio,
                                     cfg.scene.classes, Rng::derive(cfg.seed, 0x30000));
    FeatureStore queries = build_store(teacher, cfg.encoder, eval_ds, cfg.aug, 1,
                                       cfg.scene.classes, 0);
    const int n = static_cast<int>(queries.entries.size());
    if (n == 0) throw ConfigError("eval_knn: empty query set");
    Matrix q(n, queries.entries[0].feature.size());
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        q.row(i) = queries.entries[i].feature.transpose();
        labels[i] = queries.entries[i].label;
    }
    std::vector<int> preds = knn_predict(store, q, cfg.eval.knn_k);
    return miou(preds, labels, cfg.scene.classes);
}

std::vector<EvalRow> run_eval_knn(const TrainState& state, const RunConfig& cfg,
                                  const std::string& out_csv) {
    std::vector<EvalRow> rows;
    for (int ratio : cfg.eval.ratios) {
        SegMetrics m = eval_knn(state.teacher, cfg, ratio);
        rows.push_back({ratio, m.miou});
    }
    if (!out_csv.empty()) {
        std::ofstream f(out_csv, std::ios::trunc);
        if (!f) throw IoError("cannot write results: " + out_csv);
        f << "ratio,miou\n";
        for (const auto& r : rows) f << r.ratio << ',' << fmt(r.miou) << '\n';
    }
    return rows;
}

SegMetrics run_eval_probe(const TrainState& state, const RunConfig& cfg,
                          const std::string& out_csv) {
    auto train_ds = build_train_dataset(cfg);
    auto eval_ds = build_eval_dataset(cfg);
    FeatureStore train = build_store(state.teacher, cfg.encoder, train_ds, cfg.aug, 1,
                                     cfg.scene.classes, 0);
    FeatureStore val = build_store(state.teacher, cfg.encoder, eval_ds, cfg.aug, 1,
                                   cfg.scene.classes, 0);
    ProbeResult probe = linear_probe(train, val, cfg.eval.probe_epochs,
                                     cfg.eval.probe_lr, Rng::derive(cfg.seed, 0x40000));
    if (!out_csv.empty()) {
        std::ofstream f(out_csv, std::ios::trunc);
        if (!f) throw IoError("cannot write results: " + out_csv);
        f << "metric,value\nmiou," << fmt(probe.metrics.miou) << '\n';
        for (std::size_t c = 0; c < probe.metrics.per_class_iou.size(); ++c)
            f << "iou_class_" << c << ',' << fmt(probe.metrics.per_class_iou[c]) << '\n';
    }
    return probe.metrics;
}

void cluster_debug_dump(const RunConfig& cfg, const EncoderParams& params,
                        std::uint64_t seed, const std::string& out_json) {
    cfg.validate();
    SceneImage img = generate_scene(Rng::derive(cfg.seed, 0x10000), cfg.scene);
    auto [v1, v2] = augment_pair(img, seed, cfg.aug);
    ViewForward f1 = forward_dense(params, cfg.encoder, v1);
    ViewForward f2 = forward_dense(params, cfg.encoder, v2);

    Matrix coords(f1.tokens.rows() + f2.tokens.rows(), 2);
    coords.topRows(f1.tokens.rows()) = v1.patch_coords;
    coords.bottomRows(f2.tokens.rows()) = v2.patch_coords;
    ClusterResult res = (cfg.cluster_algorithm == "kmeans")
                            ? kmeans_joint(f1.tokens, f2.tokens, cfg.cluster)
                            : cluster_joint(f1.tokens, f2.tokens, coords, cfg.cluster);

    const int pw1 = v1.width() / v1.patch_size;
    const int pw2 = v2.width() / v2.patch_size;
    auto grid = [](const Eigen::VectorXi& hard, int offset, int count, int pw) {
        nlohmann::json rows = nlohmann::json::array();
        nlohmann::json row = nlohmann::json::array();
        for (int i = 0; i < count; ++i) {
            row.push_back(hard(offset + i));
            if ((i + 1) % pw == 0) {
                rows.push_back(row);
                row = nlohmann::json::array();
            }
        }
        return rows;
    };

    nlohmann::json j;
    j["image_id"] = img.image_id;
    j["seed"] = seed;
    j["algorithm"] = cfg.cluster_algorithm;
    j["k"] = cfg.cluster.k;
    j["valid_mask"] = res.objects.valid_mask;
    j["hard_view1"] = grid(res.assignment.hard, 0, f1.tokens.rows(), pw1);
    j["hard_view2"] =
        grid(res.assignment.hard, static_cast<int>(f1.tokens.rows()),
             static_cast<int>(f2.tokens.rows()), pw2);
    j["labels_view1"] = std::vector<int>(v1.patch_labels.data(),
                                         v1.patch_labels.data() + v1.patch_labels.size());
    j["labels_view2"] = std::vector<int>(v2.patch_labels.data(),
                                         v2.patch_labels.data() + v2.patch_labels.size());

    std::ofstream f(out_json, std::ios::trunc);
    if (!f) throw IoError("cannot write debug dump: " + out_json);
    f << j.dump(2) << '\n';
}

}  // namespace dboot
