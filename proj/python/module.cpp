// Python bindings for the main operations: synthetic data, joint clustering,
// memory-bank retrieval, the dense evaluation stack, and the training harness.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dboot/bootstrap.hpp"
#include "dboot/clustering.hpp"
#include "dboot/config.hpp"
#include "dboot/evaldense.hpp"
#include "dboot/trainer.hpp"

namespace py = pybind11;
using namespace dboot;

namespace {

RunConfig config_from_text(const std::string& text) { return parse_config_text(text); }

}  // namespace

PYBIND11_MODULE(_dboot, m) {
    m.doc() = "Dense self-supervised bootstrapping core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    // ---- configuration -----------------------------------------------------
    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_static("from_text", &config_from_text, py::arg("text"))
        .def_static("load", &load_config, py::arg("path"))
        .def("set", &apply_config_line, py::arg("key"), py::arg("value"))
        .def("validate", &RunConfig::validate)
        .def("dump", [](const RunConfig& c) { return dump_config(c); })
        .def_readwrite("seed", &RunConfig::seed)
        .def_readwrite("epochs", &RunConfig::epochs)
        .def_readwrite("batch_size", &RunConfig::batch_size)
        .def_readwrite("train_scenes", &RunConfig::train_scenes);

    // ---- synthetic scenes --------------------------------------------------
    py::class_<SceneImage>(m, "SceneImage")
        .def_property_readonly("image_id", [](const SceneImage& s) { return s.image_id; })
        .def_property_readonly("labels", [](const SceneImage& s) { return s.labels; })
        .def_property_readonly(
            "pixels", [](const SceneImage& s) {
                return py::make_tuple(s.pixels[0], s.pixels[1], s.pixels[2]);
            });

    m.def(
        "generate_scene",
        [](std::uint64_t seed, const RunConfig& cfg) {
            return generate_scene(seed, cfg.scene);
        },
        py::arg("seed"), py::arg("config"));

    // ---- clustering --------------------------------------------------------
    py::class_<Assignment>(m, "Assignment")
        .def_readonly("soft", &Assignment::soft)
        .def_readonly("hard", &Assignment::hard)
        .def_readonly("view1", &Assignment::view1)
        .def_readonly("view2", &Assignment::view2);

    py::class_<ObjectSet>(m, "ObjectSet")
        .def_readonly("reps_view1", &ObjectSet::reps_view1)
        .def_readonly("reps_view2", &ObjectSet::reps_view2)
        .def_readonly("valid_mask", &ObjectSet::valid_mask)
        .def_readonly("centroids", &ObjectSet::centroids);

    py::class_<ClusterResult>(m, "ClusterResult")
        .def_readonly("assignment", &ClusterResult::assignment)
        .def_readonly("objects", &ClusterResult::objects);

    m.def(
        "sinkhorn_assign",
        [](const Matrix& cost, double epsilon, int iters, double tol) {
            return sinkhorn_assign(cost, epsilon, iters, tol);
        },
        py::arg("cost"), py::arg("epsilon") = 0.05, py::arg("iters") = 100,
        py::arg("tol") = 1e-6);

    m.def(
        "cluster_joint",
        [](const Matrix& z1, const Matrix& z2, const Matrix& coords, int k,
           double lambda_pos, double epsilon, std::uint64_t seed) {
            ClusterConfig cc;
            cc.k = k;
            cc.lambda_pos = lambda_pos;
            cc.epsilon = epsilon;
            cc.seed = seed;
            return cluster_joint(z1, z2, coords, cc);
        },
        py::arg("z1"), py::arg("z2"), py::arg("coords"), py::arg("k"),
        py::arg("lambda_pos") = 1.0, py::arg("epsilon") = 0.05, py::arg("seed") = 0);

    m.def(
        "kmeans_joint",
        [](const Matrix& z1, const Matrix& z2, int k, std::uint64_t seed) {
            ClusterConfig cc;
            cc.k = k;
            cc.seed = seed;
            return kmeans_joint(z1, z2, cc);
        },
        py::arg("z1"), py::arg("z2"), py::arg("k"), py::arg("seed") = 0);

    // ---- retrieval ---------------------------------------------------------
    m.def(
        "nn_retrieve",
        [](const Vector& query, const std::vector<Vector>& collection)
            -> py::object {
            auto hit = nn_retrieve(query, collection);
            if (!hit) return py::none();
            return py::make_tuple(hit->index, hit->cosine);
        },
        py::arg("query"), py::arg("collection"),
        "Returns (index, cosine) of the nearest entry or None when empty.");

    // ---- dense evaluation --------------------------------------------------
    m.def(
        "knn_predict",
        [](const std::vector<Vector>& features, const std::vector<int>& labels,
           int class_count, const Matrix& queries, int k) {
            if (features.size() != labels.size())
                throw ShapeError("knn_predict: features/labels length mismatch");
            FeatureStore store;
            store.class_count = class_count;
            for (std::size_t i = 0; i < features.size(); ++i)
                store.entries.push_back({features[i], labels[i], 0});
            return knn_predict(store, queries, k);
        },
        py::arg("features"), py::arg("labels"), py::arg("class_count"),
        py::arg("queries"), py::arg("k"));

    m.def(
        "miou",
        [](const std::vector<int>& preds, const std::vector<int>& labels,
           int class_count) {
            SegMetrics s = miou(preds, labels, class_count);
            return py::make_tuple(s.miou, s.per_class_iou);
        },
        py::arg("preds"), py::arg("labels"), py::arg("class_count"),
        "Returns (miou, per_class_iou); absent classes carry -1.");

    // ---- harness -----------------------------------------------------------
    m.def(
        "run_pretrain",
        [](const RunConfig& cfg, const std::string& out_dir,
           const std::string& resume) {
            RunSummary s = run_pretrain(cfg, out_dir, resume);
            py::dict d;
            d["epoch_loss"] = s.epoch_loss;
            d["epoch_ratio"] = s.epoch_ratio;
            d["checkpoint_path"] = s.checkpoint_path;
            d["metrics_path"] = s.metrics_path;
            return d;
        },
        py::arg("config"), py::arg("out_dir"), py::arg("resume") = std::string());

    m.def(
        "eval_knn",
        [](const std::string& checkpoint, const RunConfig& cfg, int ratio) {
            TrainState state = load_checkpoint(checkpoint);
            return eval_knn(state.teacher, cfg, ratio).miou;
        },
        py::arg("checkpoint"), py::arg("config"), py::arg("ratio"),
        "Dense nearest-neighbor mIoU of the stored teacher encoder.");

    m.def(
        "cluster_debug",
        [](const RunConfig& cfg, const std::string& checkpoint, std::uint64_t seed,
           const std::string& out_json) {
            TrainState state = load_checkpoint(checkpoint);
            cluster_debug_dump(cfg, state.teacher, seed, out_json);
        },
        py::arg("config"), py::arg("checkpoint"), py::arg("seed"),
        py::arg("out_json"));
}
