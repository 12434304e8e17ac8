#include "dboot/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dboot {

void RunConfig::validate() const {
    scene.validate();
    aug.validate(scene);
    encoder.validate();
    loss.validate();
    if (scene.patch_size != aug.patch_size || aug.patch_size != encoder.patch_size)
        throw ConfigError("config: patch sizes must agree across scene/aug/encoder");
    if (bank_size < 1) throw ConfigError("config: bank size must be >= 1");
    if (batch_size < 1 || epochs < 0 || train_scenes < 1)
        throw ConfigError("config: bad training sizes");
    if (cluster_algorithm != "sinkhorn" && cluster_algorithm != "kmeans")
        throw ConfigError("config: cluster.algorithm must be sinkhorn or kmeans");
    if (cluster.epsilon <= 0 || cluster.outer_iters < 1)
        throw ConfigError("config: bad clustering settings");
    if (eval.knn_k < 1) throw ConfigError("config: eval.k must be >= 1");
    for (int r : eval.ratios)
        if (r < 1) throw ConfigError("config: eval ratios must be >= 1");
}

namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;

int to_int(const std::string& v) {
    std::size_t pos = 0;
    int out = 0;
    try {
        out = std::stoi(v, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != v.size()) throw ConfigError("config: bad integer value '" + v + "'");
    return out;
}

double to_double(const std::string& v) {
    std::size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != v.size()) throw ConfigError("config: bad number value '" + v + "'");
    return out;
}

std::uint64_t to_u64(const std::string& v) {
    std::size_t pos = 0;
    std::uint64_t out = 0;
    try {
        out = std::stoull(v, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != v.size()) throw ConfigError("config: bad seed value '" + v + "'");
    return out;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: bad boolean value '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(to_int(item));
    if (out.empty()) throw ConfigError("config: empty list value");
    return out;
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"scene.img_h", [](RunConfig& c, const std::string& v) { c.scene.img_h = to_int(v); }},
        {"scene.img_w", [](RunConfig& c, const std::string& v) { c.scene.img_w = to_int(v); }},
        {"scene.classes", [](RunConfig& c, const std::string& v) { c.scene.classes = to_int(v); }},
        {"scene.min_objects", [](RunConfig& c, const std::string& v) { c.scene.min_objects = to_int(v); }},
        {"scene.max_objects", [](RunConfig& c, const std::string& v) { c.scene.max_objects = to_int(v); }},
        {"scene.pixel_noise", [](RunConfig& c, const std::string& v) { c.scene.pixel_noise = to_double(v); }},
        {"scene.scene_gain", [](RunConfig& c, const std::string& v) { c.scene.scene_gain = to_double(v); }},
        {"scene.scene_offset", [](RunConfig& c, const std::string& v) { c.scene.scene_offset = to_double(v); }},
        {"patch_size",
         [](RunConfig& c, const std::string& v) {
             int p = to_int(v);
             c.scene.patch_size = p;
             c.aug.patch_size = p;
             c.encoder.patch_size = p;
         }},
        {"aug.view_h", [](RunConfig& c, const std::string& v) { c.aug.view_h = to_int(v); }},
        {"aug.view_w", [](RunConfig& c, const std::string& v) { c.aug.view_w = to_int(v); }},
        {"aug.crop_min", [](RunConfig& c, const std::string& v) { c.aug.crop_min = to_double(v); }},
        {"aug.crop_max", [](RunConfig& c, const std::string& v) { c.aug.crop_max = to_double(v); }},
        {"aug.flip_prob", [](RunConfig& c, const std::string& v) { c.aug.flip_prob = to_double(v); }},
        {"aug.brightness", [](RunConfig& c, const std::string& v) { c.aug.brightness = to_double(v); }},
        {"aug.contrast", [](RunConfig& c, const std::string& v) { c.aug.contrast = to_double(v); }},
        {"aug.min_overlap", [](RunConfig& c, const std::string& v) { c.aug.min_overlap = to_double(v); }},
        {"encoder.dim", [](RunConfig& c, const std::string& v) { c.encoder.dim = to_int(v); }},
        {"encoder.mixer_layers", [](RunConfig& c, const std::string& v) { c.encoder.mixer_layers = to_int(v); }},
        {"encoder.use_attention", [](RunConfig& c, const std::string& v) { c.encoder.use_attention = to_bool(v); }},
        {"encoder.head_hidden", [](RunConfig& c, const std::string& v) { c.encoder.head_hidden = to_int(v); }},
        {"encoder.out_object", [](RunConfig& c, const std::string& v) { c.encoder.out_object = to_int(v); }},
        {"encoder.out_global", [](RunConfig& c, const std::string& v) { c.encoder.out_global = to_int(v); }},
        {"encoder.init_scale", [](RunConfig& c, const std::string& v) { c.encoder.init_scale = to_double(v); }},
        {"cluster.k", [](RunConfig& c, const std::string& v) { c.cluster.k = to_int(v); }},
        {"cluster.lambda_pos", [](RunConfig& c, const std::string& v) { c.cluster.lambda_pos = to_double(v); }},
        {"cluster.epsilon", [](RunConfig& c, const std::string& v) { c.cluster.epsilon = to_double(v); }},
        {"cluster.outer_iters", [](RunConfig& c, const std::string& v) { c.cluster.outer_iters = to_int(v); }},
        {"cluster.sinkhorn_iters", [](RunConfig& c, const std::string& v) { c.cluster.sinkhorn_iters = to_int(v); }},
        {"cluster.algorithm", [](RunConfig& c, const std::string& v) {
             c.cluster_algorithm = v;
         }},
        {"bank.size", [](RunConfig& c, const std::string& v) { c.bank_size = to_int(v); }},
        {"loss.global", [](RunConfig& c, const std::string& v) { c.loss.enable_global = to_bool(v); }},
        {"loss.cv_object", [](RunConfig& c, const std::string& v) { c.loss.enable_cv_object = to_bool(v); }},
        {"loss.ci_object", [](RunConfig& c, const std::string& v) { c.loss.enable_ci_object = to_bool(v); }},
        {"loss.tau_s", [](RunConfig& c, const std::string& v) { c.loss.tau_s = to_double(v); }},
        {"loss.tau_t", [](RunConfig& c, const std::string& v) { c.loss.tau_t = to_double(v); }},
        {"loss.tau_global_s", [](RunConfig& c, const std::string& v) { c.loss.tau_global_s = to_double(v); }},
        {"loss.tau_global_t", [](RunConfig& c, const std::string& v) { c.loss.tau_global_t = to_double(v); }},
        {"loss.centering", [](RunConfig& c, const std::string& v) { c.loss.centering = to_bool(v); }},
        {"loss.center_momentum", [](RunConfig& c, const std::string& v) { c.loss.center_momentum = to_double(v); }},
        {"train.batch_size", [](RunConfig& c, const std::string& v) { c.batch_size = to_int(v); }},
        {"train.epochs", [](RunConfig& c, const std::string& v) { c.epochs = to_int(v); }},
        {"train.scenes", [](RunConfig& c, const std::string& v) { c.train_scenes = to_int(v); }},
        {"train.lr", [](RunConfig& c, const std::string& v) { c.lr = to_double(v); }},
        {"train.weight_decay", [](RunConfig& c, const std::string& v) { c.weight_decay = to_double(v); }},
        {"train.ema_momentum", [](RunConfig& c, const std::string& v) { c.ema_momentum = to_double(v); }},
        {"train.checkpoint_every", [](RunConfig& c, const std::string& v) { c.checkpoint_every = to_int(v); }},
        {"train.seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); }},
        {"eval.k", [](RunConfig& c, const std::string& v) { c.eval.knn_k = to_int(v); }},
        {"eval.ratios", [](RunConfig& c, const std::string& v) { c.eval.ratios = to_int_list(v); }},
        {"eval.scenes", [](RunConfig& c, const std::string& v) { c.eval.eval_scenes = to_int(v); }},
        {"eval.probe_epochs", [](RunConfig& c, const std::string& v) { c.eval.probe_epochs = to_int(v); }},
        {"eval.probe_lr", [](RunConfig& c, const std::string& v) { c.eval.probe_lr = to_double(v); }},
    };
    return table;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    auto e = s.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

}  // namespace

void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto it = setters().find(key);
    if (it == setters().end())
        throw ConfigError("config: unknown key '" + key + "'");
    it->second(cfg, value);
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) +
                              " is not key=value");
        apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string dump_config(const RunConfig& cfg) {
    std::ostringstream o;
    o << "patch_size=" << cfg.scene.patch_size << "\n";
    o << "scene.img_h=" << cfg.scene.img_h << "\n";
    o << "scene.img_w=" << cfg.scene.img_w << "\n";
    o << "scene.classes=" << cfg.scene.classes << "\n";
    o << "scene.min_objects=" << cfg.scene.min_objects << "\n";
    o << "scene.max_objects=" << cfg.scene.max_objects << "\n";
    o << "scene.pixel_noise=" << cfg.scene.pixel_noise << "\n";
    o << "scene.scene_gain=" << cfg.scene.scene_gain << "\n";
    o << "scene.scene_offset=" << cfg.scene.scene_offset << "\n";
    o << "aug.view_h=" << cfg.aug.view_h << "\n";
    o << "aug.view_w=" << cfg.aug.view_w << "\n";
    o << "aug.crop_min=" << cfg.aug.crop_min << "\n";
    o << "aug.crop_max=" << cfg.aug.crop_max << "\n";
    o << "aug.flip_prob=" << cfg.aug.flip_prob << "\n";
    o << "aug.brightness=" << cfg.aug.brightness << "\n";
    o << "aug.contrast=" << cfg.aug.contrast << "\n";
    o << "aug.min_overlap=" << cfg.aug.min_overlap << "\n";
    o << "encoder.dim=" << cfg.encoder.dim << "\n";
    o << "encoder.mixer_layers=" << cfg.encoder.mixer_layers << "\n";
    o << "encoder.use_attention=" << (cfg.encoder.use_attention ? "true" : "false") << "\n";
    o << "encoder.head_hidden=" << cfg.encoder.head_hidden << "\n";
    o << "encoder.out_object=" << cfg.encoder.out_object << "\n";
    o << "encoder.out_global=" << cfg.encoder.out_global << "\n";
    o << "encoder.init_scale=" << cfg.encoder.init_scale << "\n";
    o << "cluster.k=" << cfg.cluster.k << "\n";
    o << "cluster.lambda_pos=" << cfg.cluster.lambda_pos << "\n";
    o << "cluster.epsilon=" << cfg.cluster.epsilon << "\n";
    o << "cluster.outer_iters=" << cfg.cluster.outer_iters << "\n";
    o << "cluster.sinkhorn_iters=" << cfg.cluster.sinkhorn_iters << "\n";
    o << "cluster.algorithm=" << cfg.cluster_algorithm << "\n";
    o << "bank.size=" << cfg.bank_size << "\n";
    o << "loss.global=" << (cfg.loss.enable_global ? "true" : "false") << "\n";
    o << "loss.cv_object=" << (cfg.loss.enable_cv_object ? "true" : "false") << "\n";
    o << "loss.ci_object=" << (cfg.loss.enable_ci_object ? "true" : "false") << "\n";
    o << "loss.tau_s=" << cfg.loss.tau_s << "\n";
    o << "loss.tau_t=" << cfg.loss.tau_t << "\n";
    o << "loss.tau_global_s=" << cfg.loss.tau_global_s << "\n";
    o << "loss.tau_global_t=" << cfg.loss.tau_global_t << "\n";
    o << "loss.centering=" << (cfg.loss.centering ? "true" : "false") << "\n";
    o << "loss.center_momentum=" << cfg.loss.center_momentum << "\n";
    o << "train.batch_size=" << cfg.batch_size << "\n";
    o << "train.epochs=" << cfg.epochs << "\n";
    o << "train.scenes=" << cfg.train_scenes << "\n";
    o << "train.lr=" << cfg.lr << "\n";
    o << "train.weight_decay=" << cfg.weight_decay << "\n";
    o << "train.ema_momentum=" << cfg.ema_momentum << "\n";
    o << "train.checkpoint_every=" << cfg.checkpoint_every << "\n";
    o << "train.seed=" << cfg.seed << "\n";
    o << "eval.k=" << cfg.eval.knn_k << "\n";
    std::string ratios;
    for (std::size_t i = 0; i < cfg.eval.ratios.size(); ++i)
        ratios += (i ? "," : "") + std::to_string(cfg.eval.ratios[i]);
    o << "eval.ratios=" << ratios << "\n";
    o << "eval.scenes=" << cfg.eval.eval_scenes << "\n";
    o << "eval.probe_epochs=" << cfg.eval.probe_epochs << "\n";
    o << "eval.probe_lr=" << cfg.eval.probe_lr << "\n";
    return o.str();
}

}  // namespace dboot
