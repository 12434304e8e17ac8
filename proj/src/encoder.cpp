#include "dboot/encoder.hpp"

#include <cmath>
#include <unordered_map>

#include "dboot/rng.hpp"

namespace dboot {

void EncoderConfig::validate() const {
    if (patch_size <= 0 || dim <= 0 || head_hidden <= 0)
        throw ConfigError("encoder: bad dimensions");
    if (mixer_layers < 0) throw ConfigError("encoder: bad mixer layer count");
    if (out_object < 2 || out_global < 2)
        throw ConfigError("encoder: head outputs need at least 2 logits");
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / M_SQRT2)); }

double gelu_grad(double x) {
    double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    double cdf = 0.5 * (1.0 + std::erf(x / M_SQRT2));
    return cdf + x * phi;
}

static LinearLayer init_linear(int out, int in, double scale, Rng& rng) {
    LinearLayer l = LinearLayer::zeros(out, in);
    double std = scale / std::sqrt(static_cast<double>(in));
    for (int i = 0; i < out; ++i)
        for (int j = 0; j < in; ++j) l.w(i, j) = std * rng.normal();
    return l;
}

EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(Rng::derive(seed, 0x1A17));
    const int in_dim = 3 * cfg.patch_size * cfg.patch_size;
    EncoderParams p;
    p.patch_embed = init_linear(cfg.dim, in_dim, cfg.init_scale, rng);
    if (cfg.use_attention) {
        AttentionParams a;
        a.wq = init_linear(cfg.dim, cfg.dim, cfg.init_scale, rng).w;
        a.wk = init_linear(cfg.dim, cfg.dim, cfg.init_scale, rng).w;
        a.wv = init_linear(cfg.dim, cfg.dim, cfg.init_scale, rng).w;
        a.wo = init_linear(cfg.dim, cfg.dim, cfg.init_scale, rng).w;
        p.attn = a;
    }
    for (int i = 0; i < cfg.mixer_layers; ++i)
        p.mixers.push_back(init_linear(cfg.dim, cfg.dim, cfg.init_scale, rng));
    p.head_trunk = init_linear(cfg.head_hidden, cfg.dim, cfg.init_scale, rng);
    p.head_object = init_linear(cfg.out_object, cfg.head_hidden, cfg.init_scale, rng);
    p.head_global = init_linear(cfg.out_global, cfg.head_hidden, cfg.init_scale, rng);
    return p;
}

EncoderParams zeros_like(const EncoderParams& p) {
    EncoderParams z = p;
    visit_params(z, [](auto& block) { block.setZero(); });
    return z;
}

std::size_t param_count(const EncoderParams& p) {
    std::size_t n = 0;
    visit_params(const_cast<EncoderParams&>(p),
                 [&](auto& block) { n += static_cast<std::size_t>(block.size()); });
    return n;
}

Matrix extract_patches(const AugmentedView& view, int patch_size) {
    const int P = patch_size;
    const int H = view.height(), W = view.width();
    if (H % P != 0 || W % P != 0)
        throw ConfigError("extract_patches: view size not divisible by patch size");
    const int ph = H / P, pw = W / P;
    Matrix out(ph * pw, 3 * P * P);
    for (int pr = 0; pr < ph; ++pr)
        for (int pc = 0; pc < pw; ++pc) {
            int idx = pr * pw + pc;
            for (int r = 0; r < P; ++r)
                for (int c = 0; c < P; ++c)
                    for (int ch = 0; ch < 3; ++ch)
                        out(idx, (r * P + c) * 3 + ch) =
                            view.pixels[ch](pr * P + r, pc * P + c);
        }
    return out;
}

static Matrix linear_rows(const Matrix& x, const LinearLayer& l) {
    return (x * l.w.transpose()).rowwise() + l.b.transpose();
}

ViewForward forward_dense(const EncoderParams& p, const EncoderConfig& cfg,
                          const AugmentedView& view) {
    ViewForward f;
    f.patches = extract_patches(view, cfg.patch_size);
    f.embed = linear_rows(f.patches, p.patch_embed);
    require_finite(f.embed, "patch embedding output");

    Matrix x = f.embed;
    if (p.attn) {
        f.attn_in = x;
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
        f.q = x * p.attn->wq.transpose();
        f.k = x * p.attn->wk.transpose();
        f.v = x * p.attn->wv.transpose();
        Matrix s = f.q * f.k.transpose() * inv_sqrt_d;
        f.a = Matrix(s.rows(), s.cols());
        for (int i = 0; i < s.rows(); ++i) {
            Vector row = s.row(i).transpose();
            double m = row.maxCoeff();
            Vector e = (row.array() - m).exp();
            f.a.row(i) = (e / e.sum()).transpose();
        }
        f.attn_mix = f.a * f.v;
        x = f.attn_in + f.attn_mix * p.attn->wo.transpose();
        require_finite(x, "attention output");
    }

    f.mixer_in.reserve(p.mixers.size());
    f.mixer_pre.reserve(p.mixers.size());
    for (std::size_t i = 0; i < p.mixers.size(); ++i) {
        f.mixer_in.push_back(x);
        Matrix pre = linear_rows(x, p.mixers[i]);
        if (!pre.allFinite())
            throw NumericError("non-finite values in mixer layer " + std::to_string(i));
        f.mixer_pre.push_back(pre);
        x = pre.unaryExpr([](double v) { return gelu(v); });
    }
    f.tokens = x;
    f.global = f.tokens.colwise().mean().transpose();
    return f;
}

HeadCache project(const EncoderParams& p, HeadKind kind, const Vector& rep,
                  double temperature, const Vector* center) {
    if (temperature <= 0) throw ConfigError("project: temperature must be positive");
    HeadCache c;
    c.kind = kind;
    c.temperature = temperature;
    c.input = rep;
    c.trunk_pre = p.head_trunk.w * rep + p.head_trunk.b;
    c.trunk_act = c.trunk_pre.unaryExpr([](double v) { return gelu(v); });
    const LinearLayer& fin = (kind == HeadKind::Object) ? p.head_object : p.head_global;
    c.logits = fin.w * c.trunk_act + fin.b;
    Vector scaled = c.logits;
    if (center) {
        if (center->size() != scaled.size())
            throw ShapeError("project: center size mismatch");
        scaled -= *center;
    }
    scaled /= temperature;
    double m = scaled.maxCoeff();
    Vector e = (scaled.array() - m).exp();
    c.prob = e / e.sum();
    if (!c.prob.allFinite()) throw NumericError("non-finite projection output");
    return c;
}

void TeacherCenter::update(const Vector& mean_object_logits,
                           const Vector& mean_global_logits) {
    if (center_object.size() == 0) center_object = Vector::Zero(mean_object_logits.size());
    if (center_global.size() == 0) center_global = Vector::Zero(mean_global_logits.size());
    if (mean_object_logits.size() > 0)
        center_object = momentum * center_object + (1.0 - momentum) * mean_object_logits;
    if (mean_global_logits.size() > 0)
        center_global = momentum * center_global + (1.0 - momentum) * mean_global_logits;
}

// Backward through the head MLP for one term; returns dL/d(rep).
static Vector head_backward(const EncoderParams& p, const HeadCache& c,
                            const Vector& dlogits, EncoderParams& g) {
    const LinearLayer& fin =
        (c.kind == HeadKind::Object) ? p.head_object : p.head_global;
    LinearLayer& gfin = (c.kind == HeadKind::Object) ? g.head_object : g.head_global;
    gfin.w += dlogits * c.trunk_act.transpose();
    gfin.b += dlogits;
    Vector dact = fin.w.transpose() * dlogits;
    Vector dpre =
        dact.cwiseProduct(c.trunk_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    g.head_trunk.w += dpre * c.input.transpose();
    g.head_trunk.b += dpre;
    return p.head_trunk.w.transpose() * dpre;
}

// Backward through the per-view encoder stack given dL/d(tokens).
static void view_backward(const EncoderParams& p, const EncoderConfig& cfg,
                          const ViewForward& f, Matrix dtokens, EncoderParams& g) {
    for (int i = static_cast<int>(p.mixers.size()) - 1; i >= 0; --i) {
        Matrix dpre = dtokens.cwiseProduct(
            f.mixer_pre[i].unaryExpr([](double v) { return gelu_grad(v); }));
        g.mixers[i].w += dpre.transpose() * f.mixer_in[i];
        g.mixers[i].b += dpre.colwise().sum().transpose();
        dtokens = dpre * p.mixers[i].w;
    }

    if (p.attn) {
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
        Matrix dx = dtokens;  // residual path
        Matrix dmix = dtokens * p.attn->wo;
        g.attn->wo += dtokens.transpose() * f.attn_mix;
        Matrix da = dmix * f.v.transpose();
        Matrix dv = f.a.transpose() * dmix;
        Matrix ds(da.rows(), da.cols());
        for (int i = 0; i < da.rows(); ++i) {
            double dot = da.row(i).dot(f.a.row(i));
            ds.row(i) = (da.row(i).array() - dot) * f.a.row(i).array();
        }
        Matrix dq = ds * f.k * inv_sqrt_d;
        Matrix dk = ds.transpose() * f.q * inv_sqrt_d;
        g.attn->wq += dq.transpose() * f.attn_in;
        g.attn->wk += dk.transpose() * f.attn_in;
        g.attn->wv += dv.transpose() * f.attn_in;
        dx += dq * p.attn->wq + dk * p.attn->wk + dv * p.attn->wv;
        dtokens = dx;
    }

    g.patch_embed.w += dtokens.transpose() * f.patches;
    g.patch_embed.b += dtokens.colwise().sum().transpose();
}

EncoderParams backward(const EncoderParams& p, const EncoderConfig& cfg,
                       const std::vector<StudentLossTerm>& terms) {
    EncoderParams g = zeros_like(p);
    std::unordered_map<const ViewForward*, Matrix> token_grads;

    for (const auto& term : terms) {
        if (!term.view) throw InternalError("backward: loss term without a view cache");
        // d/dlogits of coeff * H(target, softmax(logits/tau))
        Vector dlogits = term.coeff / term.head.temperature *
                         (term.head.prob - term.teacher_target);
        Vector drep = head_backward(p, term.head, dlogits, g);

        auto [it, inserted] = token_grads.try_emplace(
            term.view, Matrix::Zero(term.view->tokens.rows(), term.view->tokens.cols()));
        Matrix& dtok = it->second;
        const int n = static_cast<int>(term.view->tokens.rows());
        if (term.pool_weights.size() == 0) {
            dtok += Vector::Constant(n, 1.0 / n) * drep.transpose();
        } else {
            if (term.pool_weights.size() != n)
                throw ShapeError("backward: pooling weights size mismatch");
            dtok += term.pool_weights * drep.transpose();
        }
    }

    for (auto& [view, dtok] : token_grads) view_backward(p, cfg, *view, dtok, g);

    bool finite = true;
    std::string where;
    visit_params(g, [&](auto& block) {
        if (finite && !block.allFinite()) finite = false;
    });
    if (!finite) throw NumericError("non-finite gradient");
    return g;
}

void ema_update(EncoderParams& teacher, const EncoderParams& student, double momentum) {
    if (momentum < 0.0 || momentum > 1.0)
        throw ConfigError("ema_update: momentum must be in [0, 1]");
    // Walk both trees in lockstep; shapes must agree.
    std::vector<double*> tdata;
    std::vector<std::ptrdiff_t> tsizes;
    visit_params(teacher, [&](auto& block) {
        tdata.push_back(block.data());
        tsizes.push_back(block.size());
    });
    std::size_t i = 0;
    bool ok = true;
    visit_params(const_cast<EncoderParams&>(student), [&](auto& block) {
        if (i >= tdata.size() || block.size() != tsizes[i]) {
            ok = false;
            ++i;
            return;
        }
        double* t = tdata[i];
        const double* s = block.data();
        for (std::ptrdiff_t j = 0; j < block.size(); ++j)
            t[j] = momentum * t[j] + (1.0 - momentum) * s[j];
        ++i;
    });
    if (!ok || i != tdata.size())
        throw ShapeError("ema_update: teacher/student parameter shapes differ");
}

void AdamW::step(EncoderParams& p, const EncoderParams& g) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));

    std::vector<double*> pm, pv;
    visit_params(m, [&](auto& block) { pm.push_back(block.data()); });
    visit_params(v, [&](auto& block) { pv.push_back(block.data()); });
    std::vector<const double*> pg;
    visit_params(const_cast<EncoderParams&>(g),
                 [&](auto& block) { pg.push_back(block.data()); });

    std::size_t bi = 0;
    visit_params(p, [&](auto& block) {
        double* w = block.data();
        double* mm = pm[bi];
        double* vv = pv[bi];
        const double* gg = pg[bi];
        for (std::ptrdiff_t j = 0; j < block.size(); ++j) {
            mm[j] = beta1 * mm[j] + (1.0 - beta1) * gg[j];
            vv[j] = beta2 * vv[j] + (1.0 - beta2) * gg[j] * gg[j];
            double mhat = mm[j] / bc1;
            double vhat = vv[j] / bc2;
            w[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[j]);
        }
        ++bi;
    });
}

}  // namespace dboot
