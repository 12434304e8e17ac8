#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dboot/common.hpp"
#include "dboot/synth.hpp"

namespace dboot {

struct EncoderConfig {
    int patch_size = 8;
    int dim = 32;          // token width d
    int mixer_layers = 2;  // token-wise MLP layers after the patch embedding
    bool use_attention = false;  // one single-head self-attention layer
    int head_hidden = 32;
    int out_object = 64;   // L
    int out_global = 64;   // L-bar
    double init_scale = 1.0;

    void validate() const;
};

struct LinearLayer {
    Matrix w;  // out x in
    Vector b;

    static LinearLayer zeros(int out, int in) {
        return {Matrix::Zero(out, in), Vector::Zero(out)};
    }
};

struct AttentionParams {
    Matrix wq, wk, wv, wo;  // d x d, no biases
};

// Student and teacher share this layout. The object head and the global head
// share the trunk and differ only in the final linear layer.
struct EncoderParams {
    LinearLayer patch_embed;
    std::optional<AttentionParams> attn;
    std::vector<LinearLayer> mixers;
    LinearLayer head_trunk;
    LinearLayer head_object;
    LinearLayer head_global;
};

// Applies f to every parameter block (Matrix or Vector) in a fixed order.
template <class Params, class F>
void visit_params(Params& p, F f) {
    f(p.patch_embed.w);
    f(p.patch_embed.b);
    if (p.attn) {
        f(p.attn->wq);
        f(p.attn->wk);
        f(p.attn->wv);
        f(p.attn->wo);
    }
    for (auto& layer : p.mixers) {
        f(layer.w);
        f(layer.b);
    }
    f(p.head_trunk.w);
    f(p.head_trunk.b);
    f(p.head_object.w);
    f(p.head_object.b);
    f(p.head_global.w);
    f(p.head_global.b);
}

EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed);
EncoderParams zeros_like(const EncoderParams& p);
std::size_t param_count(const EncoderParams& p);

double gelu(double x);
double gelu_grad(double x);

// Forward cache for one view; everything backward needs.
struct ViewForward {
    Matrix patches;    // N x 3P^2
    Matrix embed;      // N x d
    Matrix attn_in;    // input to attention (== embed) when enabled
    Matrix q, k, v, a, attn_mix;  // attention intermediates
    std::vector<Matrix> mixer_pre;  // pre-activation per mixer layer
    std::vector<Matrix> mixer_in;   // input per mixer layer
    Matrix tokens;     // N x d dense representation
    Vector global;     // row-mean of tokens
};

Matrix extract_patches(const AugmentedView& view, int patch_size);

ViewForward forward_dense(const EncoderParams& p, const EncoderConfig& cfg,
                          const AugmentedView& view);

enum class HeadKind { Object, Global };

struct HeadCache {
    Vector input;      // d
    Vector trunk_pre;  // head_hidden
    Vector trunk_act;
    Vector logits;     // L
    Vector prob;
    double temperature = 1.0;
    HeadKind kind = HeadKind::Object;
};

// softmax(head(rep)/tau); optional center is subtracted from the logits
// before the softmax (teacher centering).
HeadCache project(const EncoderParams& p, HeadKind kind, const Vector& rep,
                  double temperature, const Vector* center = nullptr);

struct TeacherCenter {
    Vector center_object;
    Vector center_global;
    double momentum = 0.9;
    bool enabled = true;

    void update(const Vector& mean_object_logits, const Vector& mean_global_logits);
    const Vector* object_ptr() const { return enabled ? &center_object : nullptr; }
    const Vector* global_ptr() const { return enabled ? &center_global : nullptr; }
};

// One cross-entropy term of the step loss, from the student's side. The
// teacher target and the pooling weights are constants.
struct StudentLossTerm {
    const ViewForward* view = nullptr;  // student forward the gradient flows into
    Vector pool_weights;  // size N affine weights; empty means mean pooling
    HeadCache head;
    Vector teacher_target;
    double coeff = 1.0;
};

// Exact reverse-mode gradients of sum_i coeff_i * H(target_i, prob_i) with
// respect to every student parameter.
EncoderParams backward(const EncoderParams& p, const EncoderConfig& cfg,
                       const std::vector<StudentLossTerm>& terms);

void ema_update(EncoderParams& teacher, const EncoderParams& student, double momentum);

struct AdamW {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    std::int64_t t = 0;
    EncoderParams m, v;

    void init(const EncoderParams& p) {
        m = zeros_like(p);
        v = zeros_like(p);
        t = 0;
    }
    void step(EncoderParams& p, const EncoderParams& g);
};

}  // namespace dboot
