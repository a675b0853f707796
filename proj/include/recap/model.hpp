#pragma once

// Desk-scale differentiable model: dense -> tanh -> dense -> per-sample
// standardization with learnable affine (gamma, beta) -> frozen affine
// head. Only gamma and beta are updated at test time; pretraining trains
// everything with cross-entropy and classical SGD momentum.

#include "recap/region.hpp"
#include "recap/stream.hpp"

#include <string>

namespace recap {

constexpr double kNormEpsilon = 1e-5;

struct TinyBackbone {
    Matrix W1;  // H x D
    Vec c1;     // H
    Vec gamma;  // d (test-time trainable)
    Vec beta;   // d (test-time trainable)
    Matrix W2;  // d x H
    Vec c2;     // d

    std::size_t input_dim() const { return W1.cols; }
    std::size_t hidden_dim() const { return W1.rows; }
    std::size_t feature_dim() const { return W2.rows; }
};

struct ModelProfile {
    std::size_t input_dim = 32;
    std::size_t hidden_dim = 64;
    std::size_t feature_dim = 16;
    std::size_t classes = 10;
};

// Full forward cache; z_hat is what the norm-affine backward needs.
struct ForwardResult {
    Vec h;       // tanh hidden
    Vec u;       // pre-normalization feature
    Vec z_hat;   // standardized u (zero mean, unit variance over coords)
    Vec z;       // gamma * z_hat + beta
    Vec logits;  // A z + b
    ProbVector p;
};

ForwardResult forward(const Vec& x, const TinyBackbone& backbone, const AffineHead& head);

// Gradients of the loss w.r.t. the normalization affine parameters, given
// dL/dz for one sample: grad_beta = dL/dz, grad_gamma = dL/dz * z_hat.
// Batch accumulation is the caller's sum of per-sample results with the
// objective's own reduction weights.
struct NormAffineGrad {
    Vec gamma;
    Vec beta;
};
NormAffineGrad backward_norm_affine(const ForwardResult& cache, const Vec& dl_dz);

// v <- momentum * v + grad; param <- param - lr * v (classical momentum).
void sgd_step(Vec& param, const Vec& grad, Vec& velocity, double lr, double momentum);

// Momentum buffers for the two adapted parameter vectors.
struct AdaptState {
    Vec v_gamma;
    Vec v_beta;
    double lr = 0.001;
    double momentum = 0.9;

    static AdaptState make(std::size_t feature_dim, double lr, double momentum);
};

struct PretrainConfig {
    std::size_t epochs = 20;
    double lr = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    // Smoothed targets keep logit margins (and so the region losses) in a
    // realistic band, as regularized backbone training recipes do.
    double label_smoothing = 0.1;
    Seed seed;
};

struct SourceModel {
    TinyBackbone backbone;
    AffineHead head;
    double source_accuracy = 0.0;
};

// Deterministic init + full-parameter cross-entropy training.
SourceModel pretrain_source(const Dataset& dataset, const ModelProfile& profile,
                            const PretrainConfig& config);

double evaluate_accuracy(const Dataset& dataset, const TinyBackbone& backbone,
                         const AffineHead& head);

// argmax with ties broken toward the lowest class index.
int argmax_class(const Vec& scores);

// Versioned little-endian binary checkpoint of all named parameter
// tensors; round-trips bit-exactly.
void save_checkpoint(const std::string& path, const TinyBackbone& backbone,
                     const AffineHead& head);
SourceModel load_checkpoint(const std::string& path);

}  // namespace recap
