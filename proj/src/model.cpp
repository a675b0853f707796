#include "recap/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace recap {

namespace {

void matvec(const Matrix& m, const Vec& v, const Vec& bias, Vec& out) {
    out.resize(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) out[i] = dot(m.row(i), v.data(), m.cols) + bias[i];
}

struct ParamGrads {
    Matrix W1;
    Vec c1, gamma, beta;
    Matrix W2;
    Vec c2;
    Matrix A;
    Vec b;

    explicit ParamGrads(const TinyBackbone& bb, const AffineHead& head)
        : W1(bb.W1.rows, bb.W1.cols),
          c1(bb.c1.size(), 0.0),
          gamma(bb.gamma.size(), 0.0),
          beta(bb.beta.size(), 0.0),
          W2(bb.W2.rows, bb.W2.cols),
          c2(bb.c2.size(), 0.0),
          A(head.A.rows, head.A.cols),
          b(head.b.size(), 0.0) {}
};

// Cross-entropy backward through the whole network for one sample,
// accumulating into the batch gradient with the given weight.
void accumulate_full_backward(const Vec& x, const TinyBackbone& bb, const AffineHead& head,
                              const ForwardResult& fr, int label, double weight,
                              double label_smoothing, ParamGrads& grads) {
    const std::size_t C = head.num_classes();
    const std::size_t d = bb.feature_dim();
    const std::size_t H = bb.hidden_dim();
    const std::size_t D = bb.input_dim();

    const double off_target = label_smoothing / static_cast<double>(C);
    Vec dlogits(C);
    for (std::size_t i = 0; i < C; ++i) {
        const double target =
            (static_cast<int>(i) == label ? 1.0 - label_smoothing : 0.0) + off_target;
        dlogits[i] = weight * (fr.p[i] - target);
    }

    for (std::size_t i = 0; i < C; ++i) {
        grads.b[i] += dlogits[i];
        for (std::size_t k = 0; k < d; ++k) grads.A(i, k) += dlogits[i] * fr.z[k];
    }

    Vec dz(d, 0.0);
    for (std::size_t i = 0; i < C; ++i) {
        const double* ai = head.A.row(i);
        for (std::size_t k = 0; k < d; ++k) dz[k] += dlogits[i] * ai[k];
    }

    Vec dzhat(d);
    for (std::size_t k = 0; k < d; ++k) {
        grads.beta[k] += dz[k];
        grads.gamma[k] += dz[k] * fr.z_hat[k];
        dzhat[k] = dz[k] * bb.gamma[k];
    }

    // Standardization backward (population mean/variance over coordinates).
    double mean_u = 0.0;
    for (std::size_t k = 0; k < d; ++k) mean_u += fr.u[k];
    mean_u /= static_cast<double>(d);
    double var_u = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double dev = fr.u[k] - mean_u;
        var_u += dev * dev;
    }
    var_u /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var_u + kNormEpsilon);
    double mean_dzhat = 0.0, mean_dzhat_zhat = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        mean_dzhat += dzhat[k];
        mean_dzhat_zhat += dzhat[k] * fr.z_hat[k];
    }
    mean_dzhat /= static_cast<double>(d);
    mean_dzhat_zhat /= static_cast<double>(d);
    Vec du(d);
    for (std::size_t k = 0; k < d; ++k)
        du[k] = inv * (dzhat[k] - mean_dzhat - fr.z_hat[k] * mean_dzhat_zhat);

    for (std::size_t k = 0; k < d; ++k) {
        grads.c2[k] += du[k];
        for (std::size_t j = 0; j < H; ++j) grads.W2(k, j) += du[k] * fr.h[j];
    }

    Vec dh(H, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        const double* wk = bb.W2.row(k);
        for (std::size_t j = 0; j < H; ++j) dh[j] += du[k] * wk[j];
    }
    for (std::size_t j = 0; j < H; ++j) {
        const double da = dh[j] * (1.0 - fr.h[j] * fr.h[j]);  // tanh'
        grads.c1[j] += da;
        for (std::size_t k = 0; k < D; ++k) grads.W1(j, k) += da * x[k];
    }
}

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char buf[4];
    is.read(reinterpret_cast<char*>(buf), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    return v;
}

void write_tensor(std::ostream& os, const std::string& name, const std::vector<std::size_t>& dims,
                  const double* data, std::size_t count) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(dims.size()));
    for (std::size_t dim : dims) write_u32(os, static_cast<std::uint32_t>(dim));
    // Raw IEEE-754 bytes so the round trip is bit-exact.
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
}

struct RawTensor {
    std::vector<std::size_t> dims;
    std::vector<double> data;
};

RawTensor read_tensor(std::istream& is, std::string& name) {
    const std::uint32_t name_len = read_u32(is);
    name.resize(name_len);
    is.read(name.data(), name_len);
    RawTensor t;
    const std::uint32_t ndim = read_u32(is);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        t.dims.push_back(read_u32(is));
        count *= t.dims.back();
    }
    t.data.resize(count);
    is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(count * 8));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
    return t;
}

constexpr std::uint32_t kCheckpointMagic = 0x52435031;  // "RCP1"
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

ForwardResult forward(const Vec& x, const TinyBackbone& backbone, const AffineHead& head) {
    if (x.size() != backbone.input_dim())
        throw std::invalid_argument("forward: input dimension mismatch");
    if (backbone.feature_dim() != head.feature_dim())
        throw std::invalid_argument("forward: feature dimension mismatch with head");
    const std::size_t d = backbone.feature_dim();

    Vec a1;
    matvec(backbone.W1, x, backbone.c1, a1);
    Vec h(a1.size());
    for (std::size_t j = 0; j < a1.size(); ++j) h[j] = std::tanh(a1[j]);

    Vec u;
    matvec(backbone.W2, h, backbone.c2, u);

    double mean = 0.0;
    for (double v : u) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : u) {
        const double dev = v - mean;
        var += dev * dev;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);

    Vec z_hat(d), z(d);
    for (std::size_t k = 0; k < d; ++k) {
        z_hat[k] = (u[k] - mean) * inv;
        z[k] = backbone.gamma[k] * z_hat[k] + backbone.beta[k];
    }

    Vec logits;
    matvec(head.A, z, head.b, logits);
    ProbVector p = softmax(logits);
    return ForwardResult{std::move(h), std::move(u), std::move(z_hat), std::move(z),
                         std::move(logits), std::move(p)};
}

NormAffineGrad backward_norm_affine(const ForwardResult& cache, const Vec& dl_dz) {
    if (dl_dz.size() != cache.z_hat.size())
        throw std::invalid_argument("backward_norm_affine: gradient dimension mismatch");
    if (!all_finite(dl_dz))
        throw std::invalid_argument("backward_norm_affine: non-finite gradient");
    NormAffineGrad g;
    g.beta = dl_dz;
    g.gamma.resize(dl_dz.size());
    for (std::size_t k = 0; k < dl_dz.size(); ++k) g.gamma[k] = dl_dz[k] * cache.z_hat[k];
    return g;
}

void sgd_step(Vec& param, const Vec& grad, Vec& velocity, double lr, double momentum) {
    if (param.size() != grad.size() || param.size() != velocity.size())
        throw std::invalid_argument("sgd_step: shape mismatch");
    for (std::size_t k = 0; k < param.size(); ++k) {
        velocity[k] = momentum * velocity[k] + grad[k];
        param[k] -= lr * velocity[k];
    }
}

AdaptState AdaptState::make(std::size_t feature_dim, double lr, double momentum) {
    AdaptState st;
    st.v_gamma.assign(feature_dim, 0.0);
    st.v_beta.assign(feature_dim, 0.0);
    st.lr = lr;
    st.momentum = momentum;
    return st;
}

SourceModel pretrain_source(const Dataset& dataset, const ModelProfile& profile,
                            const PretrainConfig& config) {
    if (dataset.size() == 0) throw std::invalid_argument("pretrain_source: empty dataset");
    if (config.epochs < 1) throw std::invalid_argument("pretrain_source: need >= 1 epoch");
    if (dataset.x.cols != profile.input_dim)
        throw std::invalid_argument("pretrain_source: dataset dimension mismatch");

    const std::size_t D = profile.input_dim;
    const std::size_t H = profile.hidden_dim;
    const std::size_t d = profile.feature_dim;
    const std::size_t C = profile.classes;

    SourceModel model;
    Rng init = Rng(config.seed).split(0x11);
    model.backbone.W1 = Matrix(H, D);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(D));
    for (double& v : model.backbone.W1.data) v = s1 * init.next_gaussian();
    model.backbone.c1.assign(H, 0.0);
    model.backbone.W2 = Matrix(d, H);
    const double s2 = 1.0 / std::sqrt(static_cast<double>(H));
    for (double& v : model.backbone.W2.data) v = s2 * init.next_gaussian();
    model.backbone.c2.assign(d, 0.0);
    model.backbone.gamma.assign(d, 1.0);
    model.backbone.beta.assign(d, 0.0);
    model.head.A = Matrix(C, d);
    const double s3 = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& v : model.head.A.data) v = s3 * init.next_gaussian();
    model.head.b.assign(C, 0.0);

    ParamGrads vel(model.backbone, model.head);  // momentum buffers, zero-initialized
    Rng shuffle_rng = Rng(config.seed).split(0x12);
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(start + config.batch_size, order.size());
            const double w = 1.0 / static_cast<double>(end - start);
            ParamGrads grads(model.backbone, model.head);
            for (std::size_t i = start; i < end; ++i) {
                const Vec x = dataset.x.row_vec(order[i]);
                const ForwardResult fr = forward(x, model.backbone, model.head);
                accumulate_full_backward(x, model.backbone, model.head, fr, dataset.y[order[i]],
                                         w, config.label_smoothing, grads);
            }
            sgd_step(model.backbone.W1.data, grads.W1.data, vel.W1.data, config.lr, config.momentum);
            sgd_step(model.backbone.c1, grads.c1, vel.c1, config.lr, config.momentum);
            sgd_step(model.backbone.gamma, grads.gamma, vel.gamma, config.lr, config.momentum);
            sgd_step(model.backbone.beta, grads.beta, vel.beta, config.lr, config.momentum);
            sgd_step(model.backbone.W2.data, grads.W2.data, vel.W2.data, config.lr, config.momentum);
            sgd_step(model.backbone.c2, grads.c2, vel.c2, config.lr, config.momentum);
            sgd_step(model.head.A.data, grads.A.data, vel.A.data, config.lr, config.momentum);
            sgd_step(model.head.b, grads.b, vel.b, config.lr, config.momentum);
        }
    }

    model.source_accuracy = evaluate_accuracy(dataset, model.backbone, model.head);
    return model;
}

double evaluate_accuracy(const Dataset& dataset, const TinyBackbone& backbone,
                         const AffineHead& head) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const ForwardResult fr = forward(dataset.x.row_vec(i), backbone, head);
        if (argmax_class(fr.logits) == dataset.y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

int argmax_class(const Vec& scores) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return static_cast<int>(best);
}

void save_checkpoint(const std::string& path, const TinyBackbone& backbone,
                     const AffineHead& head) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    write_u32(os, kCheckpointMagic);
    write_u32(os, kCheckpointVersion);
    write_u32(os, 8);  // tensor count
    write_tensor(os, "W1", {backbone.W1.rows, backbone.W1.cols}, backbone.W1.data.data(),
                 backbone.W1.data.size());
    write_tensor(os, "c1", {backbone.c1.size()}, backbone.c1.data(), backbone.c1.size());
    write_tensor(os, "gamma", {backbone.gamma.size()}, backbone.gamma.data(),
                 backbone.gamma.size());
    write_tensor(os, "beta", {backbone.beta.size()}, backbone.beta.data(), backbone.beta.size());
    write_tensor(os, "W2", {backbone.W2.rows, backbone.W2.cols}, backbone.W2.data.data(),
                 backbone.W2.data.size());
    write_tensor(os, "c2", {backbone.c2.size()}, backbone.c2.data(), backbone.c2.size());
    write_tensor(os, "A", {head.A.rows, head.A.cols}, head.A.data.data(), head.A.data.size());
    write_tensor(os, "b", {head.b.size()}, head.b.data(), head.b.size());
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

SourceModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    if (read_u32(is) != kCheckpointMagic) throw std::runtime_error("checkpoint: bad magic");
    const std::uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t count = read_u32(is);

    SourceModel model;
    for (std::uint32_t t = 0; t < count; ++t) {
        std::string name;
        RawTensor raw = read_tensor(is, name);
        auto as_matrix = [&](Matrix& m) {
            if (raw.dims.size() != 2) throw std::runtime_error("checkpoint: " + name + " not 2-d");
            m = Matrix(raw.dims[0], raw.dims[1]);
            m.data = std::move(raw.data);
        };
        if (name == "W1") as_matrix(model.backbone.W1);
        else if (name == "c1") model.backbone.c1 = std::move(raw.data);
        else if (name == "gamma") model.backbone.gamma = std::move(raw.data);
        else if (name == "beta") model.backbone.beta = std::move(raw.data);
        else if (name == "W2") as_matrix(model.backbone.W2);
        else if (name == "c2") model.backbone.c2 = std::move(raw.data);
        else if (name == "A") as_matrix(model.head.A);
        else if (name == "b") model.head.b = std::move(raw.data);
        else throw std::runtime_error("checkpoint: unknown tensor " + name);
    }
    model.head.validate();
    return model;
}

}  // namespace recap
