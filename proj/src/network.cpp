#include "crispe/network.hpp"

#include <cmath>
#include <numbers>

#include "crispe/error.hpp"

namespace crispe {

const char* to_string(Activation a) noexcept {
    switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Gelu: return "gelu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
    }
    return "identity";
}

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "gelu") return Activation::Gelu;
    if (name == "tanh") return Activation::Tanh;
    if (name == "identity") return Activation::Identity;
    fail(ErrorKind::Validation, "unknown activation '" + name + "'");
}

namespace {

double activate(Activation a, double s) {
    switch (a) {
    case Activation::Relu: return s > 0.0 ? s : 0.0;
    case Activation::Gelu: return 0.5 * s * (1.0 + std::erf(s * std::numbers::sqrt2 / 2.0));
    case Activation::Tanh: return std::tanh(s);
    case Activation::Identity: return s;
    }
    return s;
}

// ReLU takes subgradient 0 at exactly 0.
double activate_grad(Activation a, double s) {
    switch (a) {
    case Activation::Relu: return s > 0.0 ? 1.0 : 0.0;
    case Activation::Gelu: {
        const double cdf = 0.5 * (1.0 + std::erf(s * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * s * s) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + s * pdf;
    }
    case Activation::Tanh: {
        const double t = std::tanh(s);
        return 1.0 - t * t;
    }
    case Activation::Identity: return 1.0;
    }
    return 1.0;
}

Vector augment(const Vector& a) {
    Vector out(a.size() + 1);
    out.head(a.size()) = a;
    out[a.size()] = 1.0;
    return out;
}

} // namespace

FeedForwardNet::FeedForwardNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    require(!layers_.empty(), ErrorKind::Validation, "network needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        require(layers_[l].weights.cols() >= 1 && layers_[l].weights.rows() >= 1, ErrorKind::Dimension,
                "layer " + std::to_string(l) + " has an empty weight matrix");
        if (l > 0)
            require(layers_[l].weights.cols() == layers_[l - 1].weights.rows() + 1, ErrorKind::Dimension,
                    "layer " + std::to_string(l) + " expects input width " + std::to_string(layers_[l].weights.cols()) +
                        " but previous layer outputs " + std::to_string(layers_[l - 1].weights.rows()) + " (+1 bias)");
    }
}

FeedForwardNet FeedForwardNet::random(const std::vector<int>& widths, Activation hidden, std::uint64_t seed,
                                      double scale) {
    require(widths.size() >= 2, ErrorKind::Validation, "random network needs at least input and output widths");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        require(widths[l] >= 1 && widths[l + 1] >= 1, ErrorKind::Validation, "layer widths must be positive");
        DenseLayer layer;
        layer.weights.resize(widths[l + 1], widths[l] + 1);
        const double stddev = scale / std::sqrt(static_cast<double>(widths[l]));
        for (Eigen::Index j = 0; j < layer.weights.cols(); ++j)
            for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) layer.weights(i, j) = stddev * normal(rng);
        layer.weights.col(widths[l]).setZero();
        layer.activation = l + 2 == widths.size() ? Activation::Identity : hidden;
        layers.push_back(std::move(layer));
    }
    return FeedForwardNet(std::move(layers));
}

Eigen::Index FeedForwardNet::param_count() const {
    Eigen::Index p = 0;
    for (const auto& layer : layers_) p += layer.param_count();
    return p;
}

Eigen::Index FeedForwardNet::offset(std::size_t l) const {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < l; ++i) off += layers_[i].param_count();
    return off;
}

Vector FeedForwardNet::flatten() const {
    Vector theta(param_count());
    Eigen::Index off = 0;
    for (const auto& layer : layers_) {
        theta.segment(off, layer.param_count()) = linalg::vec(layer.weights);
        off += layer.param_count();
    }
    return theta;
}

void FeedForwardNet::assign(const Vector& theta) {
    require(theta.size() == param_count(), ErrorKind::Dimension,
            "assign: parameter vector has length " + std::to_string(theta.size()) + ", expected " +
                std::to_string(param_count()));
    Eigen::Index off = 0;
    for (auto& layer : layers_) {
        layer.weights = Eigen::Map<const Matrix>(theta.data() + off, layer.weights.rows(), layer.weights.cols());
        off += layer.param_count();
    }
}

LayerGradients FeedForwardNet::zeros_like() const {
    LayerGradients g;
    for (const auto& layer : layers_) g.blocks.push_back(Matrix::Zero(layer.weights.rows(), layer.weights.cols()));
    return g;
}

bool FeedForwardNet::same_shape(const FeedForwardNet& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (layers_[l].weights.rows() != other.layers_[l].weights.rows()) return false;
        if (layers_[l].weights.cols() != other.layers_[l].weights.cols()) return false;
        if (layers_[l].activation != other.layers_[l].activation) return false;
    }
    return true;
}

double log_sum_exp(const Vector& z) {
    const double peak = z.maxCoeff();
    return peak + std::log((z.array() - peak).exp().sum());
}

Vector softmax(const Vector& z) {
    Vector e = (z.array() - z.maxCoeff()).exp();
    return e / e.sum();
}

double cross_entropy(const Vector& logits, int label) {
    require(label >= 0 && label < logits.size(), ErrorKind::Validation,
            "label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) + " classes");
    return log_sum_exp(logits) - logits[label];
}

ForwardTrace forward(const FeedForwardNet& net, const Vector& x) {
    require(x.size() == net.input_width(), ErrorKind::Dimension,
            "forward: input width " + std::to_string(x.size()) + ", network expects " + std::to_string(net.input_width()));
    ForwardTrace trace;
    trace.inputs.reserve(net.layer_count());
    trace.preacts.reserve(net.layer_count());
    Vector a = x;
    for (const auto& layer : net.layers()) {
        trace.inputs.push_back(augment(a));
        trace.preacts.push_back(layer.weights * trace.inputs.back());
        a = trace.preacts.back().unaryExpr([&](double s) { return activate(layer.activation, s); });
    }
    trace.logits = a;
    trace.probs = softmax(trace.logits);
    return trace;
}

std::vector<Vector> backprop_preacts(const FeedForwardNet& net, const ForwardTrace& trace, const Vector& dlogits) {
    const std::size_t L = net.layer_count();
    std::vector<Vector> grads(L);
    Vector delta = dlogits;
    for (std::size_t l = L; l-- > 0;) {
        const auto& layer = net.layer(l);
        const Vector& s = trace.preacts[l];
        for (Eigen::Index i = 0; i < delta.size(); ++i) delta[i] *= activate_grad(layer.activation, s[i]);
        grads[l] = delta;
        if (l > 0) delta = (layer.weights.transpose() * delta).head(layer.in_features());
    }
    return grads;
}

LayerGradients backward(const FeedForwardNet& net, const ForwardTrace& trace, int label) {
    require(label >= 0 && label < net.class_count(), ErrorKind::Validation,
            "backward: label " + std::to_string(label) + " out of range for " + std::to_string(net.class_count()) +
                " classes");
    Vector dlogits = trace.probs;
    dlogits[label] -= 1.0;
    const auto deltas = backprop_preacts(net, trace, dlogits);
    LayerGradients g;
    g.blocks.reserve(deltas.size());
    for (std::size_t l = 0; l < deltas.size(); ++l) g.blocks.push_back(deltas[l] * trace.inputs[l].transpose());
    return g;
}

int sample_categorical(const Vector& probs, Rng& rng) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double u = uniform(rng);
    double cumulative = 0.0;
    for (Eigen::Index c = 0; c < probs.size(); ++c) {
        cumulative += probs[c];
        if (u < cumulative) return static_cast<int>(c);
    }
    // u landed in the rounding gap above the final cumulative sum.
    for (Eigen::Index c = probs.size(); c-- > 0;)
        if (probs[c] > 0.0) return static_cast<int>(c);
    return 0;
}

PseudoGradient sample_pseudo_gradient(const FeedForwardNet& net, const ForwardTrace& trace, Rng& rng,
                                      int fixed_label) {
    PseudoGradient out;
    out.label = fixed_label >= 0 ? fixed_label : sample_categorical(trace.probs, rng);
    Vector dlogits = -trace.probs;
    dlogits[out.label] += 1.0;
    out.preact_grads = backprop_preacts(net, trace, dlogits);
    return out;
}

Matrix per_example_jacobian(const FeedForwardNet& net, const Vector& x) {
    const Eigen::Index p = net.param_count();
    require(p <= kJacobianParamLimit, ErrorKind::Size,
            "per_example_jacobian: " + std::to_string(p) + " parameters exceeds limit " +
                std::to_string(kJacobianParamLimit));
    const ForwardTrace trace = forward(net, x);
    const Eigen::Index m = net.class_count();
    Matrix jac(m, p);
    for (Eigen::Index r = 0; r < m; ++r) {
        const auto deltas = backprop_preacts(net, trace, Vector::Unit(m, r));
        Eigen::Index off = 0;
        for (std::size_t l = 0; l < deltas.size(); ++l) {
            const Matrix block = deltas[l] * trace.inputs[l].transpose();
            jac.row(r).segment(off, block.size()) = linalg::vec(block).transpose();
            off += block.size();
        }
    }
    return jac;
}

double dataset_loss(const FeedForwardNet& net, const LabeledDataset& data) {
    require(!data.empty(), ErrorKind::Validation, "dataset_loss: empty dataset");
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) total += cross_entropy(forward(net, data.x(i)).logits, data.y(i));
    return total / static_cast<double>(data.size());
}

LayerGradients dataset_gradient(const FeedForwardNet& net, const LabeledDataset& data) {
    require(!data.empty(), ErrorKind::Validation, "dataset_gradient: empty dataset");
    LayerGradients total = net.zeros_like();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto g = backward(net, forward(net, data.x(i)), data.y(i));
        for (std::size_t l = 0; l < g.size(); ++l) total[l] += g[l];
    }
    const double inv = 1.0 / static_cast<double>(data.size());
    for (auto& block : total.blocks) block *= inv;
    return total;
}

double accuracy(const FeedForwardNet& net, const LabeledDataset& data) {
    if (data.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        Eigen::Index arg = 0;
        forward(net, data.x(i)).logits.maxCoeff(&arg);
        if (arg == data.y(i)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

Vector flatten(const LayerGradients& g) {
    Eigen::Index p = 0;
    for (const auto& b : g.blocks) p += b.size();
    Vector out(p);
    Eigen::Index off = 0;
    for (const auto& b : g.blocks) {
        out.segment(off, b.size()) = linalg::vec(b);
        off += b.size();
    }
    return out;
}

LayerGradients unflatten(const FeedForwardNet& like, const Vector& v) {
    require(v.size() == like.param_count(), ErrorKind::Dimension, "unflatten: length mismatch");
    LayerGradients g;
    Eigen::Index off = 0;
    for (const auto& layer : like.layers()) {
        g.blocks.push_back(Eigen::Map<const Matrix>(v.data() + off, layer.weights.rows(), layer.weights.cols()));
        off += layer.param_count();
    }
    return g;
}

Vector hessian_vector_product(const FeedForwardNet& net, const LabeledDataset& data, const Vector& v) {
    require(v.size() == net.param_count(), ErrorKind::Dimension,
            "hessian_vector_product: vector length " + std::to_string(v.size()) + ", expected " +
                std::to_string(net.param_count()));
    const double h = 1e-4 / std::max(1.0, v.norm());
    const Vector theta = net.flatten();
    FeedForwardNet probe = net;
    probe.assign(theta + h * v);
    const Vector plus = flatten(dataset_gradient(probe, data));
    probe.assign(theta - h * v);
    const Vector minus = flatten(dataset_gradient(probe, data));
    return (plus - minus) / (2.0 * h);
}

} // namespace crispe
