#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "crispe/dataset.hpp"
#include "crispe/linalg.hpp"

namespace crispe {

enum class Activation { Relu, Gelu, Tanh, Identity };

const char* to_string(Activation a) noexcept;
Activation parse_activation(const std::string& name);

/// Dense layer s = W a_aug. The last column of W is the bias, fed by a
/// constant 1 appended to the layer input.
struct DenseLayer {
    Matrix weights;
    Activation activation = Activation::Identity;

    Eigen::Index out_features() const { return weights.rows(); }
    Eigen::Index in_features() const { return weights.cols() - 1; }
    Eigen::Index param_count() const { return weights.size(); }
};

/// One matrix per network layer, shaped like that layer's weights.
struct LayerGradients {
    std::vector<Matrix> blocks;

    std::size_t size() const { return blocks.size(); }
    Matrix& operator[](std::size_t l) { return blocks[l]; }
    const Matrix& operator[](std::size_t l) const { return blocks[l]; }
};

class FeedForwardNet {
public:
    FeedForwardNet() = default;
    explicit FeedForwardNet(std::vector<DenseLayer> layers);

    /// Random init: widths = {d_in, h_1, ..., m}; hidden layers use `hidden`,
    /// the output layer is identity. Weights ~ N(0, scale^2 / fan_in).
    static FeedForwardNet random(const std::vector<int>& widths, Activation hidden, std::uint64_t seed,
                                 double scale = 1.0);

    std::size_t layer_count() const { return layers_.size(); }
    const DenseLayer& layer(std::size_t l) const { return layers_[l]; }
    DenseLayer& layer(std::size_t l) { return layers_[l]; }
    const std::vector<DenseLayer>& layers() const { return layers_; }

    Eigen::Index input_width() const { return layers_.front().in_features(); }
    Eigen::Index class_count() const { return layers_.back().out_features(); }
    Eigen::Index param_count() const;

    /// Canonical flattening: layers in forward order, each column-major.
    Vector flatten() const;
    void assign(const Vector& theta);
    /// Offset of layer l inside the flattened vector.
    Eigen::Index offset(std::size_t l) const;

    LayerGradients zeros_like() const;
    bool same_shape(const FeedForwardNet& other) const;

private:
    std::vector<DenseLayer> layers_;
};

/// Per-example forward record. inputs[l] is the augmented input of layer l
/// (so inputs[0] = [x; 1]); preacts[l] = W_l inputs[l].
struct ForwardTrace {
    std::vector<Vector> inputs;
    std::vector<Vector> preacts;
    Vector logits;
    Vector probs;
};

/// Sampled-label pseudo-gradients g_l = d log p(y_hat | x) / d s_l.
struct PseudoGradient {
    int label = 0;
    std::vector<Vector> preact_grads;
};

ForwardTrace forward(const FeedForwardNet& net, const Vector& x);

double cross_entropy(const Vector& logits, int label);
double log_sum_exp(const Vector& z);
Vector softmax(const Vector& z);

/// Backpropagate an arbitrary logit-space gradient to every preactivation.
std::vector<Vector> backprop_preacts(const FeedForwardNet& net, const ForwardTrace& trace, const Vector& dlogits);

/// d CE(logits, y) / d W_l for every layer.
LayerGradients backward(const FeedForwardNet& net, const ForwardTrace& trace, int label);

/// Draws y_hat ~ softmax(logits) (or uses `fixed_label` when >= 0) and returns
/// the pseudo-gradients of log p(y_hat | x).
PseudoGradient sample_pseudo_gradient(const FeedForwardNet& net, const ForwardTrace& trace, Rng& rng,
                                      int fixed_label = -1);

/// Draw a class index from a probability vector by inverse CDF.
int sample_categorical(const Vector& probs, Rng& rng);

inline constexpr Eigen::Index kJacobianParamLimit = 20000;

/// m x p Jacobian of the logits with respect to the canonical parameter vector.
Matrix per_example_jacobian(const FeedForwardNet& net, const Vector& x);

double dataset_loss(const FeedForwardNet& net, const LabeledDataset& data);
/// Mean cross-entropy gradient, summed in example order.
LayerGradients dataset_gradient(const FeedForwardNet& net, const LabeledDataset& data);
double accuracy(const FeedForwardNet& net, const LabeledDataset& data);

Vector flatten(const LayerGradients& g);
LayerGradients unflatten(const FeedForwardNet& like, const Vector& v);

/// H_cap v by central differences of the full-dataset gradient,
/// h = 1e-4 / max(1, ||v||).
Vector hessian_vector_product(const FeedForwardNet& net, const LabeledDataset& data, const Vector& v);

} // namespace crispe
