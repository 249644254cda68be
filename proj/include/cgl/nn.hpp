#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cgl/rng.hpp"
#include "cgl/tensor.hpp"

namespace cgl {

enum class Activation { relu, identity };

// One learnable sub-network: affine map plus activation. These are the
// grid's building blocks; richer block types can slot in behind the same
// fan_in/fan_out contract.
struct DenseBlock {
    Tensor weight; // [fan_in x fan_out]
    Tensor bias;   // [fan_out] stored as [1 x fan_out]
    Activation act = Activation::relu;

    int fan_in() const { return weight.rows(); }
    int fan_out() const { return weight.cols(); }

    // Kaiming-style uniform init, bound sqrt(6/fan_in); biases zero.
    static DenseBlock random_init(int fan_in, int fan_out, Activation act, Rng& rng);
};

// y = act(x W + b), row-wise over the batch.
Tensor dense_forward(const Tensor& x, const DenseBlock& block);

// Row-wise temperature softmax with max-subtraction. Computed as the
// stable softmax of logits/T so that softmax(z, T) == softmax(z/T, 1)
// holds bit-exactly.
Tensor softmax(const Tensor& logits, double temperature);

// Sum over the batch of -log p(true class). Labels are 1-based in [1..C].
double cross_entropy(const Tensor& probs, const std::vector<int>& labels);

// Sum over samples and classes of p_t * log(p_t / p_k). Zero-probability
// teacher entries contribute 0; student probabilities are clamped to
// >= kProbFloor (warned once per process).
double kl_divergence(const Tensor& teacher_probs, const Tensor& student_probs);

inline constexpr double kProbFloor = 1e-12;

// Plain C = A * B for [m x k] * [k x n]; the kernel the tape reuses.
void matmul_into(const Tensor& a, const Tensor& b, Tensor& out);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    long long step_count = 0;
    AdamConfig config;

    static AdamState init(const std::vector<Tensor*>& params, AdamConfig cfg);
};

// Standard bias-corrected Adam over a parameter list. Pure function of
// (params, grads, state); the caller serializes parameter mutation.
// NaN gradients abort with a diagnostic naming the offending parameter.
void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, const std::vector<std::string>* param_names = nullptr);

// Central-difference check: returns max over parameter entries of
// |g_analytic - g_fd| / max(1e-8, |g_analytic| + |g_fd|).
// scalar_fn re-evaluates the loss at the current (perturbed) parameter
// values; analytic_grads are the gradients at the unperturbed point.
double finite_difference_check(const std::function<double()>& scalar_fn,
                               const std::vector<Tensor*>& params,
                               const std::vector<Tensor>& analytic_grads, double eps);

} // namespace cgl
