#include "cgl/nn.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>

#include "cgl/error.hpp"

namespace cgl {

DenseBlock DenseBlock::random_init(int fan_in, int fan_out, Activation act, Rng& rng) {
    if (fan_in < 1 || fan_out < 1) throw ConfigError("DenseBlock: fan_in and fan_out must be >= 1");
    DenseBlock b;
    b.weight = Tensor::zeros({fan_in, fan_out});
    b.bias = Tensor::zeros({1, fan_out});
    b.act = act;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& w : b.weight.data) w = (2.0 * rng.uniform01() - 1.0) * bound;
    return b;
}

void matmul_into(const Tensor& a, const Tensor& b, Tensor& out) {
    const int m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw InvariantError("matmul: inner dimensions differ, " + shape_string(a.shape) + " * " + shape_string(b.shape));
    out.shape = {m, n};
    out.data.assign(static_cast<std::size_t>(m) * n, 0.0);
    const double* A = a.data.data();
    const double* B = b.data.data();
    double* C = out.data.data();
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<std::size_t>(i) * k;
        double* crow = C + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = B + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

Tensor dense_forward(const Tensor& x, const DenseBlock& block) {
    if (x.cols() != block.fan_in())
        throw ConfigError("dense_forward: input has " + std::to_string(x.cols()) +
                          " features but block expects " + std::to_string(block.fan_in()));
    Tensor y;
    matmul_into(x, block.weight, y);
    const int n = y.cols();
    for (int i = 0; i < y.rows(); ++i)
        for (int j = 0; j < n; ++j) y.at(i, j) += block.bias.data[static_cast<std::size_t>(j)];
    if (block.act == Activation::relu)
        for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor softmax(const Tensor& logits, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("softmax: temperature must be > 0");
    const int b = logits.rows(), c = logits.cols();
    Tensor out = Tensor::zeros({b, c});
    for (int i = 0; i < b; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j) {
            const double v = logits.at(i, j) / temperature;
            out.at(i, j) = v;
            if (v > mx) mx = v;
        }
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(out.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < c; ++j) out.at(i, j) /= sum;
    }
    return out;
}

double cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    const int b = probs.rows(), c = probs.cols();
    if (static_cast<int>(labels.size()) != b)
        throw UsageError("cross_entropy: batch has " + std::to_string(b) + " rows but " +
                         std::to_string(labels.size()) + " labels");
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 1 || y > c)
            throw DataError("cross_entropy: label " + std::to_string(y) + " at row " +
                            std::to_string(i) + " outside [1.." + std::to_string(c) + "]");
        loss -= std::log(std::max(probs.at(i, y - 1), kProbFloor));
    }
    return loss;
}

namespace {
std::atomic<bool> kl_clamp_warned{false};
}

double kl_divergence(const Tensor& teacher_probs, const Tensor& student_probs) {
    if (!teacher_probs.same_shape(student_probs))
        throw InvariantError("kl_divergence: shape mismatch " + shape_string(teacher_probs.shape) +
                             " vs " + shape_string(student_probs.shape));
    double kl = 0.0;
    bool clamped = false;
    for (std::size_t i = 0; i < teacher_probs.data.size(); ++i) {
        const double pt = teacher_probs.data[i];
        if (pt <= 0.0) continue;
        double pk = student_probs.data[i];
        if (pk < kProbFloor) {
            pk = kProbFloor;
            clamped = true;
        }
        kl += pt * (std::log(pt) - std::log(pk));
    }
    if (clamped && !kl_clamp_warned.exchange(true))
        std::fprintf(stderr, "warning: kl_divergence clamped student probabilities to %.0e\n", kProbFloor);
    return kl;
}

AdamState AdamState::init(const std::vector<Tensor*>& params, AdamConfig cfg) {
    if (!(cfg.lr > 0.0)) throw ConfigError("adam: lr must be > 0");
    AdamState st;
    st.config = cfg;
    st.first_moment.reserve(params.size());
    st.second_moment.reserve(params.size());
    for (const Tensor* p : params) {
        st.first_moment.push_back(Tensor::zeros(p->shape));
        st.second_moment.push_back(Tensor::zeros(p->shape));
    }
    return st;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, const std::vector<std::string>* param_names) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw UsageError("adam_step: params/grads/state length mismatch");
    state.step_count += 1;
    const AdamConfig& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_count));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        const Tensor& g = *grads[pi];
        Tensor& m = state.first_moment[pi];
        Tensor& v = state.second_moment[pi];
        if (!p.same_shape(g) || !p.same_shape(m))
            throw InvariantError("adam_step: shape mismatch at parameter " + std::to_string(pi));
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double gi = g.data[i];
            if (std::isnan(gi)) {
                const std::string name =
                    param_names && pi < param_names->size() ? (*param_names)[pi] : ("#" + std::to_string(pi));
                throw InvariantError("adam_step: NaN gradient in parameter " + name + " at element " +
                                     std::to_string(i));
            }
            m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
            v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= c.lr * mhat / (std::sqrt(vhat) + c.epsilon);
        }
    }
}

double finite_difference_check(const std::function<double()>& scalar_fn,
                               const std::vector<Tensor*>& params,
                               const std::vector<Tensor>& analytic_grads, double eps) {
    if (!(eps > 0.0) || eps > 1e-2) throw UsageError("finite_difference_check: eps must be in (0, 1e-2]");
    if (params.size() != analytic_grads.size())
        throw UsageError("finite_difference_check: params/grads length mismatch");
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        const Tensor& ga = analytic_grads[pi];
        if (!p.same_shape(ga)) throw UsageError("finite_difference_check: grad shape mismatch");
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double orig = p.data[i];
            p.data[i] = orig + eps;
            const double fplus = scalar_fn();
            p.data[i] = orig - eps;
            const double fminus = scalar_fn();
            p.data[i] = orig;
            const double gfd = (fplus - fminus) / (2.0 * eps);
            const double gan = ga.data[i];
            const double rel = std::fabs(gan - gfd) / std::max(1e-8, std::fabs(gan) + std::fabs(gfd));
            if (rel > worst) worst = rel;
        }
    }
    return worst;
}

} // namespace cgl
