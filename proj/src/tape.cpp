#include "cgl/tape.hpp"

#include <cmath>

#include "cgl/error.hpp"

namespace cgl {

int Tape::check(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) throw UsageError("tape: invalid node id");
    return id;
}

NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Tape::constant(Tensor value) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Tape::param(const Tensor* key) {
    if (auto it = params_.find(key); it != params_.end()) return it->second;
    Node n;
    n.op = Op::param;
    n.value = *key; // snapshot; parameters do not mutate inside an iteration
    n.needs_grad = true;
    NodeId id = push(std::move(n));
    params_.emplace(key, id);
    return id;
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    Node n;
    n.op = Op::matmul;
    n.a = a;
    n.b = b;
    matmul_into(A, B, n.value);
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return push(std::move(n));
}

NodeId Tape::add_rowvec(NodeId a, NodeId rowvec) {
    const Tensor& A = value(a);
    const Tensor& r = value(rowvec);
    if (r.rows() != 1 || r.cols() != A.cols())
        throw InvariantError("add_rowvec: expected [1 x " + std::to_string(A.cols()) + "], got " +
                             shape_string(r.shape));
    Node n;
    n.op = Op::add_rowvec;
    n.a = a;
    n.b = rowvec;
    n.value = A;
    const int c = A.cols();
    for (int i = 0; i < A.rows(); ++i)
        for (int j = 0; j < c; ++j) n.value.at(i, j) += r.data[static_cast<std::size_t>(j)];
    n.needs_grad = nodes_[a].needs_grad || nodes_[rowvec].needs_grad;
    return push(std::move(n));
}

NodeId Tape::relu(NodeId a) {
    Node n;
    n.op = Op::relu;
    n.a = a;
    n.value = value(a);
    for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

NodeId Tape::softmax(NodeId logits, double temperature) {
    Node n;
    n.op = Op::softmax;
    n.a = logits;
    n.scalar_arg = temperature;
    n.value = cgl::softmax(value(logits), temperature);
    n.needs_grad = nodes_[logits].needs_grad;
    return push(std::move(n));
}

NodeId Tape::cross_entropy_sum(NodeId probs, std::vector<int> labels) {
    Node n;
    n.op = Op::cross_entropy;
    n.a = probs;
    n.value = Tensor::scalar(cgl::cross_entropy(value(probs), labels));
    n.labels = std::move(labels);
    n.needs_grad = nodes_[probs].needs_grad;
    return push(std::move(n));
}

NodeId Tape::kl_div_sum(NodeId teacher_probs, NodeId student_probs) {
    Node n;
    n.op = Op::kl_div;
    n.a = teacher_probs;
    n.b = student_probs;
    n.value = Tensor::scalar(cgl::kl_divergence(value(teacher_probs), value(student_probs)));
    n.needs_grad = nodes_[teacher_probs].needs_grad || nodes_[student_probs].needs_grad;
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    if (!value(a).same_shape(value(b)))
        throw InvariantError("tape add: shape mismatch " + shape_string(value(a).shape) + " vs " +
                             shape_string(value(b).shape));
    Node n;
    n.op = Op::add;
    n.a = a;
    n.b = b;
    n.value = value(a);
    n.value += value(b);
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double c) {
    Node n;
    n.op = Op::scale;
    n.a = a;
    n.scalar_arg = c;
    n.value = value(a);
    for (double& v : n.value.data) v *= c;
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

NodeId Tape::detach(NodeId a) {
    Node n;
    n.op = Op::detach;
    n.a = a;
    n.value = value(a);
    n.needs_grad = false;
    return push(std::move(n));
}

void Tape::accumulate(NodeId id, const Tensor& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (!n.grad_live) {
        n.grad = Tensor::zeros(n.value.shape);
        n.grad_live = true;
    }
    n.grad += g;
}

void Tape::add_grad_at(NodeId id, std::size_t flat_index, double v) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (!n.grad_live) {
        n.grad = Tensor::zeros(n.value.shape);
        n.grad_live = true;
    }
    n.grad.data[flat_index] += v;
}

void Tape::backward(NodeId loss) {
    check(loss);
    if (value(loss).size() != 1) throw UsageError("tape backward: loss node is not scalar");
    if (backward_done_) throw UsageError("tape backward: already called on this tape");
    backward_done_ = true;

    Node& ln = nodes_[static_cast<std::size_t>(loss)];
    if (!ln.needs_grad) return; // loss does not depend on any parameter
    ln.grad = Tensor::zeros(ln.value.shape);
    ln.grad.data[0] = 1.0;
    ln.grad_live = true;

    for (NodeId id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.grad_live || !n.needs_grad) continue;
        const Tensor& g = n.grad;
        switch (n.op) {
        case Op::constant:
        case Op::param:
        case Op::detach:
            break;
        case Op::matmul: {
            const Tensor& A = nodes_[n.a].value;
            const Tensor& B = nodes_[n.b].value;
            const int m = A.rows(), k = A.cols(), c = B.cols();
            if (nodes_[n.a].needs_grad) {
                // dA = G * B^T
                Tensor da = Tensor::zeros(A.shape);
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        double s = 0.0;
                        for (int j = 0; j < c; ++j) s += g.at(i, j) * B.at(kk, j);
                        da.at(i, kk) = s;
                    }
                accumulate(n.a, da);
            }
            if (nodes_[n.b].needs_grad) {
                // dB = A^T * G
                Tensor db = Tensor::zeros(B.shape);
                for (int kk = 0; kk < k; ++kk)
                    for (int i = 0; i < m; ++i) {
                        const double av = A.at(i, kk);
                        if (av == 0.0) continue;
                        for (int j = 0; j < c; ++j) db.at(kk, j) += av * g.at(i, j);
                    }
                accumulate(n.b, db);
            }
            break;
        }
        case Op::add_rowvec: {
            if (nodes_[n.a].needs_grad) accumulate(n.a, g);
            if (nodes_[n.b].needs_grad) {
                Tensor db = Tensor::zeros(nodes_[n.b].value.shape);
                const int c = g.cols();
                for (int i = 0; i < g.rows(); ++i)
                    for (int j = 0; j < c; ++j) db.data[static_cast<std::size_t>(j)] += g.at(i, j);
                accumulate(n.b, db);
            }
            break;
        }
        case Op::relu: {
            const Tensor& x = nodes_[n.a].value;
            Tensor dx = g;
            for (std::size_t i = 0; i < dx.data.size(); ++i)
                if (x.data[i] <= 0.0) dx.data[i] = 0.0;
            accumulate(n.a, dx);
            break;
        }
        case Op::softmax: {
            // dx_j = y_j * (g_j - sum_c g_c y_c) / T, per row
            const Tensor& y = n.value;
            const double T = n.scalar_arg;
            Tensor dx = Tensor::zeros(y.shape);
            const int c = y.cols();
            for (int i = 0; i < y.rows(); ++i) {
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += g.at(i, j) * y.at(i, j);
                for (int j = 0; j < c; ++j) dx.at(i, j) = y.at(i, j) * (g.at(i, j) - dot) / T;
            }
            accumulate(n.a, dx);
            break;
        }
        case Op::cross_entropy: {
            const double g0 = g.data[0];
            const Tensor& p = nodes_[n.a].value;
            const int c = p.cols();
            for (int i = 0; i < p.rows(); ++i) {
                const int y = n.labels[static_cast<std::size_t>(i)] - 1;
                const double pv = p.at(i, y);
                if (pv < kProbFloor) continue; // clamped region: flat
                add_grad_at(n.a, static_cast<std::size_t>(i) * c + y, -g0 / pv);
            }
            break;
        }
        case Op::kl_div: {
            const double g0 = g.data[0];
            const Tensor& pt = nodes_[n.a].value;
            const Tensor& pk = nodes_[n.b].value;
            const bool need_t = nodes_[n.a].needs_grad;
            const bool need_k = nodes_[n.b].needs_grad;
            for (std::size_t i = 0; i < pt.data.size(); ++i) {
                const double t = pt.data[i];
                if (t <= 0.0) continue;
                const double kclamped = std::max(pk.data[i], kProbFloor);
                if (need_k && pk.data[i] >= kProbFloor) add_grad_at(n.b, i, -g0 * t / kclamped);
                if (need_t) add_grad_at(n.a, i, g0 * (std::log(t) - std::log(kclamped) + 1.0));
            }
            break;
        }
        case Op::add:
            if (nodes_[n.a].needs_grad) accumulate(n.a, g);
            if (nodes_[n.b].needs_grad) accumulate(n.b, g);
            break;
        case Op::scale: {
            if (nodes_[n.a].needs_grad) {
                Tensor dx = g;
                for (double& v : dx.data) v *= n.scalar_arg;
                accumulate(n.a, dx);
            }
            break;
        }
        }
    }
}

const Tensor& Tape::grad(NodeId id) const {
    if (!backward_done_) throw UsageError("tape grad: backward() has not run");
    const Node& n = nodes_[static_cast<std::size_t>(check(id))];
    if (!n.grad_live) throw UsageError("tape grad: node received no gradient");
    return n.grad;
}

const Tensor* Tape::param_grad(const Tensor* key) const {
    if (!backward_done_) throw UsageError("tape param_grad: backward() has not run");
    auto it = params_.find(key);
    if (it == params_.end()) return nullptr;
    const Node& n = nodes_[static_cast<std::size_t>(it->second)];
    return n.grad_live ? &n.grad : nullptr;
}

} // namespace cgl
