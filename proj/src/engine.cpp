#include "cgl/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cgl/error.hpp"
#include "cgl/tape.hpp"

namespace cgl {

void DistillConfig::validate() const {
    if (!(temperature > 0.0)) throw ConfigError("distill: temperature must be > 0");
    if (p < 0.0 || p > 1.0) throw ConfigError("distill: imitation probability must be in [0,1]");
}

RampUpSchedule RampUpSchedule::from_fraction(double fraction, int total_epochs) {
    if (fraction < 0.0 || fraction > 1.0) throw ConfigError("schedule: ramp-up fraction must be in [0,1]");
    RampUpSchedule s;
    s.total_epochs = total_epochs;
    s.j_start = 0;
    s.j_end = static_cast<int>(std::llround(fraction * total_epochs));
    return s;
}

void RampUpSchedule::validate() const {
    if (j_start < 0 || j_start > j_end || j_end > total_epochs)
        throw ConfigError("schedule: need 0 <= j_start <= j_end <= total_epochs, got [" +
                          std::to_string(j_start) + "," + std::to_string(j_end) + "] of " +
                          std::to_string(total_epochs));
}

double rampup_phi(int t, const RampUpSchedule& sched) {
    sched.validate();
    if (t < sched.j_start || t > sched.j_end) return 1.0;
    const double lambda =
        sched.j_start == sched.j_end
            ? 1.0
            : static_cast<double>(t - sched.j_start) / static_cast<double>(sched.j_end - sched.j_start);
    const double d = 1.0 - lambda;
    return std::exp(-5.0 * d * d);
}

std::vector<int> select_subgroup(int k, int K, double p, bool include_self, Rng& rng) {
    if (p < 0.0 || p > 1.0) throw ConfigError("select_subgroup: p must be in [0,1]");
    if (k < 0 || k >= K) throw UsageError("select_subgroup: student index out of range");
    std::vector<int> out;
    for (int j = 0; j < K; ++j) {
        if (j == k && !include_self) continue;
        if (rng.uniform01() < p) out.push_back(j);
    }
    return out;
}

std::optional<Tensor> aggregate_teacher(const std::vector<Tensor>& peer_logits, AggregationMode mode,
                                        double p, int K, bool include_self) {
    if (peer_logits.empty()) return std::nullopt;
    Tensor sum = peer_logits.front();
    for (std::size_t i = 1; i < peer_logits.size(); ++i) {
        if (!peer_logits[i].same_shape(sum))
            throw InvariantError("aggregate_teacher: logit shape mismatch at peer " + std::to_string(i));
        sum += peer_logits[i];
    }
    const double h = mode == AggregationMode::actual_count
                         ? static_cast<double>(peer_logits.size())
                         : p * static_cast<double>(include_self ? K : K - 1);
    if (!(h > 0.0)) throw UsageError("aggregate_teacher: expected sub-group size is not positive");
    for (double& v : sum.data) v /= h;
    return sum;
}

double student_kl_loss(const Tensor& z_t, const Tensor& z_k, double temperature) {
    return kl_divergence(softmax(z_t, temperature), softmax(z_k, temperature));
}

void StepCounter::reset(int K) {
    forward_per_student.assign(static_cast<std::size_t>(K), 0);
    backward_per_student.assign(static_cast<std::size_t>(K), 0);
}

long long StepCounter::total_forward() const {
    return std::accumulate(forward_per_student.begin(), forward_per_student.end(), 0LL);
}

long long StepCounter::total_backward() const {
    return std::accumulate(backward_per_student.begin(), backward_per_student.end(), 0LL);
}

StepCounter& StepCounter::operator+=(const StepCounter& delta) {
    if (forward_per_student.size() != delta.forward_per_student.size())
        throw UsageError("StepCounter: size mismatch");
    for (std::size_t i = 0; i < forward_per_student.size(); ++i) {
        forward_per_student[i] += delta.forward_per_student[i];
        backward_per_student[i] += delta.backward_per_student[i];
    }
    return *this;
}

void TrainOptions::validate() const {
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(adam.lr > 0.0)) throw ConfigError("train: lr must be > 0");
    if (!(lr_decay > 0.0)) throw ConfigError("train: lr_decay must be > 0");
    if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
    distill.validate();
    schedule.validate();
}

TrainerState make_trainer(ModuleGrid grid, StudentPool pool, Partition partition, const TrainOptions& opts) {
    TrainerState st;
    st.grid = std::move(grid);
    st.pool = std::move(pool);
    st.partition = std::move(partition);
    auto params = grid_params(st.grid);
    st.adam = AdamState::init(params, opts.adam);
    st.subgroup_rng = Rng(mix_seed(opts.seed, "subgroup"));
    st.counters.reset(st.pool.K);
    return st;
}

std::vector<std::vector<int>> student_batch_stream(std::uint64_t seed, int student_k,
                                                   const std::vector<int>& subset_indices, int batch_size,
                                                   int epoch) {
    const std::uint64_t stream =
        mix_seed(mix_seed(seed, "student-batches"), static_cast<std::uint64_t>(student_k));
    return batches(subset_indices, batch_size, stream, epoch);
}

namespace {

void gather_batch(const Dataset& data, const std::vector<int>& rows, Tensor& x, std::vector<int>& labels) {
    const int d = data.dim();
    x = Tensor::zeros({static_cast<int>(rows.size()), d});
    labels.clear();
    labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int r = rows[i];
        for (int j = 0; j < d; ++j) x.at(static_cast<int>(i), j) = data.features.at(r, j);
        labels.push_back(data.labels[static_cast<std::size_t>(r)]);
    }
}

struct StudentRun {
    bool ran = false;
    double ce = 0.0;
    double kl = 0.0;
    long long fwd = 0;
    long long bwd = 0;
    Tape tape;
    std::string error;
};

StudentRun run_student_backward(const ModuleGrid& grid, const StudentPool& pool, const Dataset& train,
                                const IterationPlan& plan, const DistillConfig& d, int k) {
    StudentRun r;
    const auto& rows = plan.batch[static_cast<std::size_t>(k)];
    if (rows.empty()) return r;
    r.ran = true;

    Tensor x;
    std::vector<int> labels;
    gather_batch(train, rows, x, labels);
    const double inv_b = 1.0 / static_cast<double>(rows.size());

    Tape& tape = r.tape;
    const NodeId xn = tape.constant(std::move(x));
    const NodeId zk = forward_student_tape(tape, grid, pool.paths[static_cast<std::size_t>(k)], xn);
    NodeId ce = tape.cross_entropy_sum(tape.softmax(zk, 1.0), labels);
    if (d.loss_reduction == LossReduction::mean) ce = tape.scale(ce, inv_b);
    r.ce = tape.value(ce).scalar_value();
    r.fwd = 1;
    r.bwd = 1;

    NodeId loss = ce;
    const auto& group = plan.subgroup[static_cast<std::size_t>(k)];
    if (!group.empty()) {
        NodeId zsum = -1;
        for (int j : group) {
            const NodeId zj = forward_student_tape(tape, grid, pool.paths[static_cast<std::size_t>(j)], xn);
            zsum = zsum < 0 ? zj : tape.add(zsum, zj);
        }
        const double h = d.aggregation == AggregationMode::actual_count
                             ? static_cast<double>(group.size())
                             : d.p * static_cast<double>(d.include_self ? pool.K : pool.K - 1);
        if (!(h > 0.0)) throw UsageError("train: expected sub-group size is not positive");
        NodeId zt = tape.scale(zsum, 1.0 / h);
        if (d.detach_teacher) zt = tape.detach(zt);
        NodeId kln = tape.kl_div_sum(tape.softmax(zt, d.temperature), tape.softmax(zk, d.temperature));
        if (d.t_squared) kln = tape.scale(kln, d.temperature * d.temperature);
        if (d.loss_reduction == LossReduction::mean) kln = tape.scale(kln, inv_b);
        r.kl = tape.value(kln).scalar_value();
        loss = tape.add(ce, tape.scale(kln, plan.phi));
        r.fwd += static_cast<long long>(group.size());
        if (!d.detach_teacher) r.bwd += static_cast<long long>(group.size());
    }

    tape.backward(loss);
    return r;
}

LossBreakdown breakdown_from_runs(const std::vector<StudentRun>& runs, double phi) {
    LossBreakdown lb;
    lb.phi = phi;
    lb.ce.reserve(runs.size());
    lb.kl.reserve(runs.size());
    for (const auto& r : runs) {
        lb.ce.push_back(r.ce);
        lb.kl.push_back(r.kl);
        lb.total += r.ce + phi * r.kl;
    }
    return lb;
}

} // namespace

LossBreakdown iteration_losses(const ModuleGrid& grid, const StudentPool& pool, const Dataset& train,
                               const IterationPlan& plan, const DistillConfig& d) {
    LossBreakdown lb;
    lb.phi = plan.phi;
    for (int k = 0; k < pool.K; ++k) {
        double ce = 0.0, kl = 0.0;
        const auto& rows = plan.batch[static_cast<std::size_t>(k)];
        if (!rows.empty()) {
            Tensor x;
            std::vector<int> labels;
            gather_batch(train, rows, x, labels);
            const double inv_b = 1.0 / static_cast<double>(rows.size());
            const Tensor zk = forward_student(grid, pool.paths[static_cast<std::size_t>(k)], x);
            ce = cross_entropy(softmax(zk, 1.0), labels);
            if (d.loss_reduction == LossReduction::mean) ce *= inv_b;
            const auto& group = plan.subgroup[static_cast<std::size_t>(k)];
            if (!group.empty()) {
                std::vector<Tensor> peer_logits;
                peer_logits.reserve(group.size());
                for (int j : group)
                    peer_logits.push_back(forward_student(grid, pool.paths[static_cast<std::size_t>(j)], x));
                const auto zt = aggregate_teacher(peer_logits, d.aggregation, d.p, pool.K, d.include_self);
                kl = student_kl_loss(*zt, zk, d.temperature);
                if (d.t_squared) kl *= d.temperature * d.temperature;
                if (d.loss_reduction == LossReduction::mean) kl *= inv_b;
            }
        }
        lb.ce.push_back(ce);
        lb.kl.push_back(kl);
        lb.total += ce + plan.phi * kl;
    }
    return lb;
}

std::pair<LossBreakdown, std::vector<Tensor>> iteration_gradients(const ModuleGrid& grid,
                                                                  const StudentPool& pool,
                                                                  const Dataset& train,
                                                                  const IterationPlan& plan,
                                                                  const DistillConfig& distill,
                                                                  RunMode mode, StepCounter* delta) {
    const int K = pool.K;
    std::vector<StudentRun> runs(static_cast<std::size_t>(K));
    const bool parallel = mode == RunMode::parallel;
#pragma omp parallel for schedule(dynamic, 1) if (parallel)
    for (int k = 0; k < K; ++k) {
        try {
            runs[static_cast<std::size_t>(k)] = run_student_backward(grid, pool, train, plan, distill, k);
        } catch (const std::exception& e) {
            runs[static_cast<std::size_t>(k)].error = e.what();
        }
    }
    for (int k = 0; k < K; ++k)
        if (!runs[static_cast<std::size_t>(k)].error.empty())
            throw InvariantError("student " + std::to_string(k + 1) + ": " + runs[static_cast<std::size_t>(k)].error);

    // Deterministic reduction: fixed student order, canonical parameter order.
    const auto keys = grid_params(grid);
    std::vector<Tensor> total;
    total.reserve(keys.size());
    for (const Tensor* p : keys) total.push_back(Tensor::zeros(p->shape));
    for (int k = 0; k < K; ++k) {
        const StudentRun& r = runs[static_cast<std::size_t>(k)];
        if (!r.ran) continue;
        for (std::size_t pi = 0; pi < keys.size(); ++pi)
            if (const Tensor* g = r.tape.param_grad(keys[pi])) total[pi] += *g;
    }

    if (delta) {
        delta->reset(K);
        for (int k = 0; k < K; ++k) {
            delta->forward_per_student[static_cast<std::size_t>(k)] = runs[static_cast<std::size_t>(k)].fwd;
            delta->backward_per_student[static_cast<std::size_t>(k)] = runs[static_cast<std::size_t>(k)].bwd;
        }
    }
    return {breakdown_from_runs(runs, plan.phi), std::move(total)};
}

LossBreakdown train_iteration(TrainerState& state, const Dataset& train,
                              const std::vector<std::vector<std::vector<int>>>& per_student_batches,
                              int epoch, int iter, const TrainOptions& opts) {
    const int K = state.pool.K;
    IterationPlan plan;
    plan.phi = rampup_phi(epoch, opts.schedule);
    plan.batch.resize(static_cast<std::size_t>(K));
    plan.subgroup.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        const auto& stream = per_student_batches[static_cast<std::size_t>(k)];
        if (static_cast<std::size_t>(iter) < stream.size())
            plan.batch[static_cast<std::size_t>(k)] = stream[static_cast<std::size_t>(iter)];
    }
    // Sub-group draws happen serially in student order so that parallel and
    // serial runs consume the selection stream identically.
    for (int k = 0; k < K; ++k)
        if (!plan.batch[static_cast<std::size_t>(k)].empty())
            plan.subgroup[static_cast<std::size_t>(k)] =
                select_subgroup(k, K, opts.distill.p, opts.distill.include_self, state.subgroup_rng);

    StepCounter delta;
    auto [losses, grads] = iteration_gradients(state.grid, state.pool, train, plan, opts.distill, opts.mode, &delta);
    if (!std::isfinite(losses.total))
        throw InvariantError("non-finite loss at epoch " + std::to_string(epoch) + ", iteration " +
                             std::to_string(iter));
    state.counters += delta;

    auto params = grid_params(state.grid);
    std::vector<const Tensor*> grad_ptrs;
    grad_ptrs.reserve(grads.size());
    for (const Tensor& g : grads) grad_ptrs.push_back(&g);
    const auto names = grid_param_names(state.grid);
    adam_step(params, grad_ptrs, state.adam, &names);
    return losses;
}

std::vector<EpochMetrics> train(TrainerState& state, const Dataset& train_set, const Dataset& holdout,
                                const TrainOptions& opts, const EpochCallback& on_epoch) {
    opts.validate();
    const int K = state.pool.K;
    const double base_lr = opts.adam.lr;
    std::vector<EpochMetrics> out;

    std::vector<int> all_indices(static_cast<std::size_t>(train_set.n()));
    std::iota(all_indices.begin(), all_indices.end(), 0);

    for (int epoch = state.epochs_done; epoch < opts.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();

        int milestones_passed = 0;
        for (int m : opts.lr_milestones)
            if (epoch >= m) ++milestones_passed;
        state.adam.config.lr = base_lr * std::pow(opts.lr_decay, milestones_passed);

        if (opts.repartition_each_epoch && !opts.full_data)
            state.partition = make_partition(train_set, state.partition.K,
                                             mix_seed(mix_seed(opts.seed, "repartition"),
                                                      static_cast<std::uint64_t>(epoch)),
                                             state.partition.mode, state.partition.overlap);

        std::vector<std::vector<std::vector<int>>> streams(static_cast<std::size_t>(K));
        std::size_t iters = 0;
        for (int k = 0; k < K; ++k) {
            const auto& idx =
                opts.full_data
                    ? all_indices
                    : state.partition.indices_for(state.pool.subset_of_student[static_cast<std::size_t>(k)]);
            streams[static_cast<std::size_t>(k)] =
                student_batch_stream(opts.seed, k, idx, opts.batch_size, epoch);
            iters = std::max(iters, streams[static_cast<std::size_t>(k)].size());
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.phi = rampup_phi(epoch, opts.schedule);
        em.ce.assign(static_cast<std::size_t>(K), 0.0);
        em.kl.assign(static_cast<std::size_t>(K), 0.0);
        const long long fwd0 = state.counters.total_forward();
        const long long bwd0 = state.counters.total_backward();

        for (std::size_t it = 0; it < iters; ++it) {
            const LossBreakdown lb = train_iteration(state, train_set, streams, epoch, static_cast<int>(it), opts);
            for (int k = 0; k < K; ++k) {
                em.ce[static_cast<std::size_t>(k)] += lb.ce[static_cast<std::size_t>(k)];
                em.kl[static_cast<std::size_t>(k)] += lb.kl[static_cast<std::size_t>(k)];
            }
        }

        em.forward_steps = state.counters.total_forward() - fwd0;
        em.backward_steps = state.counters.total_backward() - bwd0;
        em.holdout_acc.reserve(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k)
            em.holdout_acc.push_back(
                evaluate_accuracy(state.grid, state.pool.paths[static_cast<std::size_t>(k)], holdout, opts.mode));

        if (opts.wall_clock) {
            const auto t1 = std::chrono::steady_clock::now();
            em.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        }

        state.epochs_done = epoch + 1;
        out.push_back(em);
        if (on_epoch) on_epoch(state, em);
    }
    return out;
}

std::pair<double, double> expected_cost(double n_batches, int K, double p) {
    if (n_batches < 0.0 || K < 1 || p < 0.0) throw ConfigError("expected_cost: invalid arguments");
    const double c = n_batches / static_cast<double>(K) * (1.0 + static_cast<double>(K) * p);
    return {c, c};
}

double expected_cost_exact(double n_batches, int K, double p, bool include_self) {
    if (n_batches < 0.0 || K < 1 || p < 0.0) throw ConfigError("expected_cost_exact: invalid arguments");
    const int candidates = include_self ? K : K - 1;
    return n_batches / static_cast<double>(K) * (1.0 + static_cast<double>(candidates) * p);
}

namespace {

int argmax_row(const Tensor& t, int row) {
    int best = 0;
    for (int j = 1; j < t.cols(); ++j)
        if (t.at(row, j) > t.at(row, best)) best = j;
    return best;
}

} // namespace

double evaluate_accuracy(const ModuleGrid& grid, const PathMatrix& path, const Dataset& data, RunMode mode) {
    const int n = data.n();
    if (n == 0) throw UsageError("evaluate_accuracy: empty dataset");
    const int chunk = 512;
    const int nchunks = (n + chunk - 1) / chunk;
    std::vector<long long> hits(static_cast<std::size_t>(nchunks), 0);
    const bool parallel = mode == RunMode::parallel;
#pragma omp parallel for schedule(static) if (parallel)
    for (int c = 0; c < nchunks; ++c) {
        const int lo = c * chunk;
        const int hi = std::min(n, lo + chunk);
        std::vector<int> rows(static_cast<std::size_t>(hi - lo));
        std::iota(rows.begin(), rows.end(), lo);
        Tensor x;
        std::vector<int> labels;
        gather_batch(data, rows, x, labels);
        const Tensor z = forward_student(grid, path, x);
        long long h = 0;
        for (int i = 0; i < z.rows(); ++i)
            if (argmax_row(z, i) + 1 == labels[static_cast<std::size_t>(i)]) ++h;
        hits[static_cast<std::size_t>(c)] = h;
    }
    const long long total = std::accumulate(hits.begin(), hits.end(), 0LL);
    return static_cast<double>(total) / static_cast<double>(n);
}

Tensor student_probabilities(const ModuleGrid& grid, const PathMatrix& path, const Dataset& data,
                             RunMode mode) {
    const int n = data.n();
    Tensor out = Tensor::zeros({n, grid.num_classes});
    const int chunk = 512;
    const int nchunks = (n + chunk - 1) / chunk;
    const bool parallel = mode == RunMode::parallel;
#pragma omp parallel for schedule(static) if (parallel)
    for (int c = 0; c < nchunks; ++c) {
        const int lo = c * chunk;
        const int hi = std::min(n, lo + chunk);
        std::vector<int> rows(static_cast<std::size_t>(hi - lo));
        std::iota(rows.begin(), rows.end(), lo);
        Tensor x;
        std::vector<int> labels;
        gather_batch(data, rows, x, labels);
        const Tensor probs = softmax(forward_student(grid, path, x), 1.0);
        for (int i = 0; i < probs.rows(); ++i)
            for (int j = 0; j < probs.cols(); ++j) out.at(lo + i, j) = probs.at(i, j);
    }
    return out;
}

int best_index(const std::vector<double>& scores) {
    if (scores.empty()) throw UsageError("best_index: empty scores");
    int best = 0;
    for (int i = 1; i < static_cast<int>(scores.size()); ++i)
        if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(best)]) best = i;
    return best;
}

std::pair<int, double> select_best_student(const ModuleGrid& grid, const StudentPool& pool,
                                           const Dataset& holdout, RunMode mode) {
    if (holdout.n() == 0) throw UsageError("select_best_student: empty holdout set");
    std::vector<double> acc;
    acc.reserve(static_cast<std::size_t>(pool.K));
    for (int k = 0; k < pool.K; ++k)
        acc.push_back(evaluate_accuracy(grid, pool.paths[static_cast<std::size_t>(k)], holdout, mode));
    const int b = best_index(acc);
    return {b + 1, acc[static_cast<std::size_t>(b)]};
}

void write_metrics_csv(const std::vector<EpochMetrics>& rows, int K, std::ostream& out) {
    out << "epoch,phi";
    for (int k = 1; k <= K; ++k) out << ",ce_" << k;
    for (int k = 1; k <= K; ++k) out << ",kl_" << k;
    for (int k = 1; k <= K; ++k) out << ",holdout_acc_" << k;
    out << ",forward_steps,backward_steps,wall_seconds\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << "," << buf;
    };
    for (const auto& r : rows) {
        out << r.epoch;
        put(r.phi);
        for (double v : r.ce) put(v);
        for (double v : r.kl) put(v);
        for (double v : r.holdout_acc) put(v);
        out << "," << r.forward_steps << "," << r.backward_steps;
        put(r.wall_seconds);
        out << "\n";
    }
}

} // namespace cgl
