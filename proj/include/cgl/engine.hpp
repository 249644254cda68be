#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "cgl/data.hpp"
#include "cgl/grid.hpp"
#include "cgl/nn.hpp"
#include "cgl/rng.hpp"

namespace cgl {

enum class AggregationMode { actual_count, expected_count };
enum class LossReduction { sum, mean };
enum class RunMode { serial, parallel };

struct DistillConfig {
    double temperature = 3.0;
    double p = 0.5; // imitation probability
    AggregationMode aggregation = AggregationMode::actual_count;
    bool include_self = false;
    bool detach_teacher = true;
    LossReduction loss_reduction = LossReduction::sum;
    bool t_squared = false; // optional T^2 rescale of the KL term

    void validate() const;
};

// phi(t) = 1 outside [j_start, j_end]; inside, exp(-5 (1-lambda)^2) with
// lambda rising linearly from 0 at j_start to 1 at j_end.
struct RampUpSchedule {
    int j_start = 0;
    int j_end = 0;
    int total_epochs = 0;

    static RampUpSchedule from_fraction(double fraction, int total_epochs);
    static RampUpSchedule disabled(int total_epochs) { return {0, 0, total_epochs}; }
    void validate() const;
};

double rampup_phi(int t, const RampUpSchedule& sched);

// Independent Bernoulli(p) over each candidate peer (all j != k, plus k
// itself when include_self). Candidates are visited in ascending index
// order, one uniform draw each. Returns sorted 0-based peer indices.
std::vector<int> select_subgroup(int k, int K, double p, bool include_self, Rng& rng);

// Mean of the selected logits (actual_count), or their sum divided by the
// expected sub-group size H = p * (number of candidates) (expected_count).
// Empty selection yields nullopt: the KL term is skipped that iteration.
std::optional<Tensor> aggregate_teacher(const std::vector<Tensor>& peer_logits, AggregationMode mode,
                                        double p, int K, bool include_self);

// KL(softmax(z_t, T) || softmax(z_k, T)), summed over the batch.
double student_kl_loss(const Tensor& z_t, const Tensor& z_k, double temperature);

struct LossBreakdown {
    std::vector<double> ce; // per student, post loss_reduction
    std::vector<double> kl; // per student, unweighted by phi
    double phi = 1.0;
    double total = 0.0; // sum_k (ce_k + phi * kl_k)
};

struct StepCounter {
    std::vector<long long> forward_per_student;
    std::vector<long long> backward_per_student;

    void reset(int K);
    long long total_forward() const;
    long long total_backward() const;
    StepCounter& operator+=(const StepCounter& delta);
};

struct TrainOptions {
    int epochs = 50;
    int batch_size = 64;
    AdamConfig adam;
    DistillConfig distill;
    RampUpSchedule schedule;
    RunMode mode = RunMode::serial;
    bool full_data = false; // disable sub-set data learning
    bool repartition_each_epoch = false;
    std::vector<int> lr_milestones; // epochs at which lr is multiplied by lr_decay
    double lr_decay = 0.5;
    int checkpoint_every = 0; // 0 = only final
    bool wall_clock = false;  // when false the wall_seconds column is 0
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochMetrics {
    int epoch = 0;
    double phi = 1.0;
    std::vector<double> ce;          // per student, summed over the epoch
    std::vector<double> kl;          // per student, summed over the epoch
    std::vector<double> holdout_acc; // per student
    long long forward_steps = 0;     // this epoch, all students
    long long backward_steps = 0;
    double wall_seconds = 0.0;
};

// Everything mutable a run carries; checkpoints capture this struct.
struct TrainerState {
    ModuleGrid grid;
    StudentPool pool;
    Partition partition;
    AdamState adam;
    Rng subgroup_rng{0};
    int epochs_done = 0;
    StepCounter counters; // cumulative over the run
};

TrainerState make_trainer(ModuleGrid grid, StudentPool pool, Partition partition, const TrainOptions& opts);

// A fully pinned iteration: which samples and which peers each student
// sees. Everything downstream is a deterministic function of this plan
// plus the grid parameters.
struct IterationPlan {
    std::vector<std::vector<int>> batch;    // per student; empty = student idle
    std::vector<std::vector<int>> subgroup; // per student, 0-based peer ids
    double phi = 1.0;
};

// Deterministic per-student batch stream: the subset is reshuffled per
// (seed, student, epoch). Public so that reference implementations can
// replay the exact same streams.
std::vector<std::vector<int>> student_batch_stream(std::uint64_t seed, int student_k,
                                                   const std::vector<int>& subset_indices, int batch_size,
                                                   int epoch);

// Forward-only evaluation of a planned iteration (no parameter update).
LossBreakdown iteration_losses(const ModuleGrid& grid, const StudentPool& pool, const Dataset& train,
                               const IterationPlan& plan, const DistillConfig& distill);

// Loss plus summed gradients in grid_params order.
std::pair<LossBreakdown, std::vector<Tensor>> iteration_gradients(const ModuleGrid& grid,
                                                                  const StudentPool& pool,
                                                                  const Dataset& train,
                                                                  const IterationPlan& plan,
                                                                  const DistillConfig& distill,
                                                                  RunMode mode, StepCounter* delta = nullptr);

// One training iteration: plan, forward/backward every student (serial or
// parallel per opts.mode), sum gradients in fixed student order, one Adam
// step. Throws InvariantError with epoch/iteration context on NaN loss.
LossBreakdown train_iteration(TrainerState& state, const Dataset& train,
                              const std::vector<std::vector<std::vector<int>>>& per_student_batches,
                              int epoch, int iter, const TrainOptions& opts);

using EpochCallback = std::function<void(const TrainerState&, const EpochMetrics&)>;

// Runs epochs [state.epochs_done, opts.epochs). Emits one metrics row per
// epoch; the callback fires after each epoch (checkpoint hooks).
std::vector<EpochMetrics> train(TrainerState& state, const Dataset& train, const Dataset& holdout,
                                const TrainOptions& opts, const EpochCallback& on_epoch = {});

// Appendix cost model: (N/K)*(1+K*p) expected (forward, backward) steps
// per student per epoch, N counted in batches over the full set.
std::pair<double, double> expected_cost(double n_batches, int K, double p);
// Exact expectation under the implemented selection (peers exclude self
// unless include_self): (N/K)*(1 + candidates*p).
double expected_cost_exact(double n_batches, int K, double p, bool include_self);

// Top-1 accuracy; argmax ties resolve to the lowest class index.
double evaluate_accuracy(const ModuleGrid& grid, const PathMatrix& path, const Dataset& data,
                         RunMode mode = RunMode::serial);
// Class-probability rows (softmax T=1) for a routed student.
Tensor student_probabilities(const ModuleGrid& grid, const PathMatrix& path, const Dataset& data,
                             RunMode mode = RunMode::serial);

// Argmax with ties to the lowest index.
int best_index(const std::vector<double>& scores);

// Best student by holdout top-1 accuracy; returns (1-based index, accuracy).
std::pair<int, double> select_best_student(const ModuleGrid& grid, const StudentPool& pool,
                                           const Dataset& holdout, RunMode mode = RunMode::serial);

void write_metrics_csv(const std::vector<EpochMetrics>& rows, int K, std::ostream& out);

} // namespace cgl
