#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgl/engine.hpp"

namespace cgl {

struct DiversityReport {
    std::vector<std::vector<double>> pairwise; // K x K, symmetric, zero diagonal
    double average = 0.0;                      // mean over unordered pairs
    std::string eval_set;
};

// Mean over samples of the L2 distance between the class-probability
// vectors (T = 1) of each unordered student pair.
DiversityReport diversity(const ModuleGrid& grid, const StudentPool& pool, const Dataset& eval_set,
                          RunMode mode = RunMode::serial);

struct PerturbationCurve {
    std::vector<double> sigmas;
    std::vector<double> mean_accuracy; // per sigma, mean over trials
    std::vector<double> mean_drop;     // base accuracy minus mean accuracy
    double base_accuracy = 0.0;
    int trials = 0;
    std::uint64_t seed = 0;
};

// Adds i.i.d. Gaussian(0, sigma^2) noise to every parameter of a copy of
// the grid, evaluates the routed student, and reports the mean accuracy
// drop per sigma. The input grid is never mutated.
PerturbationCurve perturb_and_eval(const ModuleGrid& grid, const PathMatrix& student, const Dataset& test_set,
                                   const std::vector<double>& sigmas, int trials, std::uint64_t seed,
                                   RunMode mode = RunMode::serial);

// One self-contained training run: builds grid, pool, and partition from
// the given dimensions and trains on the supplied data. Sweeps and the
// acceptance experiments both go through this.
struct ExperimentSetup {
    const Dataset* train = nullptr;
    const Dataset* holdout = nullptr;
    const Dataset* test = nullptr; // optional
    int L = 4;
    int M = 2;
    int hidden_width = 64;
    int K = 4;
    bool distinct_paths = true;
    SharingConstraint constraint;
    PartitionMode partition_mode = PartitionMode::uniform;
    double overlap = 0.0;
    TrainOptions opts;
};

struct TrainedRun {
    TrainerState state;
    std::vector<EpochMetrics> metrics;
    int best_student = 0; // 1-based
    double best_holdout_acc = 0.0;
    double best_test_acc = 0.0; // 0 when no test set given
};

TrainedRun run_experiment(const ExperimentSetup& setup, std::uint64_t seed);
// Same, but with pre-built paths (structure transfer reuses structures).
TrainedRun run_experiment_with_pool(const ExperimentSetup& setup, StudentPool pool, std::uint64_t seed);

struct ImitationSweepRow {
    double p = 0.0;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    double mean_diversity = 0.0;
    double std_diversity = 0.0;
};

struct ImitationSweep {
    std::vector<ImitationSweepRow> rows;
    double spearman_p_vs_diversity = 0.0;
    double spearman_p_vs_accuracy = 0.0;
};

// Fresh training runs per (p, seed); accuracy is the best student's test
// accuracy (holdout when no test set), diversity is computed post-training
// on the holdout set.
ImitationSweep sweep_imitation(const ExperimentSetup& setup, const std::vector<double>& p_values,
                               const std::vector<std::uint64_t>& seeds);

struct SharingSweepVariant {
    std::string label;
    int M = 2;
    int forced_layers = 0; // layers 1..forced pinned to module 1
};

struct SharingSweepRow {
    std::string label;
    int M = 0;
    int forced_layers = 0;
    double mean_sharing = 0.0; // realized mean pairwise ratio, averaged over seeds
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
};

std::vector<SharingSweepRow> sweep_sharing(const ExperimentSetup& setup,
                                           const std::vector<SharingSweepVariant>& variants,
                                           const std::vector<std::uint64_t>& seeds);

struct StructureScore {
    int structure = 0; // 1-based descriptor index
    double score = 0.0;
    int rank = 0; // 1 = best; ties break to the lower structure index
};

struct StructureTransferReport {
    std::vector<StructureScore> ranking_a;
    std::vector<StructureScore> ranking_b;
    int top3_overlap = 0;
    double spearman = 0.0;
};

// Trains every structure on both tasks (mean best-holdout accuracy over
// seeds), ranks per task, and reports top-3 overlap plus rank correlation.
StructureTransferReport structure_transfer(const std::vector<StudentPool>& structures,
                                           const ExperimentSetup& setup_a, const ExperimentSetup& setup_b,
                                           const std::vector<std::uint64_t>& seeds);

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

double mean_of(const std::vector<double>& v);
double stddev_of(const std::vector<double>& v); // population form

} // namespace cgl
