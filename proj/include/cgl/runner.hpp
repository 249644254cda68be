#pragma once

#include <string>
#include <vector>

#include "cgl/analysis.hpp"
#include "cgl/config.hpp"

namespace cgl {

// Datasets materialized from a config's dataset spec.
struct LoadedData {
    Dataset train;   // after holdout split
    Dataset holdout;
    Dataset test;    // may be empty (n() == 0)
};

LoadedData build_datasets(const RunConfig& cfg);

// ExperimentSetup wired to `data`; pointers stay valid while `data` lives.
ExperimentSetup build_setup(const RunConfig& cfg, const LoadedData& data);

// Output root: $CGL_OUT_ROOT when set, else cfg.output_dir.
std::string output_root(const RunConfig& cfg);

struct TrainArtifacts {
    std::string run_dir;
    std::string metrics_path;
    std::string checkpoint_path;
    int best_student = 0;
    double best_holdout_acc = 0.0;
    double best_test_acc = -1.0; // -1 when no test set
};

// train: writes resolved_config.json, structure.txt, metrics.csv, and
// checkpoints under <root>/<run_id>/. resume_from, when non-empty, loads
// the checkpoint (config hash must match) and continues.
TrainArtifacts cmd_train(const RunConfig& cfg, const std::string& resume_from = "");

struct EvalResult {
    int student = 0;
    double accuracy = 0.0;
    std::string split;
};

// student_sel: "best", "random", or a 1-based index.
EvalResult cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path, const std::string& student_sel,
                    const std::string& split, const std::string& out_csv);

struct AblationRow {
    std::string variant; // none | rr | sdl | sgi
    std::uint64_t seed = 0;
    int best_student = 0;
    double best_holdout_acc = 0.0;
    double best_test_acc = 0.0;
};

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const std::vector<std::string>& off_variants,
                                    int num_seeds, const std::string& out_csv);

// analyze subcommands; each writes a CSV and returns a printable summary.
std::string analyze_diversity(const RunConfig& cfg, const std::string& checkpoint_path,
                              const std::string& split, const std::string& out_csv);
std::string analyze_perturb(const RunConfig& cfg, const std::string& checkpoint_path,
                            const std::string& student_sel, const std::vector<double>& sigmas, int trials,
                            const std::string& split, const std::string& out_csv);
std::string analyze_sweep_p(const RunConfig& cfg, const std::vector<double>& p_values, int num_seeds,
                            const std::string& out_csv);
std::string analyze_sweep_sharing(const RunConfig& cfg, const std::vector<int>& m_values,
                                  const std::vector<int>& forced_counts, int num_seeds,
                                  const std::string& out_csv);
std::string analyze_transfer(const RunConfig& cfg_a, const RunConfig& cfg_b, int num_structures,
                             int num_seeds, const std::string& out_csv);
std::string analyze_cost(double n_batches, int K, double p);

struct GenDataParams {
    std::string kind = "blobs";
    int classes = 8;
    int per_class = 500;
    int dim = 16;
    double spread = 1.0;
    std::uint64_t seed = 7;
};

// Writes <out> (CSV) plus <out>.meta.json recording the generator inputs.
void cmd_gen_data(const GenDataParams& params, const std::string& out_path);
GenDataParams gen_params_from_meta(const std::string& meta_path);

} // namespace cgl
