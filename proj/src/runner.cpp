#include "cgl/runner.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cgl/checkpoint.hpp"
#include "cgl/error.hpp"

namespace fs = std::filesystem;

namespace cgl {

namespace {

void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw DataError(std::string(what) + " file not found: " + path);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open output file: " + path);
    return f;
}

} // namespace

LoadedData build_datasets(const RunConfig& cfg) {
    const DatasetSpec& d = cfg.dataset;
    Dataset full, test;
    if (d.kind == "blobs") {
        full = synth_blobs(d.train_per_class, d.classes, d.dim, d.spread, d.seed);
        if (d.test_per_class > 0)
            test = synth_blobs(d.test_per_class, d.classes, d.dim, d.spread, mix_seed(d.seed, "test"));
    } else if (d.kind == "csv") {
        require_file(d.train_path, "dataset");
        full = load_csv(d.train_path, d.label_column);
        if (!d.test_path.empty()) {
            require_file(d.test_path, "dataset");
            test = load_csv(d.test_path, d.label_column);
        }
    } else if (d.kind == "idx") {
        require_file(d.train_images, "dataset");
        require_file(d.train_labels, "dataset");
        full = load_idx(d.train_images, d.train_labels);
        if (!d.test_images.empty()) {
            require_file(d.test_images, "dataset");
            require_file(d.test_labels, "dataset");
            test = load_idx(d.test_images, d.test_labels);
        }
    } else {
        throw ConfigError("dataset.kind '" + d.kind + "' is not supported");
    }

    if (test.n() > 0) {
        if (test.dim() != full.dim())
            throw DataError("test set has " + std::to_string(test.dim()) + " features but train has " +
                            std::to_string(full.dim()));
        if (test.num_classes > full.num_classes)
            throw DataError("test set uses labels beyond the training class count");
        test.num_classes = full.num_classes;
    }

    LoadedData out;
    auto [train, holdout] = holdout_split(full, cfg.holdout_fraction, cfg.seed);
    out.train = std::move(train);
    out.holdout = std::move(holdout);
    out.test = std::move(test);
    return out;
}

ExperimentSetup build_setup(const RunConfig& cfg, const LoadedData& data) {
    ExperimentSetup s;
    s.train = &data.train;
    s.holdout = &data.holdout;
    s.test = data.test.n() > 0 ? &data.test : nullptr;
    s.L = cfg.grid.layers;
    s.M = cfg.grid.modules_per_layer;
    s.hidden_width = cfg.grid.hidden_width;
    s.K = cfg.pool.students;
    s.distinct_paths = cfg.pool.distinct_paths;
    for (int l : cfg.pool.forced_shared_layers) s.constraint.forced_layers.insert(l);
    s.partition_mode = cfg.partition.mode;
    s.overlap = cfg.partition.overlap;
    s.opts = cfg.opts;
    s.opts.repartition_each_epoch = cfg.partition.repartition_each_epoch;
    return s;
}

std::string output_root(const RunConfig& cfg) {
    if (const char* env = std::getenv("CGL_OUT_ROOT"); env && *env) return env;
    return cfg.output_dir;
}

TrainArtifacts cmd_train(const RunConfig& cfg, const std::string& resume_from) {
    const LoadedData data = build_datasets(cfg);
    const ExperimentSetup setup = build_setup(cfg, data);
    const std::uint64_t cfg_hash = cfg.hash();

    TrainArtifacts art;
    art.run_dir = (fs::path(output_root(cfg)) / cfg.run_id()).string();
    fs::create_directories(art.run_dir);

    {
        std::ofstream f = open_out((fs::path(art.run_dir) / "resolved_config.json").string());
        f << cfg.resolved.dump(2) << "\n";
    }

    TrainerState state;
    if (!resume_from.empty()) {
        require_file(resume_from, "checkpoint");
        state = checkpoint_load(resume_from, cfg_hash);
        if (state.grid.L != setup.L || state.grid.M != setup.M)
            throw ConfigError("checkpoint grid " + std::to_string(state.grid.L) + "x" +
                              std::to_string(state.grid.M) + " does not match config grid.layers/modules_per_layer");
    } else {
        Rng init_rng(mix_seed(cfg.seed, "init"));
        ModuleGrid grid = ModuleGrid::random_init(setup.L, setup.M, data.train.dim(), setup.hidden_width,
                                                  data.train.num_classes, init_rng);
        Rng path_rng(mix_seed(cfg.seed, "paths"));
        StudentPool pool =
            build_pool(path_rng, setup.L, setup.M, setup.K, setup.constraint, setup.distinct_paths, cfg.seed);
        Partition part =
            make_partition(data.train, setup.K, mix_seed(cfg.seed, "data"), setup.partition_mode, setup.overlap);
        state = make_trainer(std::move(grid), std::move(pool), std::move(part), setup.opts);
    }

    {
        std::ofstream f = open_out((fs::path(art.run_dir) / "structure.txt").string());
        f << serialize_structure(state.pool, state.grid.L, state.grid.M);
    }

    const TrainOptions& opts = setup.opts;
    EpochCallback on_epoch;
    if (opts.checkpoint_every > 0) {
        on_epoch = [&](const TrainerState& st, const EpochMetrics& em) {
            if ((em.epoch + 1) % opts.checkpoint_every == 0 && em.epoch + 1 < opts.epochs) {
                const auto p = fs::path(art.run_dir) / ("checkpoint_epoch_" + std::to_string(em.epoch + 1) + ".ckpt");
                checkpoint_save(p.string(), st, cfg_hash);
            }
        };
    }

    const std::vector<EpochMetrics> metrics = train(state, data.train, data.holdout, opts, on_epoch);

    art.metrics_path = (fs::path(art.run_dir) / "metrics.csv").string();
    {
        std::ofstream f = open_out(art.metrics_path);
        write_metrics_csv(metrics, state.pool.K, f);
    }
    art.checkpoint_path = (fs::path(art.run_dir) / "checkpoint_final.ckpt").string();
    checkpoint_save(art.checkpoint_path, state, cfg_hash);

    const auto [best, best_acc] = select_best_student(state.grid, state.pool, data.holdout, opts.mode);
    art.best_student = best;
    art.best_holdout_acc = best_acc;

    std::printf("run %s: %d epochs, K=%d students\n", cfg.run_id().c_str(), state.epochs_done, state.pool.K);
    for (int k = 0; k < state.pool.K; ++k) {
        const double acc =
            evaluate_accuracy(state.grid, state.pool.paths[static_cast<std::size_t>(k)], data.holdout, opts.mode);
        std::printf("  student %d: holdout accuracy %.4f\n", k + 1, acc);
    }
    std::printf("best student: %d (holdout accuracy %.4f)\n", best, best_acc);
    if (data.test.n() > 0) {
        art.best_test_acc = evaluate_accuracy(state.grid, state.pool.paths[static_cast<std::size_t>(best - 1)],
                                              data.test, opts.mode);
        std::printf("best student test accuracy: %.4f\n", art.best_test_acc);
    }
    std::printf("artifacts: %s\n", art.run_dir.c_str());
    return art;
}

namespace {

const Dataset& pick_split(const LoadedData& data, const std::string& split) {
    if (split == "train") return data.train;
    if (split == "holdout") return data.holdout;
    if (split == "test") {
        if (data.test.n() == 0) throw ConfigError("no test set configured for this dataset");
        return data.test;
    }
    throw ConfigError("split must be train, holdout, or test; got '" + split + "'");
}

int resolve_student(const std::string& sel, const TrainerState& state, const Dataset& holdout,
                    std::uint64_t seed, RunMode mode) {
    if (sel == "best") return select_best_student(state.grid, state.pool, holdout, mode).first;
    if (sel == "random") {
        Rng rng(mix_seed(seed, "eval-student"));
        return static_cast<int>(rng.uniform_int(1, state.pool.K));
    }
    int idx = 0;
    try {
        std::size_t pos = 0;
        idx = std::stoi(sel, &pos);
        if (pos != sel.size()) throw std::invalid_argument(sel);
    } catch (const std::exception&) {
        throw ConfigError("--student must be 'best', 'random', or an index; got '" + sel + "'");
    }
    if (idx < 1 || idx > state.pool.K)
        throw ConfigError("--student " + std::to_string(idx) + " outside [1.." + std::to_string(state.pool.K) +
                          "]");
    return idx;
}

} // namespace

EvalResult cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path, const std::string& student_sel,
                    const std::string& split, const std::string& out_csv) {
    require_file(checkpoint_path, "checkpoint");
    const LoadedData data = build_datasets(cfg);
    TrainerState state = checkpoint_load(checkpoint_path, cfg.hash());

    EvalResult res;
    res.split = split;
    res.student = resolve_student(student_sel, state, data.holdout, cfg.seed, cfg.opts.mode);
    const Dataset& eval_set = pick_split(data, split);
    res.accuracy = evaluate_accuracy(state.grid, state.pool.paths[static_cast<std::size_t>(res.student - 1)],
                                     eval_set, cfg.opts.mode);

    std::string out = out_csv;
    if (out.empty()) out = (fs::path(checkpoint_path).parent_path() / "eval.csv").string();
    std::ofstream f = open_out(out);
    f << "student,split,accuracy\n" << res.student << "," << split << "," << fmt(res.accuracy) << "\n";
    std::printf("student %d %s accuracy: %.4f (written to %s)\n", res.student, split.c_str(), res.accuracy,
                out.c_str());
    return res;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const std::vector<std::string>& off_variants,
                                    int num_seeds, const std::string& out_csv) {
    if (num_seeds < 1) throw ConfigError("ablate: --seeds must be >= 1");
    std::vector<std::string> variants = off_variants;
    if (variants.empty()) variants = {"none", "rr", "sdl", "sgi"};
    for (const auto& v : variants)
        if (v != "none" && v != "rr" && v != "sdl" && v != "sgi")
            throw ConfigError("ablate: --off must be one of rr, sdl, sgi; got '" + v + "'");

    const LoadedData data = build_datasets(cfg);
    const ExperimentSetup base = build_setup(cfg, data);

    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        for (int s = 0; s < num_seeds; ++s) {
            const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(s);
            ExperimentSetup setup = base;
            TrainedRun run;
            if (v == "sdl") {
                setup.opts.full_data = true;
                run = run_experiment(setup, seed);
            } else if (v == "sgi") {
                setup.opts.distill.p = 1.0;
                run = run_experiment(setup, seed);
            } else if (v == "rr") {
                // K unshared copies of a single-path architecture: one grid
                // column per student, student k pinned to column k+1.
                setup.M = setup.K;
                setup.constraint.forced_layers.clear();
                StudentPool pool;
                pool.K = setup.K;
                pool.seed = seed;
                for (int k = 0; k < setup.K; ++k) {
                    std::vector<int> idx(static_cast<std::size_t>(setup.L), k + 1);
                    pool.paths.push_back(PathMatrix::from_indices(setup.M, idx));
                    pool.subset_of_student.push_back(k + 1);
                }
                run = run_experiment_with_pool(setup, std::move(pool), seed);
            } else {
                run = run_experiment(setup, seed);
            }
            AblationRow row;
            row.variant = v;
            row.seed = seed;
            row.best_student = run.best_student;
            row.best_holdout_acc = run.best_holdout_acc;
            row.best_test_acc = run.best_test_acc;
            rows.push_back(row);
        }
    }

    std::ofstream f = open_out(out_csv);
    f << "variant,seed,best_student,best_holdout_acc,best_test_acc\n";
    for (const auto& r : rows)
        f << r.variant << "," << r.seed << "," << r.best_student << "," << fmt(r.best_holdout_acc) << ","
          << fmt(r.best_test_acc) << "\n";
    std::printf("ablation results written to %s\n", out_csv.c_str());
    return rows;
}

std::string analyze_diversity(const RunConfig& cfg, const std::string& checkpoint_path,
                              const std::string& split, const std::string& out_csv) {
    require_file(checkpoint_path, "checkpoint");
    const LoadedData data = build_datasets(cfg);
    TrainerState state = checkpoint_load(checkpoint_path, cfg.hash());
    const DiversityReport rep = diversity(state.grid, state.pool, pick_split(data, split), cfg.opts.mode);

    std::ofstream f = open_out(out_csv);
    f << "student_a,student_b,mean_l2\n";
    for (int a = 0; a < state.pool.K; ++a)
        for (int b = a + 1; b < state.pool.K; ++b)
            f << (a + 1) << "," << (b + 1) << ","
              << fmt(rep.pairwise[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]) << "\n";
    f << "average,," << fmt(rep.average) << "\n";

    std::ostringstream os;
    os << "diversity over " << rep.eval_set << ": " << fmt(rep.average);
    return os.str();
}

std::string analyze_perturb(const RunConfig& cfg, const std::string& checkpoint_path,
                            const std::string& student_sel, const std::vector<double>& sigmas, int trials,
                            const std::string& split, const std::string& out_csv) {
    require_file(checkpoint_path, "checkpoint");
    const LoadedData data = build_datasets(cfg);
    TrainerState state = checkpoint_load(checkpoint_path, cfg.hash());
    const int student = resolve_student(student_sel, state, data.holdout, cfg.seed, cfg.opts.mode);
    const PerturbationCurve curve =
        perturb_and_eval(state.grid, state.pool.paths[static_cast<std::size_t>(student - 1)],
                         pick_split(data, split), sigmas, trials, cfg.seed, cfg.opts.mode);

    std::ofstream f = open_out(out_csv);
    f << "sigma,mean_accuracy,mean_drop,trials\n";
    for (std::size_t i = 0; i < curve.sigmas.size(); ++i)
        f << fmt(curve.sigmas[i]) << "," << fmt(curve.mean_accuracy[i]) << "," << fmt(curve.mean_drop[i]) << ","
          << curve.trials << "\n";

    std::ostringstream os;
    os << "student " << student << " base accuracy " << fmt(curve.base_accuracy) << ", " << curve.sigmas.size()
       << " sigma levels";
    return os.str();
}

std::string analyze_sweep_p(const RunConfig& cfg, const std::vector<double>& p_values, int num_seeds,
                            const std::string& out_csv) {
    if (num_seeds < 1) throw ConfigError("sweep-p: --seeds must be >= 1");
    const LoadedData data = build_datasets(cfg);
    const ExperimentSetup setup = build_setup(cfg, data);
    std::vector<std::uint64_t> seeds;
    for (int s = 0; s < num_seeds; ++s) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(s));

    const ImitationSweep sweep = sweep_imitation(setup, p_values, seeds);

    std::ofstream f = open_out(out_csv);
    f << "p,mean_accuracy,std_accuracy,mean_diversity,std_diversity\n";
    for (const auto& r : sweep.rows)
        f << fmt(r.p) << "," << fmt(r.mean_accuracy) << "," << fmt(r.std_accuracy) << "," << fmt(r.mean_diversity)
          << "," << fmt(r.std_diversity) << "\n";

    std::ostringstream os;
    os << "sweep over " << sweep.rows.size() << " p values: spearman(p, diversity)=" << fmt(sweep.spearman_p_vs_diversity)
       << ", spearman(p, accuracy)=" << fmt(sweep.spearman_p_vs_accuracy);
    return os.str();
}

std::string analyze_sweep_sharing(const RunConfig& cfg, const std::vector<int>& m_values,
                                  const std::vector<int>& forced_counts, int num_seeds,
                                  const std::string& out_csv) {
    if (num_seeds < 1) throw ConfigError("sweep-sharing: --seeds must be >= 1");
    const LoadedData data = build_datasets(cfg);
    const ExperimentSetup setup = build_setup(cfg, data);
    std::vector<std::uint64_t> seeds;
    for (int s = 0; s < num_seeds; ++s) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(s));

    std::vector<SharingSweepVariant> variants;
    for (int m : m_values) {
        if (m < 1) throw ConfigError("sweep-sharing: module counts must be >= 1");
        variants.push_back({"M=" + std::to_string(m), m, 0});
    }
    for (int fc : forced_counts) {
        if (fc < 0 || fc > setup.L)
            throw ConfigError("sweep-sharing: forced layer count outside [0.." + std::to_string(setup.L) + "]");
        variants.push_back({"forced=" + std::to_string(fc), setup.M, fc});
    }
    if (variants.empty()) throw ConfigError("sweep-sharing: provide --m-values and/or --forced-counts");

    const auto rows = sweep_sharing(setup, variants, seeds);

    std::ofstream f = open_out(out_csv);
    f << "variant,modules_per_layer,forced_layers,mean_sharing_ratio,mean_accuracy,std_accuracy\n";
    for (const auto& r : rows)
        f << r.label << "," << r.M << "," << r.forced_layers << "," << fmt(r.mean_sharing) << ","
          << fmt(r.mean_accuracy) << "," << fmt(r.std_accuracy) << "\n";

    std::ostringstream os;
    os << rows.size() << " sharing variants written to " << out_csv;
    return os.str();
}

std::string analyze_transfer(const RunConfig& cfg_a, const RunConfig& cfg_b, int num_structures, int num_seeds,
                             const std::string& out_csv) {
    if (num_structures < 2) throw ConfigError("transfer: --structures must be >= 2");
    if (num_seeds < 1) throw ConfigError("transfer: --seeds must be >= 1");
    const LoadedData data_a = build_datasets(cfg_a);
    const LoadedData data_b = build_datasets(cfg_b);
    const ExperimentSetup setup_a = build_setup(cfg_a, data_a);
    const ExperimentSetup setup_b = build_setup(cfg_b, data_b);

    std::vector<StudentPool> structures;
    for (int i = 0; i < num_structures; ++i) {
        Rng rng(mix_seed(mix_seed(cfg_a.seed, "transfer-structures"), static_cast<std::uint64_t>(i)));
        structures.push_back(build_pool(rng, setup_a.L, setup_a.M, setup_a.K, setup_a.constraint,
                                        setup_a.distinct_paths, cfg_a.seed + static_cast<std::uint64_t>(i)));
    }
    std::vector<std::uint64_t> seeds;
    for (int s = 0; s < num_seeds; ++s) seeds.push_back(cfg_a.seed + static_cast<std::uint64_t>(s));

    const StructureTransferReport rep = structure_transfer(structures, setup_a, setup_b, seeds);

    std::ofstream f = open_out(out_csv);
    f << "structure,score_a,rank_a,score_b,rank_b\n";
    for (std::size_t i = 0; i < structures.size(); ++i)
        f << rep.ranking_a[i].structure << "," << fmt(rep.ranking_a[i].score) << "," << rep.ranking_a[i].rank
          << "," << fmt(rep.ranking_b[i].score) << "," << rep.ranking_b[i].rank << "\n";
    f << "top3_overlap,," << rep.top3_overlap << ",,\n";
    f << "spearman,," << fmt(rep.spearman) << ",,\n";

    std::ostringstream os;
    os << "top-3 overlap " << rep.top3_overlap << "/3, spearman " << fmt(rep.spearman);
    return os.str();
}

std::string analyze_cost(double n_batches, int K, double p) {
    const auto [fwd, bwd] = expected_cost(n_batches, K, p);
    const double exact = expected_cost_exact(n_batches, K, p, false);
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%g", fwd);
    os << buf << "\n";
    std::snprintf(buf, sizeof buf, "expected (forward, backward) steps per student per epoch: (%g, %g)\n", fwd,
                  bwd);
    os << buf;
    std::snprintf(buf, sizeof buf, "exact expectation excluding self: %g\n", exact);
    os << buf;
    return os.str();
}

void cmd_gen_data(const GenDataParams& params, const std::string& out_path) {
    if (params.kind != "blobs") throw ConfigError("gen-data: unsupported kind '" + params.kind + "'");
    const Dataset data = synth_blobs(params.per_class, params.classes, params.dim, params.spread, params.seed);
    write_csv(data, out_path);

    json meta{{"kind", params.kind},       {"classes", params.classes}, {"per_class", params.per_class},
              {"dim", params.dim},         {"spread", params.spread},   {"seed", params.seed},
              {"blob_radius", kBlobRadius}};
    std::ofstream f = open_out(out_path + ".meta.json");
    f << meta.dump(2) << "\n";
    std::printf("wrote %d rows to %s (+ .meta.json)\n", data.n(), out_path.c_str());
}

GenDataParams gen_params_from_meta(const std::string& meta_path) {
    require_file(meta_path, "metadata");
    std::ifstream f(meta_path);
    json meta;
    try {
        f >> meta;
    } catch (const json::exception& e) {
        throw ParseError("metadata '" + meta_path + "': " + e.what());
    }
    GenDataParams p;
    try {
        p.kind = meta.at("kind").get<std::string>();
        p.classes = meta.at("classes").get<int>();
        p.per_class = meta.at("per_class").get<int>();
        p.dim = meta.at("dim").get<int>();
        p.spread = meta.at("spread").get<double>();
        p.seed = meta.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw ParseError("metadata '" + meta_path + "': missing field (" + e.what() + ")");
    }
    return p;
}

} // namespace cgl
