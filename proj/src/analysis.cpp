#include "cgl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cgl/error.hpp"

namespace cgl {

double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw UsageError("mean_of: empty input");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw UsageError("spearman: need two equal-length series");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double mx = mean_of(rx), my = mean_of(ry);
    double num = 0.0, dx = 0.0, dy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx == 0.0 || dy == 0.0) return 0.0; // a constant series carries no ordering
    return num / std::sqrt(dx * dy);
}

DiversityReport diversity(const ModuleGrid& grid, const StudentPool& pool, const Dataset& eval_set,
                          RunMode mode) {
    if (pool.K < 2) throw UsageError("diversity: undefined for K < 2");
    if (eval_set.n() == 0) throw UsageError("diversity: empty evaluation set");
    const int K = pool.K;
    std::vector<Tensor> probs;
    probs.reserve(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
        probs.push_back(student_probabilities(grid, pool.paths[static_cast<std::size_t>(k)], eval_set, mode));

    DiversityReport rep;
    rep.eval_set = eval_set.name;
    rep.pairwise.assign(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(K), 0.0));

    struct Pair {
        int a, b;
    };
    std::vector<Pair> pairs;
    for (int a = 0; a < K; ++a)
        for (int b = a + 1; b < K; ++b) pairs.push_back({a, b});

    const int n = eval_set.n();
    const int c = grid.num_classes;
    std::vector<double> dist(pairs.size(), 0.0);
    const bool parallel = mode == RunMode::parallel;
#pragma omp parallel for schedule(static) if (parallel)
    for (int pi = 0; pi < static_cast<int>(pairs.size()); ++pi) {
        const Tensor& pa = probs[static_cast<std::size_t>(pairs[static_cast<std::size_t>(pi)].a)];
        const Tensor& pb = probs[static_cast<std::size_t>(pairs[static_cast<std::size_t>(pi)].b)];
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            double sq = 0.0;
            for (int j = 0; j < c; ++j) {
                const double diff = pa.at(i, j) - pb.at(i, j);
                sq += diff * diff;
            }
            sum += std::sqrt(sq);
        }
        dist[static_cast<std::size_t>(pi)] = sum / static_cast<double>(n);
    }

    double total = 0.0;
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
        rep.pairwise[static_cast<std::size_t>(pairs[pi].a)][static_cast<std::size_t>(pairs[pi].b)] = dist[pi];
        rep.pairwise[static_cast<std::size_t>(pairs[pi].b)][static_cast<std::size_t>(pairs[pi].a)] = dist[pi];
        total += dist[pi];
    }
    rep.average = total / static_cast<double>(pairs.size());
    return rep;
}

PerturbationCurve perturb_and_eval(const ModuleGrid& grid, const PathMatrix& student, const Dataset& test_set,
                                   const std::vector<double>& sigmas, int trials, std::uint64_t seed,
                                   RunMode mode) {
    if (trials < 1) throw ConfigError("perturb_and_eval: trials must be >= 1");
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        if (sigmas[i] < 0.0) throw ConfigError("perturb_and_eval: sigma must be >= 0");
        if (i > 0 && sigmas[i] < sigmas[i - 1]) throw ConfigError("perturb_and_eval: sigmas must be ascending");
    }

    PerturbationCurve curve;
    curve.sigmas = sigmas;
    curve.trials = trials;
    curve.seed = seed;
    curve.base_accuracy = evaluate_accuracy(grid, student, test_set, mode);

    for (std::size_t si = 0; si < sigmas.size(); ++si) {
        const double sigma = sigmas[si];
        if (sigma == 0.0) {
            curve.mean_accuracy.push_back(curve.base_accuracy);
            curve.mean_drop.push_back(0.0);
            continue;
        }
        double acc_sum = 0.0;
        for (int t = 0; t < trials; ++t) {
            ModuleGrid noisy = grid; // work on a copy; the input stays intact
            Rng rng(mix_seed(mix_seed(mix_seed(seed, "perturb"), static_cast<std::uint64_t>(si)),
                             static_cast<std::uint64_t>(t)));
            for (Tensor* p : grid_params(noisy))
                for (double& v : p->data) v += sigma * rng.gaussian();
            acc_sum += evaluate_accuracy(noisy, student, test_set, mode);
        }
        const double mean_acc = acc_sum / static_cast<double>(trials);
        curve.mean_accuracy.push_back(mean_acc);
        curve.mean_drop.push_back(curve.base_accuracy - mean_acc);
    }
    return curve;
}

TrainedRun run_experiment_with_pool(const ExperimentSetup& setup, StudentPool pool, std::uint64_t seed) {
    if (!setup.train || !setup.holdout) throw UsageError("run_experiment: train and holdout sets are required");
    TrainOptions opts = setup.opts;
    opts.seed = seed;

    Rng init_rng(mix_seed(seed, "init"));
    ModuleGrid grid = ModuleGrid::random_init(setup.L, setup.M, setup.train->dim(), setup.hidden_width,
                                              setup.train->num_classes, init_rng);
    Partition part = make_partition(*setup.train, pool.K, mix_seed(seed, "data"), setup.partition_mode,
                                    setup.overlap);

    TrainedRun run;
    run.state = make_trainer(std::move(grid), std::move(pool), std::move(part), opts);
    run.metrics = train(run.state, *setup.train, *setup.holdout, opts);
    const auto [best, acc] = select_best_student(run.state.grid, run.state.pool, *setup.holdout, opts.mode);
    run.best_student = best;
    run.best_holdout_acc = acc;
    if (setup.test && setup.test->n() > 0)
        run.best_test_acc = evaluate_accuracy(run.state.grid,
                                              run.state.pool.paths[static_cast<std::size_t>(best - 1)],
                                              *setup.test, opts.mode);
    return run;
}

TrainedRun run_experiment(const ExperimentSetup& setup, std::uint64_t seed) {
    Rng path_rng(mix_seed(seed, "paths"));
    StudentPool pool =
        build_pool(path_rng, setup.L, setup.M, setup.K, setup.constraint, setup.distinct_paths, seed);
    return run_experiment_with_pool(setup, std::move(pool), seed);
}

ImitationSweep sweep_imitation(const ExperimentSetup& setup, const std::vector<double>& p_values,
                               const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ConfigError("sweep_imitation: need at least one seed");
    for (double p : p_values)
        if (p < 0.0 || p > 1.0) throw ConfigError("sweep_imitation: p values must lie in [0,1]");

    ImitationSweep sweep;
    std::vector<double> mean_div, mean_acc;
    for (double p : p_values) {
        ExperimentSetup s = setup;
        s.opts.distill.p = p;
        std::vector<double> accs, divs;
        for (std::uint64_t seed : seeds) {
            TrainedRun run = run_experiment(s, seed);
            accs.push_back(setup.test ? run.best_test_acc : run.best_holdout_acc);
            divs.push_back(diversity(run.state.grid, run.state.pool, *setup.holdout, s.opts.mode).average);
        }
        ImitationSweepRow row;
        row.p = p;
        row.mean_accuracy = mean_of(accs);
        row.std_accuracy = stddev_of(accs);
        row.mean_diversity = mean_of(divs);
        row.std_diversity = stddev_of(divs);
        sweep.rows.push_back(row);
        mean_acc.push_back(row.mean_accuracy);
        mean_div.push_back(row.mean_diversity);
    }
    if (p_values.size() >= 2) {
        std::vector<double> ps(p_values.begin(), p_values.end());
        sweep.spearman_p_vs_diversity = spearman(ps, mean_div);
        sweep.spearman_p_vs_accuracy = spearman(ps, mean_acc);
    }
    return sweep;
}

std::vector<SharingSweepRow> sweep_sharing(const ExperimentSetup& setup,
                                           const std::vector<SharingSweepVariant>& variants,
                                           const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ConfigError("sweep_sharing: need at least one seed");
    std::vector<SharingSweepRow> rows;
    for (const auto& v : variants) {
        ExperimentSetup s = setup;
        s.M = v.M;
        s.constraint.forced_layers.clear();
        for (int l = 1; l <= v.forced_layers; ++l) s.constraint.forced_layers.insert(l);
        // Forcing layers shrinks the distinct-path capacity; fall back to
        // duplicates when K no longer fits.
        const int free_layers = s.L - v.forced_layers;
        if (s.M == 1 || free_layers == 0 ||
            (free_layers > 0 && path_capacity(free_layers, s.M) < static_cast<std::uint64_t>(s.K)))
            s.distinct_paths = false;

        std::vector<double> accs, shares;
        for (std::uint64_t seed : seeds) {
            TrainedRun run = run_experiment(s, seed);
            accs.push_back(setup.test ? run.best_test_acc : run.best_holdout_acc);
            shares.push_back(mean_sharing_ratio(run.state.pool));
        }
        SharingSweepRow row;
        row.label = v.label;
        row.M = v.M;
        row.forced_layers = v.forced_layers;
        row.mean_sharing = mean_of(shares);
        row.mean_accuracy = mean_of(accs);
        row.std_accuracy = stddev_of(accs);
        rows.push_back(row);
    }
    return rows;
}

namespace {

std::vector<StructureScore> rank_scores(const std::vector<double>& scores) {
    const int n = static_cast<int>(scores.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    // Sort by score descending; equal scores break to the lower index.
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
            return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
        return a < b;
    });
    std::vector<StructureScore> out(static_cast<std::size_t>(n));
    for (int pos = 0; pos < n; ++pos) {
        const int idx = order[static_cast<std::size_t>(pos)];
        out[static_cast<std::size_t>(idx)] = {idx + 1, scores[static_cast<std::size_t>(idx)], pos + 1};
    }
    return out;
}

std::vector<double> score_structures(const std::vector<StudentPool>& structures, const ExperimentSetup& setup,
                                     const std::vector<std::uint64_t>& seeds) {
    std::vector<double> scores;
    for (const auto& structure : structures) {
        std::vector<double> accs;
        for (std::uint64_t seed : seeds) {
            TrainedRun run = run_experiment_with_pool(setup, structure, seed);
            accs.push_back(run.best_holdout_acc);
        }
        scores.push_back(mean_of(accs));
    }
    return scores;
}

} // namespace

StructureTransferReport structure_transfer(const std::vector<StudentPool>& structures,
                                           const ExperimentSetup& setup_a, const ExperimentSetup& setup_b,
                                           const std::vector<std::uint64_t>& seeds) {
    if (structures.size() < 2) throw ConfigError("structure_transfer: need at least 2 structures");
    if (seeds.empty()) throw ConfigError("structure_transfer: need at least one seed");

    const auto scores_a = score_structures(structures, setup_a, seeds);
    const auto scores_b = score_structures(structures, setup_b, seeds);

    StructureTransferReport rep;
    rep.ranking_a = rank_scores(scores_a);
    rep.ranking_b = rank_scores(scores_b);
    rep.spearman = spearman(scores_a, scores_b);

    auto top3 = [](const std::vector<StructureScore>& ranking) {
        std::vector<int> ids;
        for (const auto& s : ranking)
            if (s.rank <= 3) ids.push_back(s.structure);
        return ids;
    };
    const auto ta = top3(rep.ranking_a);
    const auto tb = top3(rep.ranking_b);
    for (int id : ta)
        if (std::find(tb.begin(), tb.end(), id) != tb.end()) ++rep.top3_overlap;
    return rep;
}

} // namespace cgl
