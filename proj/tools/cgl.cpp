#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cgl/error.hpp"
#include "cgl/runner.hpp"

namespace {

int dispatch(CLI::App& app);

struct CommonConfigArgs {
    std::string config_path;
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Config JSON file (built-in defaults when omitted)");
        cmd->add_option("--set", overrides, "Override a field by dotted path, e.g. distill.p=0.25");
    }

    cgl::RunConfig load() const { return cgl::load_config(config_path, overrides); }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Collaborative group training of weight-sharing students routed through a module grid"};
    app.require_subcommand(1);

    // train
    CommonConfigArgs train_cfg;
    std::string resume;
    auto* train = app.add_subcommand("train", "Train a student pool and write metrics + checkpoints");
    train_cfg.attach(train);
    train->add_option("--resume", resume, "Continue from a checkpoint (config hash must match)");

    // eval
    CommonConfigArgs eval_cfg;
    std::string eval_ckpt, eval_student = "best", eval_split = "test", eval_out;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpointed student");
    eval_cfg.attach(eval);
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval->add_option("--student", eval_student, "best | random | 1-based index");
    eval->add_option("--split", eval_split, "train | holdout | test");
    eval->add_option("--out", eval_out, "Output CSV (default: eval.csv next to the checkpoint)");

    // ablate
    CommonConfigArgs abl_cfg;
    std::vector<std::string> abl_off;
    int abl_seeds = 1;
    std::string abl_out = "ablation.csv";
    auto* ablate = app.add_subcommand("ablate", "Train ablation variants (rr / sdl / sgi off)");
    abl_cfg.attach(ablate);
    ablate->add_option("--off", abl_off, "Mechanism to disable: rr, sdl, or sgi (repeatable; default all + none)");
    ablate->add_option("--seeds", abl_seeds, "Number of seeds per variant");
    ablate->add_option("--out", abl_out, "Output CSV");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "Evaluation instruments");
    analyze->require_subcommand(1);

    CommonConfigArgs div_cfg;
    std::string div_ckpt, div_split = "holdout", div_out = "diversity.csv";
    auto* div = analyze->add_subcommand(
        "diversity", "Pairwise student prediction distances. CSV: student_a,student_b,mean_l2 (+ average row)");
    div_cfg.attach(div);
    div->add_option("--checkpoint", div_ckpt)->required();
    div->add_option("--split", div_split, "holdout | test | train");
    div->add_option("--out", div_out);

    CommonConfigArgs pert_cfg;
    std::string pert_ckpt, pert_student = "best", pert_split = "test", pert_out = "perturb.csv";
    std::vector<double> pert_sigmas = {0.0, 0.01, 0.02, 0.05, 0.1};
    int pert_trials = 10;
    auto* pert = analyze->add_subcommand(
        "perturb", "Gaussian parameter-noise robustness probe. CSV: sigma,mean_accuracy,mean_drop,trials");
    pert_cfg.attach(pert);
    pert->add_option("--checkpoint", pert_ckpt)->required();
    pert->add_option("--student", pert_student, "best | 1-based index");
    pert->add_option("--sigmas", pert_sigmas, "Ascending noise levels")->delimiter(',');
    pert->add_option("--trials", pert_trials, "Trials per sigma");
    pert->add_option("--split", pert_split);
    pert->add_option("--out", pert_out);

    CommonConfigArgs swp_cfg;
    std::vector<double> swp_values = {0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0};
    int swp_seeds = 1;
    std::string swp_out = "sweep_p.csv";
    auto* swp = analyze->add_subcommand(
        "sweep-p",
        "Imitation-probability sweep (fresh runs per p, seed). CSV: "
        "p,mean_accuracy,std_accuracy,mean_diversity,std_diversity");
    swp_cfg.attach(swp);
    swp->add_option("--p-values", swp_values, "Imitation probabilities")->delimiter(',');
    swp->add_option("--seeds", swp_seeds, "Seeds per p value");
    swp->add_option("--out", swp_out);

    CommonConfigArgs shr_cfg;
    std::vector<int> shr_m, shr_forced;
    int shr_seeds = 1;
    std::string shr_out = "sweep_sharing.csv";
    auto* shr = analyze->add_subcommand(
        "sweep-sharing",
        "Parameter-sharing-ratio sweep. CSV: "
        "variant,modules_per_layer,forced_layers,mean_sharing_ratio,mean_accuracy,std_accuracy");
    shr_cfg.attach(shr);
    shr->add_option("--m-values", shr_m, "Modules-per-layer settings")->delimiter(',');
    shr->add_option("--forced-counts", shr_forced, "Counts of layers forced to a shared module")->delimiter(',');
    shr->add_option("--seeds", shr_seeds, "Seeds per setting");
    shr->add_option("--out", shr_out);

    CommonConfigArgs tra_cfg;
    std::string tra_config_b, tra_out = "transfer.csv";
    std::vector<std::string> tra_overrides_b;
    int tra_structures = 8, tra_seeds = 1;
    auto* tra = analyze->add_subcommand(
        "transfer",
        "Rank sharing structures on two tasks. CSV: structure,score_a,rank_a,score_b,rank_b "
        "(+ top3_overlap and spearman rows)");
    tra_cfg.attach(tra);
    tra->add_option("--config-b", tra_config_b, "Config for the second task")->required();
    tra->add_option("--set-b", tra_overrides_b, "Overrides for the second config");
    tra->add_option("--structures", tra_structures, "Number of random structures");
    tra->add_option("--seeds", tra_seeds, "Seeds per structure per task");
    tra->add_option("--out", tra_out);

    double cost_batches = 16;
    int cost_students = 8;
    double cost_p = 0.25;
    auto* cost = analyze->add_subcommand(
        "cost", "Expected per-student training cost; prints (N/K)*(1+K*p) and the exclude-self expectation");
    cost->add_option("--batches", cost_batches, "Batches per epoch over the full training set")->required();
    cost->add_option("--students", cost_students, "Student count K")->required();
    cost->add_option("--p", cost_p, "Imitation probability")->required();

    // gen-data
    std::string gen_kind = "blobs", gen_out = "data.csv", gen_meta;
    cgl::GenDataParams gen_params;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset CSV (+ metadata sidecar)");
    gen->add_option("kind", gen_kind, "Generator kind (blobs)");
    gen->add_option("--classes", gen_params.classes);
    gen->add_option("--per-class", gen_params.per_class);
    gen->add_option("--dim", gen_params.dim);
    gen->add_option("--spread", gen_params.spread);
    gen->add_option("--seed", gen_params.seed);
    gen->add_option("--from-meta", gen_meta, "Regenerate from a .meta.json file (ignores other params)");
    gen->add_option("--out", gen_out, "Output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help / --version
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(train)) {
            cgl::cmd_train(train_cfg.load(), resume);
        } else if (app.got_subcommand(eval)) {
            cgl::cmd_eval(eval_cfg.load(), eval_ckpt, eval_student, eval_split, eval_out);
        } else if (app.got_subcommand(ablate)) {
            cgl::cmd_ablate(abl_cfg.load(), abl_off, abl_seeds, abl_out);
        } else if (app.got_subcommand(analyze)) {
            std::string summary;
            if (analyze->got_subcommand(div))
                summary = cgl::analyze_diversity(div_cfg.load(), div_ckpt, div_split, div_out);
            else if (analyze->got_subcommand(pert))
                summary = cgl::analyze_perturb(pert_cfg.load(), pert_ckpt, pert_student, pert_sigmas,
                                               pert_trials, pert_split, pert_out);
            else if (analyze->got_subcommand(swp))
                summary = cgl::analyze_sweep_p(swp_cfg.load(), swp_values, swp_seeds, swp_out);
            else if (analyze->got_subcommand(shr))
                summary = cgl::analyze_sweep_sharing(shr_cfg.load(), shr_m, shr_forced, shr_seeds, shr_out);
            else if (analyze->got_subcommand(tra))
                summary = cgl::analyze_transfer(tra_cfg.load(),
                                                cgl::load_config(tra_config_b, tra_overrides_b),
                                                tra_structures, tra_seeds, tra_out);
            else if (analyze->got_subcommand(cost))
                summary = cgl::analyze_cost(cost_batches, cost_students, cost_p);
            std::printf("%s\n", summary.c_str());
        } else if (app.got_subcommand(gen)) {
            if (!gen_meta.empty())
                gen_params = cgl::gen_params_from_meta(gen_meta);
            else
                gen_params.kind = gen_kind;
            cgl::cmd_gen_data(gen_params, gen_out);
        }
    } catch (const cgl::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const cgl::DataError& e) { // covers ParseError
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const cgl::IntegrityError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime failure: %s\n", e.what());
        return 1;
    }
    return 0;
}
