#include "cgl/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "cgl/checkpoint.hpp"
#include "cgl/error.hpp"

namespace cgl {

json default_config() {
    return json{
        {"version", 1},
        {"seed", 7},
        {"output_dir", "runs"},
        {"dataset",
         {{"kind", "blobs"},
          {"classes", 8},
          {"dim", 16},
          {"train_per_class", 625},
          {"test_per_class", 125},
          {"spread", 1.1},
          {"seed", 7},
          {"train", ""},
          {"test", ""},
          {"label_column", "label"},
          {"train_images", ""},
          {"train_labels", ""},
          {"test_images", ""},
          {"test_labels", ""}}},
        {"holdout_fraction", 0.2},
        {"grid", {{"layers", 4}, {"modules_per_layer", 2}, {"hidden_width", 64}}},
        {"pool", {{"students", 4}, {"distinct_paths", true}, {"forced_shared_layers", json::array()}}},
        {"partition", {{"mode", "uniform"}, {"overlap", 0.0}, {"repartition_each_epoch", false}}},
        {"train",
         {{"epochs", 50},
          {"batch_size", 64},
          {"lr", 0.001},
          {"loss_reduction", "sum"},
          {"mode", "serial"},
          {"checkpoint_every", 0},
          {"wall_clock", false},
          {"lr_milestones", json::array()},
          {"lr_decay", 0.5},
          {"full_data", false}}},
        {"distill",
         {{"temperature", 3.0},
          {"p", 0.5},
          {"aggregation", "actual_count"},
          {"include_self", false},
          {"detach_teacher", true},
          {"t_squared", false}}},
        {"schedule", {{"rampup_fraction", 0.2}, {"j_start", nullptr}, {"j_end", nullptr}}},
    };
}

namespace {

// Merge user values over defaults, collecting unknown keys.
void merge_into(json& base, const json& user, const std::string& prefix, std::vector<std::string>& errors) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) {
            errors.push_back("unknown field '" + path + "'");
            continue;
        }
        if (base[it.key()].is_object() && it.value().is_object()) {
            merge_into(base[it.key()], it.value(), path, errors);
        } else {
            base[it.key()] = it.value();
        }
    }
}

struct FieldReader {
    const json& j;
    std::vector<std::string>& errors;

    template <typename T>
    T get(const std::string& section, const std::string& key, T fallback) {
        try {
            return j.at(section).at(key).get<T>();
        } catch (const json::exception&) {
            errors.push_back("field '" + section + "." + key + "' has the wrong type");
            return fallback;
        }
    }

    template <typename T>
    T get_top(const std::string& key, T fallback) {
        try {
            return j.at(key).get<T>();
        } catch (const json::exception&) {
            errors.push_back("field '" + key + "' has the wrong type");
            return fallback;
        }
    }
};

} // namespace

void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects dotted.path=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw; // plain string
    }

    std::vector<std::string> keys;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw ConfigError("--set path '" + path + "' has an empty segment");
        keys.push_back(part);
    }

    json* node = &config;
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
        if (!node->contains(keys[i]) || !(*node)[keys[i]].is_object())
            throw ConfigError("--set path '" + path + "' does not name a config section");
        node = &(*node)[keys[i]];
    }
    if (!node->contains(keys.back()))
        throw ConfigError("--set path '" + path + "' does not name a known field");
    (*node)[keys.back()] = value;
}

RunConfig config_from_json(json user) {
    json resolved = default_config();
    std::vector<std::string> errors;
    merge_into(resolved, user, "", errors);

    RunConfig cfg;
    cfg.resolved = resolved;
    FieldReader r{resolved, errors};

    cfg.seed = r.get_top<std::uint64_t>("seed", 7);
    cfg.output_dir = r.get_top<std::string>("output_dir", "runs");
    cfg.holdout_fraction = r.get_top<double>("holdout_fraction", 0.2);

    cfg.dataset.kind = r.get<std::string>("dataset", "kind", "blobs");
    cfg.dataset.classes = r.get<int>("dataset", "classes", 8);
    cfg.dataset.dim = r.get<int>("dataset", "dim", 16);
    cfg.dataset.train_per_class = r.get<int>("dataset", "train_per_class", 625);
    cfg.dataset.test_per_class = r.get<int>("dataset", "test_per_class", 125);
    cfg.dataset.spread = r.get<double>("dataset", "spread", 1.1);
    cfg.dataset.seed = r.get<std::uint64_t>("dataset", "seed", cfg.seed);
    cfg.dataset.train_path = r.get<std::string>("dataset", "train", "");
    cfg.dataset.test_path = r.get<std::string>("dataset", "test", "");
    cfg.dataset.label_column = r.get<std::string>("dataset", "label_column", "label");
    cfg.dataset.train_images = r.get<std::string>("dataset", "train_images", "");
    cfg.dataset.train_labels = r.get<std::string>("dataset", "train_labels", "");
    cfg.dataset.test_images = r.get<std::string>("dataset", "test_images", "");
    cfg.dataset.test_labels = r.get<std::string>("dataset", "test_labels", "");

    cfg.grid.layers = r.get<int>("grid", "layers", 4);
    cfg.grid.modules_per_layer = r.get<int>("grid", "modules_per_layer", 2);
    cfg.grid.hidden_width = r.get<int>("grid", "hidden_width", 64);

    cfg.pool.students = r.get<int>("pool", "students", 4);
    cfg.pool.distinct_paths = r.get<bool>("pool", "distinct_paths", true);
    cfg.pool.forced_shared_layers = r.get<std::vector<int>>("pool", "forced_shared_layers", {});

    const std::string pmode = r.get<std::string>("partition", "mode", "uniform");
    if (pmode == "uniform")
        cfg.partition.mode = PartitionMode::uniform;
    else if (pmode == "stratified")
        cfg.partition.mode = PartitionMode::stratified;
    else
        errors.push_back("partition.mode must be 'uniform' or 'stratified', got '" + pmode + "'");
    cfg.partition.overlap = r.get<double>("partition", "overlap", 0.0);
    cfg.partition.repartition_each_epoch = r.get<bool>("partition", "repartition_each_epoch", false);

    TrainOptions& o = cfg.opts;
    o.epochs = r.get<int>("train", "epochs", 50);
    o.batch_size = r.get<int>("train", "batch_size", 64);
    o.adam.lr = r.get<double>("train", "lr", 0.001);
    const std::string red = r.get<std::string>("train", "loss_reduction", "sum");
    if (red == "sum")
        o.distill.loss_reduction = LossReduction::sum;
    else if (red == "mean")
        o.distill.loss_reduction = LossReduction::mean;
    else
        errors.push_back("train.loss_reduction must be 'sum' or 'mean', got '" + red + "'");
    const std::string mode = r.get<std::string>("train", "mode", "serial");
    if (mode == "serial")
        o.mode = RunMode::serial;
    else if (mode == "parallel")
        o.mode = RunMode::parallel;
    else
        errors.push_back("train.mode must be 'serial' or 'parallel', got '" + mode + "'");
    o.checkpoint_every = r.get<int>("train", "checkpoint_every", 0);
    o.wall_clock = r.get<bool>("train", "wall_clock", false);
    o.lr_milestones = r.get<std::vector<int>>("train", "lr_milestones", {});
    o.lr_decay = r.get<double>("train", "lr_decay", 0.5);
    o.full_data = r.get<bool>("train", "full_data", false);
    o.seed = cfg.seed;

    o.distill.temperature = r.get<double>("distill", "temperature", 3.0);
    o.distill.p = r.get<double>("distill", "p", 0.5);
    const std::string agg = r.get<std::string>("distill", "aggregation", "actual_count");
    if (agg == "actual_count")
        o.distill.aggregation = AggregationMode::actual_count;
    else if (agg == "expected_count")
        o.distill.aggregation = AggregationMode::expected_count;
    else
        errors.push_back("distill.aggregation must be 'actual_count' or 'expected_count', got '" + agg + "'");
    o.distill.include_self = r.get<bool>("distill", "include_self", false);
    o.distill.detach_teacher = r.get<bool>("distill", "detach_teacher", true);
    o.distill.t_squared = r.get<bool>("distill", "t_squared", false);

    // Schedule: explicit j_start/j_end win over rampup_fraction.
    const json& sched = resolved["schedule"];
    if (sched.contains("j_start") && !sched["j_start"].is_null() && sched.contains("j_end") &&
        !sched["j_end"].is_null()) {
        o.schedule.j_start = sched["j_start"].get<int>();
        o.schedule.j_end = sched["j_end"].get<int>();
        o.schedule.total_epochs = o.epochs;
    } else {
        const double frac = r.get<double>("schedule", "rampup_fraction", 0.2);
        if (frac < 0.0 || frac > 1.0)
            errors.push_back("schedule.rampup_fraction must be in [0,1]");
        else
            o.schedule = RampUpSchedule::from_fraction(frac, o.epochs);
    }

    // Range validation (collect everything, abort once).
    auto require = [&](bool ok, const std::string& msg) {
        if (!ok) errors.push_back(msg);
    };
    require(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0, "holdout_fraction must be in (0,1)");
    if (cfg.dataset.kind == "blobs") {
        require(cfg.dataset.classes >= 1, "dataset.classes must be >= 1");
        require(cfg.dataset.dim >= 1, "dataset.dim must be >= 1");
        require(cfg.dataset.train_per_class >= 1, "dataset.train_per_class must be >= 1");
        require(cfg.dataset.test_per_class >= 0, "dataset.test_per_class must be >= 0");
        require(cfg.dataset.spread > 0.0, "dataset.spread must be > 0");
    } else if (cfg.dataset.kind == "csv") {
        require(!cfg.dataset.train_path.empty(), "dataset.train is required for kind 'csv'");
    } else if (cfg.dataset.kind == "idx") {
        require(!cfg.dataset.train_images.empty() && !cfg.dataset.train_labels.empty(),
                "dataset.train_images and dataset.train_labels are required for kind 'idx'");
    } else {
        errors.push_back("dataset.kind must be 'blobs', 'csv', or 'idx', got '" + cfg.dataset.kind + "'");
    }
    require(cfg.grid.layers >= 1, "grid.layers must be >= 1");
    require(cfg.grid.modules_per_layer >= 1, "grid.modules_per_layer must be >= 1");
    require(cfg.grid.hidden_width >= 1, "grid.hidden_width must be >= 1");
    require(cfg.pool.students >= 1, "pool.students must be >= 1");
    for (int l : cfg.pool.forced_shared_layers)
        require(l >= 1 && l <= cfg.grid.layers,
                "pool.forced_shared_layers entry " + std::to_string(l) + " outside [1.." +
                    std::to_string(cfg.grid.layers) + "]");
    require(cfg.partition.overlap >= 0.0 && cfg.partition.overlap < 1.0, "partition.overlap must be in [0,1)");
    require(o.epochs >= 0, "train.epochs must be >= 0");
    require(o.batch_size >= 1, "train.batch_size must be >= 1");
    require(o.adam.lr > 0.0, "train.lr must be > 0");
    require(o.lr_decay > 0.0, "train.lr_decay must be > 0");
    require(o.checkpoint_every >= 0, "train.checkpoint_every must be >= 0");
    require(o.distill.temperature > 0.0, "distill.temperature must be > 0");
    require(o.distill.p >= 0.0 && o.distill.p <= 1.0, "distill.p must be in [0,1]");
    require(o.schedule.j_start >= 0 && o.schedule.j_start <= o.schedule.j_end &&
                o.schedule.j_end <= o.epochs,
            "schedule window must satisfy 0 <= j_start <= j_end <= epochs");

    if (!errors.empty()) {
        std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem(s)):";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
    return cfg;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    json user = json::object();
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file: " + path);
        try {
            f >> user;
        } catch (const json::exception& e) {
            throw ParseError("config '" + path + "': " + e.what());
        }
        if (!user.is_object()) throw ParseError("config '" + path + "': top level must be an object");
    }
    // Overrides apply to the resolved view, so unknown paths are rejected
    // against the full schema.
    json resolved = default_config();
    std::vector<std::string> merge_errors;
    merge_into(resolved, user, "", merge_errors);
    if (!merge_errors.empty()) {
        std::string msg = "invalid configuration (" + std::to_string(merge_errors.size()) + " problem(s)):";
        for (const auto& e : merge_errors) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
    for (const auto& ov : overrides) apply_override(resolved, ov);
    return config_from_json(resolved);
}

std::uint64_t hash_json(const json& j) {
    return fnv1a64(j.dump());
}

std::uint64_t RunConfig::hash() const {
    return hash_json(resolved);
}

std::string RunConfig::run_id() const {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%016llx_s%llu", static_cast<unsigned long long>(hash()),
                  static_cast<unsigned long long>(seed));
    return buf;
}

} // namespace cgl
