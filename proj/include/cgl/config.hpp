#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgl/data.hpp"
#include "cgl/engine.hpp"

namespace cgl {

using json = nlohmann::json;

struct DatasetSpec {
    std::string kind = "blobs"; // blobs | csv | idx
    // blobs
    int classes = 8;
    int dim = 16;
    int train_per_class = 625;
    int test_per_class = 125;
    double spread = 1.1;
    std::uint64_t seed = 7;
    // csv
    std::string train_path, test_path, label_column = "label";
    // idx
    std::string train_images, train_labels, test_images, test_labels;
};

struct GridSpec {
    int layers = 4;
    int modules_per_layer = 2;
    int hidden_width = 64;
};

struct PoolSpec {
    int students = 4;
    bool distinct_paths = true;
    std::vector<int> forced_shared_layers;
};

struct PartitionSpec {
    PartitionMode mode = PartitionMode::uniform;
    double overlap = 0.0;
    bool repartition_each_epoch = false;
};

// The full validated run configuration. `resolved` carries the canonical
// JSON (defaults + file + overrides) that gets persisted next to outputs
// and hashed into run ids and checkpoints.
struct RunConfig {
    json resolved;
    std::uint64_t seed = 7;
    std::string output_dir = "runs";
    DatasetSpec dataset;
    double holdout_fraction = 0.2;
    GridSpec grid;
    PoolSpec pool;
    PartitionSpec partition;
    // train + distill + schedule live in engine types:
    TrainOptions opts;

    std::uint64_t hash() const;
    std::string run_id() const;
};

// The shipped default: the desk-scale blobs experiment, so `train` with no
// arguments runs it end to end.
json default_config();

// Load (file optional; empty path = defaults), apply dotted --set
// overrides, validate every field. All violations are reported at once.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);
RunConfig config_from_json(json user);

// "a.b.c=value"; value parsed as JSON when possible, else taken as string.
void apply_override(json& config, const std::string& assignment);

std::uint64_t hash_json(const json& j);

} // namespace cgl
