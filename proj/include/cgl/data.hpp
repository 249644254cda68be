#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cgl/rng.hpp"
#include "cgl/tensor.hpp"

namespace cgl {

struct Dataset {
    Tensor features;         // [N x d]
    std::vector<int> labels; // 1-based, values in [1..C]
    int num_classes = 0;
    std::string name;

    int n() const { return features.rank() == 2 ? features.rows() : 0; }
    int dim() const { return features.rank() == 2 ? features.cols() : 0; }

    void validate() const; // throws DataError on any invariant violation
    Dataset subset(const std::vector<int>& rows) const;
};

enum class PartitionMode { uniform, stratified };

// K-way split of [0..N). The base assignment is disjoint and covering;
// an optional overlap fraction additionally lends each subset extra
// samples drawn from the others (the base invariants still hold).
struct Partition {
    std::vector<int> assignment; // per sample, subset id in [1..K]
    int K = 0;
    std::uint64_t seed = 0;
    PartitionMode mode = PartitionMode::uniform;
    double overlap = 0.0;

    std::vector<std::vector<int>> subsets;         // disjoint base, per subset, ascending
    std::vector<std::vector<int>> student_indices; // base plus overlap extras

    const std::vector<int>& indices_for(int subset_1based) const;
};

Partition make_partition(const Dataset& data, int K, std::uint64_t seed, PartitionMode mode,
                         double overlap = 0.0);

std::pair<Dataset, Dataset> holdout_split(const Dataset& data, double fraction, std::uint64_t seed);

// C Gaussian clusters, means spaced on a circle of radius kBlobRadius in
// the first two feature dimensions (single axis when d == 1), isotropic
// noise with standard deviation `spread` in every dimension.
inline constexpr double kBlobRadius = 5.0;
Dataset synth_blobs(int n_per_class, int C, int d, double spread, std::uint64_t seed);

// CSV with a header row; all non-label columns are numeric features.
Dataset load_csv(const std::string& path, const std::string& label_column);
void write_csv(const Dataset& data, const std::string& path, const std::string& label_column = "label");

// Big-endian IDX pair (magic 0x803 images / 0x801 labels). Pixels scaled
// to [0,1]; stored labels are 0-based and shifted to [1..C].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Index batches over a sample list, reshuffled per (seed, epoch); the
// final partial batch is kept.
std::vector<std::vector<int>> batches(const std::vector<int>& indices, int batch_size, std::uint64_t seed,
                                      int epoch);
// Convenience with a subset selector (1-based id, or nullopt for all).
std::vector<std::vector<int>> batches(const Dataset& data, const Partition* part, std::optional<int> subset,
                                      int batch_size, std::uint64_t seed, int epoch);

} // namespace cgl
