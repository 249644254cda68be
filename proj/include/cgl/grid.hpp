#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "cgl/nn.hpp"
#include "cgl/rng.hpp"
#include "cgl/tape.hpp"

namespace cgl {

// One module index per layer; equivalent to the binary L x M path matrix
// with exactly one 1 per row.
struct PathMatrix {
    int L = 0;
    int M = 0;
    std::vector<int> module_index; // per layer, 0-based

    // From 1-based per-layer indices (descriptor convention).
    static PathMatrix from_indices(int M, const std::vector<int>& indices_1based);
    // From an explicit binary matrix; rejects rows whose sum is not 1.
    static PathMatrix from_entries(const std::vector<std::vector<int>>& binary);

    std::vector<std::vector<int>> entries() const; // binary L x M

    bool operator==(const PathMatrix& other) const {
        return L == other.L && M == other.M && module_index == other.module_index;
    }
};

// The L x M grid of shared modules. All modules within a layer have
// identical fan_in/fan_out so that every path is well-formed; the last
// layer emits the class logits.
struct ModuleGrid {
    int L = 0;
    int M = 0;
    int input_dim = 0;
    int hidden_width = 0;
    int num_classes = 0;
    std::vector<std::vector<DenseBlock>> modules; // [L][M]

    static ModuleGrid random_init(int L, int M, int input_dim, int hidden_width, int num_classes, Rng& rng);

    int layer_fan_in(int layer) const;  // 0-based layer
    int layer_fan_out(int layer) const;
};

struct SharingConstraint {
    std::set<int> forced_layers; // 1-based layer ids pinned to module 1 for everyone
};

struct StudentPool {
    int K = 0;
    std::vector<PathMatrix> paths;       // per student
    std::vector<int> subset_of_student;  // 1-based subset id per student (bijection)
    std::uint64_t seed = 0;
};

// Uniform-independent module choice per layer.
PathMatrix sample_path(Rng& rng, int L, int M);

// K paths honoring the constraint; with distinct=true duplicates are
// rejected and resampled. ConfigError when K exceeds M^(free layers).
StudentPool build_pool(Rng& rng, const ModuleGrid& grid, int K, const SharingConstraint& constraint,
                       bool distinct);
StudentPool build_pool(Rng& rng, int L, int M, int K, const SharingConstraint& constraint, bool distinct,
                       std::uint64_t seed);

// M^L as an exact unsigned count; ConfigError on 64-bit overflow.
std::uint64_t path_capacity(int L, int M);

// Sequential composition of the selected module per layer.
Tensor forward_student(const ModuleGrid& grid, const PathMatrix& path, const Tensor& x);
// Same composition recorded on a tape; parameters registered by address.
NodeId forward_student_tape(Tape& tape, const ModuleGrid& grid, const PathMatrix& path, NodeId x);

// Fraction of layers where both paths select the same module.
double sharing_ratio(const PathMatrix& a, const PathMatrix& b);
// Mean pairwise sharing ratio over the pool (1.0 for K == 1).
double mean_sharing_ratio(const StudentPool& pool);

// Total learnable scalars; independent of K by construction.
long long param_count(const ModuleGrid& grid);

// Canonical enumeration of grid parameters (layer-major, module, weight
// then bias). The optimizer, checkpoints, and gradient maps all use this
// order.
std::vector<Tensor*> grid_params(ModuleGrid& grid);
std::vector<const Tensor*> grid_params(const ModuleGrid& grid);
std::vector<std::string> grid_param_names(const ModuleGrid& grid);

// Structure descriptor: versioned human-readable text recording L, M, K,
// seed, and the K path index-vectors.
std::string serialize_structure(const StudentPool& pool, int L, int M);

struct StructureInfo {
    int L = 0;
    int M = 0;
    int K = 0;
    std::uint64_t seed = 0;
    std::vector<PathMatrix> paths;
};

StructureInfo parse_structure(const std::string& text);
StructureInfo load_structure_file(const std::string& path);
StudentPool pool_from_structure(const StructureInfo& info);

} // namespace cgl
