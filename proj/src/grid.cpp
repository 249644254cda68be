#include "cgl/grid.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "cgl/error.hpp"

namespace cgl {

PathMatrix PathMatrix::from_indices(int M, const std::vector<int>& indices_1based) {
    PathMatrix p;
    p.L = static_cast<int>(indices_1based.size());
    p.M = M;
    p.module_index.reserve(indices_1based.size());
    for (std::size_t l = 0; l < indices_1based.size(); ++l) {
        const int m = indices_1based[l];
        if (m < 1 || m > M)
            throw InvariantError("path: layer " + std::to_string(l + 1) + " selects module " +
                                 std::to_string(m) + " outside [1.." + std::to_string(M) + "]");
        p.module_index.push_back(m - 1);
    }
    return p;
}

PathMatrix PathMatrix::from_entries(const std::vector<std::vector<int>>& binary) {
    PathMatrix p;
    p.L = static_cast<int>(binary.size());
    p.M = binary.empty() ? 0 : static_cast<int>(binary[0].size());
    for (std::size_t l = 0; l < binary.size(); ++l) {
        const auto& row = binary[l];
        if (static_cast<int>(row.size()) != p.M)
            throw InvariantError("path: ragged row " + std::to_string(l + 1));
        int sum = 0, sel = -1;
        for (std::size_t m = 0; m < row.size(); ++m) {
            if (row[m] != 0 && row[m] != 1)
                throw InvariantError("path: non-binary entry at row " + std::to_string(l + 1));
            if (row[m] == 1) {
                sum += 1;
                sel = static_cast<int>(m);
            }
        }
        if (sum != 1)
            throw InvariantError("path: row " + std::to_string(l + 1) + " sums to " + std::to_string(sum) +
                                 ", expected exactly 1");
        p.module_index.push_back(sel);
    }
    return p;
}

std::vector<std::vector<int>> PathMatrix::entries() const {
    std::vector<std::vector<int>> e(static_cast<std::size_t>(L), std::vector<int>(static_cast<std::size_t>(M), 0));
    for (int l = 0; l < L; ++l) e[static_cast<std::size_t>(l)][static_cast<std::size_t>(module_index[static_cast<std::size_t>(l)])] = 1;
    return e;
}

ModuleGrid ModuleGrid::random_init(int L, int M, int input_dim, int hidden_width, int num_classes, Rng& rng) {
    if (L < 1 || M < 1) throw ConfigError("grid: L and M must be >= 1");
    if (input_dim < 1 || num_classes < 1) throw ConfigError("grid: input_dim and num_classes must be >= 1");
    if (L > 1 && hidden_width < 1) throw ConfigError("grid: hidden_width must be >= 1 when L > 1");
    ModuleGrid g;
    g.L = L;
    g.M = M;
    g.input_dim = input_dim;
    g.hidden_width = hidden_width;
    g.num_classes = num_classes;
    g.modules.resize(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) {
        const int fi = g.layer_fan_in(l);
        const int fo = g.layer_fan_out(l);
        const Activation act = (l == L - 1) ? Activation::identity : Activation::relu;
        auto& layer = g.modules[static_cast<std::size_t>(l)];
        layer.reserve(static_cast<std::size_t>(M));
        for (int m = 0; m < M; ++m) layer.push_back(DenseBlock::random_init(fi, fo, act, rng));
    }
    return g;
}

int ModuleGrid::layer_fan_in(int layer) const {
    return layer == 0 ? input_dim : hidden_width;
}

int ModuleGrid::layer_fan_out(int layer) const {
    return layer == L - 1 ? num_classes : hidden_width;
}

PathMatrix sample_path(Rng& rng, int L, int M) {
    if (L < 1 || M < 1) throw ConfigError("sample_path: L and M must be >= 1");
    PathMatrix p;
    p.L = L;
    p.M = M;
    p.module_index.reserve(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) p.module_index.push_back(static_cast<int>(rng.uniform_int(0, M - 1)));
    return p;
}

std::uint64_t path_capacity(int L, int M) {
    if (L < 1 || M < 1) throw ConfigError("path_capacity: L and M must be >= 1");
    std::uint64_t cap = 1;
    for (int l = 0; l < L; ++l) {
        if (cap > UINT64_MAX / static_cast<std::uint64_t>(M))
            throw ConfigError("path_capacity: M^L exceeds the 64-bit range");
        cap *= static_cast<std::uint64_t>(M);
    }
    return cap;
}

namespace {

PathMatrix sample_constrained(Rng& rng, int L, int M, const SharingConstraint& c) {
    PathMatrix p = sample_path(rng, L, M);
    for (int l1 : c.forced_layers) p.module_index[static_cast<std::size_t>(l1 - 1)] = 0;
    return p;
}

} // namespace

StudentPool build_pool(Rng& rng, int L, int M, int K, const SharingConstraint& constraint, bool distinct,
                       std::uint64_t seed) {
    if (K < 1) throw ConfigError("build_pool: K must be >= 1");
    for (int l : constraint.forced_layers)
        if (l < 1 || l > L)
            throw ConfigError("build_pool: forced layer " + std::to_string(l) + " outside [1.." +
                              std::to_string(L) + "]");
    const int free_layers = L - static_cast<int>(constraint.forced_layers.size());
    if (distinct) {
        const std::uint64_t cap = free_layers == 0 ? 1 : path_capacity(free_layers, M);
        if (static_cast<std::uint64_t>(K) > cap)
            throw ConfigError("build_pool: K=" + std::to_string(K) + " distinct paths requested but only M^L_free=" +
                              std::to_string(cap) + " exist (M=" + std::to_string(M) + ", free layers=" +
                              std::to_string(free_layers) + ")");
    }
    StudentPool pool;
    pool.K = K;
    pool.seed = seed;
    pool.paths.reserve(static_cast<std::size_t>(K));
    long long attempts = 0;
    const long long max_attempts = 1000LL * K + 1000000LL;
    while (static_cast<int>(pool.paths.size()) < K) {
        PathMatrix p = sample_constrained(rng, L, M, constraint);
        if (distinct && std::find(pool.paths.begin(), pool.paths.end(), p) != pool.paths.end()) {
            if (++attempts > max_attempts)
                throw InvariantError("build_pool: rejection sampling exceeded attempt budget");
            continue;
        }
        pool.paths.push_back(std::move(p));
    }
    pool.subset_of_student.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) pool.subset_of_student[static_cast<std::size_t>(k)] = k + 1;
    return pool;
}

StudentPool build_pool(Rng& rng, const ModuleGrid& grid, int K, const SharingConstraint& constraint,
                       bool distinct) {
    return build_pool(rng, grid.L, grid.M, K, constraint, distinct, 0);
}

Tensor forward_student(const ModuleGrid& grid, const PathMatrix& path, const Tensor& x) {
    if (path.L != grid.L || path.M != grid.M)
        throw InvariantError("forward_student: path is " + std::to_string(path.L) + "x" + std::to_string(path.M) +
                             " but grid is " + std::to_string(grid.L) + "x" + std::to_string(grid.M));
    Tensor h = x;
    for (int l = 0; l < grid.L; ++l) {
        const int m = path.module_index[static_cast<std::size_t>(l)];
        h = dense_forward(h, grid.modules[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)]);
    }
    return h;
}

NodeId forward_student_tape(Tape& tape, const ModuleGrid& grid, const PathMatrix& path, NodeId x) {
    if (path.L != grid.L || path.M != grid.M)
        throw InvariantError("forward_student_tape: path/grid dimension mismatch");
    NodeId h = x;
    for (int l = 0; l < grid.L; ++l) {
        const int m = path.module_index[static_cast<std::size_t>(l)];
        const DenseBlock& blk = grid.modules[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)];
        h = tape.matmul(h, tape.param(&blk.weight));
        h = tape.add_rowvec(h, tape.param(&blk.bias));
        if (blk.act == Activation::relu) h = tape.relu(h);
    }
    return h;
}

double sharing_ratio(const PathMatrix& a, const PathMatrix& b) {
    if (a.L != b.L || a.M != b.M) throw UsageError("sharing_ratio: dimension mismatch");
    if (a.L == 0) throw UsageError("sharing_ratio: empty paths");
    int same = 0;
    for (int l = 0; l < a.L; ++l)
        if (a.module_index[static_cast<std::size_t>(l)] == b.module_index[static_cast<std::size_t>(l)]) ++same;
    return static_cast<double>(same) / static_cast<double>(a.L);
}

double mean_sharing_ratio(const StudentPool& pool) {
    if (pool.K < 2) return 1.0;
    double sum = 0.0;
    int pairs = 0;
    for (int a = 0; a < pool.K; ++a)
        for (int b = a + 1; b < pool.K; ++b) {
            sum += sharing_ratio(pool.paths[static_cast<std::size_t>(a)], pool.paths[static_cast<std::size_t>(b)]);
            ++pairs;
        }
    return sum / pairs;
}

long long param_count(const ModuleGrid& grid) {
    long long n = 0;
    for (const auto& layer : grid.modules)
        for (const auto& blk : layer) n += static_cast<long long>(blk.weight.size() + blk.bias.size());
    return n;
}

std::vector<Tensor*> grid_params(ModuleGrid& grid) {
    std::vector<Tensor*> ps;
    for (auto& layer : grid.modules)
        for (auto& blk : layer) {
            ps.push_back(&blk.weight);
            ps.push_back(&blk.bias);
        }
    return ps;
}

std::vector<const Tensor*> grid_params(const ModuleGrid& grid) {
    std::vector<const Tensor*> ps;
    for (const auto& layer : grid.modules)
        for (const auto& blk : layer) {
            ps.push_back(&blk.weight);
            ps.push_back(&blk.bias);
        }
    return ps;
}

std::vector<std::string> grid_param_names(const ModuleGrid& grid) {
    std::vector<std::string> names;
    for (int l = 0; l < grid.L; ++l)
        for (int m = 0; m < grid.M; ++m) {
            const std::string base = "layer" + std::to_string(l + 1) + ".module" + std::to_string(m + 1);
            names.push_back(base + ".weight");
            names.push_back(base + ".bias");
        }
    return names;
}

std::string serialize_structure(const StudentPool& pool, int L, int M) {
    std::ostringstream os;
    os << "cgl-structure v1\n";
    os << "L " << L << "\n";
    os << "M " << M << "\n";
    os << "K " << pool.K << "\n";
    os << "seed " << pool.seed << "\n";
    for (int k = 0; k < pool.K; ++k) {
        os << "path " << (k + 1) << " :";
        for (int idx : pool.paths[static_cast<std::size_t>(k)].module_index) os << " " << (idx + 1);
        os << "\n";
    }
    return os.str();
}

StructureInfo parse_structure(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& what) {
        throw ParseError("structure descriptor line " + std::to_string(line_no) + ": " + what);
    };

    StructureInfo info;
    if (!std::getline(is, line)) throw ParseError("structure descriptor: empty input");
    line_no = 1;
    if (line != "cgl-structure v1") fail("unrecognized format tag '" + line + "'");

    bool have_l = false, have_m = false, have_k = false, have_seed = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "L") {
            if (!(ls >> info.L) || info.L < 1) fail("invalid L value");
            have_l = true;
        } else if (key == "M") {
            if (!(ls >> info.M) || info.M < 1) fail("invalid M value");
            have_m = true;
        } else if (key == "K") {
            if (!(ls >> info.K) || info.K < 1) fail("invalid K value");
            have_k = true;
        } else if (key == "seed") {
            if (!(ls >> info.seed)) fail("invalid seed value");
            have_seed = true;
        } else if (key == "path") {
            if (!have_l || !have_m || !have_k) fail("path entry before L/M/K header");
            int pk = 0;
            std::string colon;
            if (!(ls >> pk >> colon) || colon != ":") fail("malformed path header");
            if (pk != static_cast<int>(info.paths.size()) + 1) fail("path index out of order");
            std::vector<int> idx;
            int v = 0;
            while (ls >> v) idx.push_back(v);
            if (!ls.eof()) fail("non-integer module index");
            if (static_cast<int>(idx.size()) != info.L)
                fail("expected " + std::to_string(info.L) + " module indices, got " + std::to_string(idx.size()));
            try {
                info.paths.push_back(PathMatrix::from_indices(info.M, idx));
            } catch (const InvariantError& e) {
                fail(e.what());
            }
        } else {
            fail("unknown field '" + key + "'");
        }
    }
    if (!have_l || !have_m || !have_k || !have_seed) throw ParseError("structure descriptor: missing header field");
    if (static_cast<int>(info.paths.size()) != info.K)
        throw ParseError("structure descriptor: K=" + std::to_string(info.K) + " but found " +
                         std::to_string(info.paths.size()) + " paths");
    return info;
}

StructureInfo load_structure_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open structure descriptor: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_structure(buf.str());
}

StudentPool pool_from_structure(const StructureInfo& info) {
    StudentPool pool;
    pool.K = info.K;
    pool.seed = info.seed;
    pool.paths = info.paths;
    pool.subset_of_student.resize(static_cast<std::size_t>(info.K));
    for (int k = 0; k < info.K; ++k) pool.subset_of_student[static_cast<std::size_t>(k)] = k + 1;
    return pool;
}

} // namespace cgl
