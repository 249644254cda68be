#include "cgl/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cgl/error.hpp"

namespace cgl {

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

void put_doubles(std::ostream& os, const char* tag, const Tensor& t) {
    os << tag << " " << t.size();
    char buf[32];
    for (double v : t.data) {
        std::snprintf(buf, sizeof buf, " %016llx",
                      static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
        os << buf;
    }
    os << "\n";
}

std::string hex_double(double v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
    return buf;
}

double parse_hex_double(const std::string& s, const char* what) {
    std::uint64_t bits = 0;
    std::istringstream is(s);
    is >> std::hex >> bits;
    if (is.fail()) throw IntegrityError(std::string("checkpoint: malformed double in ") + what);
    return std::bit_cast<double>(bits);
}

void read_doubles(std::istream& is, const char* tag, Tensor& t, const char* what) {
    std::string key;
    std::size_t count = 0;
    if (!(is >> key >> count) || key != tag)
        throw IntegrityError(std::string("checkpoint: expected '") + tag + "' section in " + what);
    if (count != t.size())
        throw IntegrityError(std::string("checkpoint: ") + what + " has " + std::to_string(count) +
                             " values, expected " + std::to_string(t.size()));
    std::string hex;
    for (std::size_t i = 0; i < count; ++i) {
        if (!(is >> hex)) throw IntegrityError(std::string("checkpoint: truncated values in ") + what);
        t.data[i] = parse_hex_double(hex, what);
    }
}

} // namespace

void checkpoint_save(const std::string& path, const TrainerState& state, std::uint64_t config_hash) {
    std::ostringstream os;
    os << "cgl-checkpoint v1\n";
    os << "config_hash " << config_hash << "\n";
    os << "epoch " << state.epochs_done << "\n";

    const ModuleGrid& g = state.grid;
    os << "grid " << g.L << " " << g.M << " " << g.input_dim << " " << g.hidden_width << " " << g.num_classes
       << "\n";
    const auto params = grid_params(g);
    const auto names = grid_param_names(g);
    for (std::size_t i = 0; i < params.size(); ++i) {
        os << "name " << names[i] << "\n";
        put_doubles(os, "param", *params[i]);
    }

    os << "adam_step " << state.adam.step_count << "\n";
    os << "adam_config " << hex_double(state.adam.config.lr) << " " << hex_double(state.adam.config.beta1)
       << " " << hex_double(state.adam.config.beta2) << " " << hex_double(state.adam.config.epsilon) << "\n";
    for (std::size_t i = 0; i < params.size(); ++i) {
        put_doubles(os, "adam_m", state.adam.first_moment[i]);
        put_doubles(os, "adam_v", state.adam.second_moment[i]);
    }

    os << "pool-begin\n" << serialize_structure(state.pool, g.L, g.M) << "pool-end\n";
    os << "binding";
    for (int b : state.pool.subset_of_student) os << " " << b;
    os << "\n";

    const Partition& part = state.partition;
    os << "partition " << part.K << " " << part.seed << " "
       << (part.mode == PartitionMode::uniform ? "uniform" : "stratified") << " " << hex_double(part.overlap)
       << " " << part.assignment.size() << "\n";
    os << "assignment";
    for (int a : part.assignment) os << " " << a;
    os << "\n";

    os << "counters_fwd";
    for (long long v : state.counters.forward_per_student) os << " " << v;
    os << "\n";
    os << "counters_bwd";
    for (long long v : state.counters.backward_per_student) os << " " << v;
    os << "\n";

    os << "rng_subgroup " << state.subgroup_rng.state() << "\n";

    const std::string payload = os.str();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint for writing: " + path);
    f << payload << "checksum " << fnv1a64(payload) << "\n";
    if (!f) throw DataError("checkpoint write failed: " + path);
}

namespace {

std::string read_and_verify(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    std::string whole = buf.str();
    const auto pos = whole.rfind("checksum ");
    if (pos == std::string::npos || pos == 0)
        throw IntegrityError("checkpoint '" + path + "': missing checksum line");
    const std::string payload = whole.substr(0, pos);
    std::istringstream tail(whole.substr(pos));
    std::string key;
    std::uint64_t stored = 0;
    tail >> key >> stored;
    if (key != "checksum" || tail.fail())
        throw IntegrityError("checkpoint '" + path + "': malformed checksum line");
    if (fnv1a64(payload) != stored)
        throw IntegrityError("checkpoint '" + path + "': checksum mismatch (file corrupt or truncated)");
    return payload;
}

} // namespace

std::uint64_t checkpoint_config_hash(const std::string& path) {
    const std::string payload = read_and_verify(path);
    std::istringstream is(payload);
    std::string line;
    std::getline(is, line);
    std::string key;
    std::uint64_t hash = 0;
    is >> key >> hash;
    if (key != "config_hash") throw IntegrityError("checkpoint '" + path + "': missing config_hash");
    return hash;
}

TrainerState checkpoint_load(const std::string& path, std::optional<std::uint64_t> expected_hash, bool force) {
    const std::string payload = read_and_verify(path);
    std::istringstream is(payload);
    std::string line, key;

    std::getline(is, line);
    if (line != "cgl-checkpoint v1") throw IntegrityError("checkpoint '" + path + "': unknown format tag");

    std::uint64_t stored_hash = 0;
    if (!(is >> key >> stored_hash) || key != "config_hash")
        throw IntegrityError("checkpoint: missing config_hash");
    if (expected_hash && *expected_hash != stored_hash && !force)
        throw ConfigError("checkpoint '" + path + "': config hash " + std::to_string(stored_hash) +
                          " does not match the current configuration " + std::to_string(*expected_hash) +
                          " (use force to override)");

    TrainerState st;
    if (!(is >> key >> st.epochs_done) || key != "epoch") throw IntegrityError("checkpoint: missing epoch");

    int L = 0, M = 0, in_dim = 0, width = 0, classes = 0;
    if (!(is >> key >> L >> M >> in_dim >> width >> classes) || key != "grid")
        throw IntegrityError("checkpoint: missing grid header");
    Rng dummy(0);
    st.grid = ModuleGrid::random_init(L, M, in_dim, std::max(width, 1), classes, dummy);
    st.grid.hidden_width = width;
    auto params = grid_params(st.grid);
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::string name;
        if (!(is >> key >> name) || key != "name") throw IntegrityError("checkpoint: missing parameter name");
        read_doubles(is, "param", *params[i], name.c_str());
    }

    if (!(is >> key >> st.adam.step_count) || key != "adam_step")
        throw IntegrityError("checkpoint: missing adam_step");
    std::string h1, h2, h3, h4;
    if (!(is >> key >> h1 >> h2 >> h3 >> h4) || key != "adam_config")
        throw IntegrityError("checkpoint: missing adam_config");
    st.adam.config.lr = parse_hex_double(h1, "adam lr");
    st.adam.config.beta1 = parse_hex_double(h2, "adam beta1");
    st.adam.config.beta2 = parse_hex_double(h3, "adam beta2");
    st.adam.config.epsilon = parse_hex_double(h4, "adam epsilon");
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.adam.first_moment.push_back(Tensor::zeros(params[i]->shape));
        st.adam.second_moment.push_back(Tensor::zeros(params[i]->shape));
        read_doubles(is, "adam_m", st.adam.first_moment[i], "adam m");
        read_doubles(is, "adam_v", st.adam.second_moment[i], "adam v");
    }

    std::getline(is, line); // finish current line
    std::getline(is, line);
    if (line != "pool-begin") throw IntegrityError("checkpoint: missing pool section");
    std::ostringstream pool_text;
    while (std::getline(is, line) && line != "pool-end") pool_text << line << "\n";
    if (line != "pool-end") throw IntegrityError("checkpoint: unterminated pool section");
    st.pool = pool_from_structure(parse_structure(pool_text.str()));

    if (!(is >> key) || key != "binding") throw IntegrityError("checkpoint: missing binding");
    for (int k = 0; k < st.pool.K; ++k)
        if (!(is >> st.pool.subset_of_student[static_cast<std::size_t>(k)]))
            throw IntegrityError("checkpoint: truncated binding");

    std::string mode_str, overlap_hex;
    std::size_t n = 0;
    if (!(is >> key >> st.partition.K >> st.partition.seed >> mode_str >> overlap_hex >> n) ||
        key != "partition")
        throw IntegrityError("checkpoint: missing partition header");
    st.partition.mode = mode_str == "stratified" ? PartitionMode::stratified : PartitionMode::uniform;
    st.partition.overlap = parse_hex_double(overlap_hex, "partition overlap");
    st.partition.assignment.resize(n);
    if (!(is >> key) || key != "assignment") throw IntegrityError("checkpoint: missing assignment");
    for (std::size_t i = 0; i < n; ++i)
        if (!(is >> st.partition.assignment[i])) throw IntegrityError("checkpoint: truncated assignment");
    st.partition.subsets.assign(static_cast<std::size_t>(st.partition.K), {});
    for (std::size_t i = 0; i < n; ++i) {
        const int a = st.partition.assignment[i];
        if (a < 1 || a > st.partition.K) throw IntegrityError("checkpoint: assignment value out of range");
        st.partition.subsets[static_cast<std::size_t>(a - 1)].push_back(static_cast<int>(i));
    }
    st.partition.student_indices = st.partition.subsets;
    if (st.partition.overlap > 0.0) {
        // Overlap extras are a pure function of (seed, assignment); rebuild.
        Rng orng(mix_seed(st.partition.seed, "partition-overlap"));
        for (int k = 0; k < st.partition.K; ++k) {
            auto& mine = st.partition.student_indices[static_cast<std::size_t>(k)];
            const auto extra = static_cast<std::size_t>(
                std::llround(st.partition.overlap *
                             static_cast<double>(st.partition.subsets[static_cast<std::size_t>(k)].size())));
            std::vector<int> others;
            for (std::size_t i = 0; i < n; ++i)
                if (st.partition.assignment[i] != k + 1) others.push_back(static_cast<int>(i));
            orng.shuffle(others);
            for (std::size_t e = 0; e < extra && e < others.size(); ++e) mine.push_back(others[e]);
            std::sort(mine.begin(), mine.end());
        }
    }

    st.counters.reset(st.pool.K);
    if (!(is >> key) || key != "counters_fwd") throw IntegrityError("checkpoint: missing counters");
    for (int k = 0; k < st.pool.K; ++k) is >> st.counters.forward_per_student[static_cast<std::size_t>(k)];
    if (!(is >> key) || key != "counters_bwd") throw IntegrityError("checkpoint: missing counters");
    for (int k = 0; k < st.pool.K; ++k) is >> st.counters.backward_per_student[static_cast<std::size_t>(k)];
    if (is.fail()) throw IntegrityError("checkpoint: truncated counters");

    if (!(is >> key) || key != "rng_subgroup") throw IntegrityError("checkpoint: missing rng state");
    std::getline(is, line);
    st.subgroup_rng.set_state(line);

    return st;
}

} // namespace cgl
