#include "cgl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cgl/error.hpp"

namespace cgl {

void Dataset::validate() const {
    if (features.rank() != 2) throw DataError("dataset '" + name + "': features must be rank-2");
    if (static_cast<int>(labels.size()) != n())
        throw DataError("dataset '" + name + "': " + std::to_string(n()) + " rows but " +
                        std::to_string(labels.size()) + " labels");
    if (num_classes < 1) throw DataError("dataset '" + name + "': class count must be >= 1");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 1 || labels[i] > num_classes)
            throw DataError("dataset '" + name + "': label " + std::to_string(labels[i]) + " at row " +
                            std::to_string(i) + " outside [1.." + std::to_string(num_classes) + "]");
    if (!features.all_finite()) throw DataError("dataset '" + name + "': non-finite feature value");
}

Dataset Dataset::subset(const std::vector<int>& rows) const {
    Dataset out;
    out.num_classes = num_classes;
    out.name = name;
    const int d = dim();
    out.features = Tensor::zeros({static_cast<int>(rows.size()), d});
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int r = rows[i];
        for (int j = 0; j < d; ++j) out.features.at(static_cast<int>(i), j) = features.at(r, j);
        out.labels.push_back(labels[static_cast<std::size_t>(r)]);
    }
    return out;
}

const std::vector<int>& Partition::indices_for(int subset_1based) const {
    if (subset_1based < 1 || subset_1based > K)
        throw UsageError("partition: subset " + std::to_string(subset_1based) + " outside [1.." +
                         std::to_string(K) + "]");
    return student_indices[static_cast<std::size_t>(subset_1based - 1)];
}

Partition make_partition(const Dataset& data, int K, std::uint64_t seed, PartitionMode mode, double overlap) {
    const int n = data.n();
    if (K < 1) throw ConfigError("partition: K must be >= 1");
    if (K > n) throw ConfigError("partition: K=" + std::to_string(K) + " exceeds N=" + std::to_string(n));
    if (overlap < 0.0 || overlap >= 1.0) throw ConfigError("partition: overlap must be in [0,1)");

    Partition part;
    part.K = K;
    part.seed = seed;
    part.mode = mode;
    part.overlap = overlap;
    part.assignment.assign(static_cast<std::size_t>(n), 0);

    Rng rng(mix_seed(seed, "partition"));
    if (mode == PartitionMode::uniform) {
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (int i = 0; i < n; ++i) part.assignment[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i % K + 1;
    } else {
        // Round-robin within each class keeps per-class counts within 1.
        std::vector<std::vector<int>> by_class(static_cast<std::size_t>(data.num_classes));
        for (int i = 0; i < n; ++i) by_class[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)] - 1)].push_back(i);
        int next = 0;
        for (auto& rows : by_class) {
            rng.shuffle(rows);
            for (int r : rows) {
                part.assignment[static_cast<std::size_t>(r)] = next % K + 1;
                ++next;
            }
        }
    }

    part.subsets.assign(static_cast<std::size_t>(K), {});
    for (int i = 0; i < n; ++i) part.subsets[static_cast<std::size_t>(part.assignment[static_cast<std::size_t>(i)] - 1)].push_back(i);
    for (const auto& s : part.subsets)
        if (s.empty()) throw ConfigError("partition: produced an empty subset (N too small for K)");

    part.student_indices = part.subsets;
    if (overlap > 0.0) {
        Rng orng(mix_seed(seed, "partition-overlap"));
        for (int k = 0; k < K; ++k) {
            auto& mine = part.student_indices[static_cast<std::size_t>(k)];
            const auto extra =
                static_cast<std::size_t>(std::llround(overlap * static_cast<double>(part.subsets[static_cast<std::size_t>(k)].size())));
            std::vector<int> others;
            others.reserve(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i)
                if (part.assignment[static_cast<std::size_t>(i)] != k + 1) others.push_back(i);
            orng.shuffle(others);
            for (std::size_t e = 0; e < extra && e < others.size(); ++e) mine.push_back(others[e]);
            std::sort(mine.begin(), mine.end());
        }
    }
    return part;
}

std::pair<Dataset, Dataset> holdout_split(const Dataset& data, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0) || !(fraction < 1.0)) throw ConfigError("holdout_split: fraction must be in (0,1)");
    const int n = data.n();
    const auto n_hold = static_cast<int>(std::llround(fraction * static_cast<double>(n)));
    if (n_hold < 1 || n_hold >= n) throw ConfigError("holdout_split: fraction leaves an empty split");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, "holdout"));
    rng.shuffle(order);
    std::vector<int> hold(order.begin(), order.begin() + n_hold);
    std::vector<int> train(order.begin() + n_hold, order.end());
    std::sort(hold.begin(), hold.end());
    std::sort(train.begin(), train.end());
    Dataset tr = data.subset(train);
    Dataset ho = data.subset(hold);
    ho.name = data.name + "/holdout";
    return {std::move(tr), std::move(ho)};
}

Dataset synth_blobs(int n_per_class, int C, int d, double spread, std::uint64_t seed) {
    if (n_per_class < 1 || C < 1 || d < 1) throw ConfigError("synth_blobs: counts must be >= 1");
    if (!(spread > 0.0)) throw ConfigError("synth_blobs: spread must be > 0");
    Dataset out;
    out.num_classes = C;
    out.name = "blobs";
    const int n = n_per_class * C;
    out.features = Tensor::zeros({n, d});
    out.labels.reserve(static_cast<std::size_t>(n));
    Rng rng(mix_seed(seed, "blobs"));
    int row = 0;
    for (int c = 0; c < C; ++c) {
        std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
        if (d == 1) {
            mean[0] = kBlobRadius * static_cast<double>(c);
        } else {
            const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(C);
            mean[0] = kBlobRadius * std::cos(angle);
            mean[1] = kBlobRadius * std::sin(angle);
        }
        for (int i = 0; i < n_per_class; ++i, ++row) {
            for (int j = 0; j < d; ++j)
                out.features.at(row, j) = mean[static_cast<std::size_t>(j)] + spread * rng.gaussian();
            out.labels.push_back(c + 1);
        }
    }
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

double parse_cell(const std::string& cell, int row, const std::string& col) {
    double v = 0.0;
    const char* b = cell.data();
    const char* e = b + cell.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t')) --e;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e)
        throw ParseError("csv row " + std::to_string(row) + ", column '" + col + "': non-numeric cell '" +
                         cell + "'");
    return v;
}

} // namespace

Dataset load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open csv file: " + path);
    std::string line;
    if (!std::getline(f, line)) throw ParseError("csv '" + path + "': missing header row");
    const std::vector<std::string> header = split_csv_line(line);
    int label_idx = -1;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_idx = static_cast<int>(i);
    if (label_idx < 0) throw ParseError("csv '" + path + "': no column named '" + label_column + "' in header");

    std::vector<double> feats;
    std::vector<int> labels;
    const int d = static_cast<int>(header.size()) - 1;
    if (d < 1) throw ParseError("csv '" + path + "': no feature columns");
    int row = 0;
    while (std::getline(f, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw ParseError("csv row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                             " cells, got " + std::to_string(cells.size()));
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (static_cast<int>(i) == label_idx) {
                const double lv = parse_cell(cells[i], row, header[i]);
                const int li = static_cast<int>(std::llround(lv));
                if (static_cast<double>(li) != lv)
                    throw ParseError("csv row " + std::to_string(row) + ": label '" + cells[i] +
                                     "' is not an integer");
                labels.push_back(li);
            } else {
                feats.push_back(parse_cell(cells[i], row, header[i]));
            }
        }
    }
    if (labels.empty()) throw DataError("csv '" + path + "': no data rows");

    Dataset out;
    out.name = path;
    out.features = Tensor({static_cast<int>(labels.size()), d}, std::move(feats));
    out.labels = std::move(labels);
    int mx = 0;
    for (int l : out.labels) {
        if (l < 1)
            throw DataError("csv '" + path + "': label " + std::to_string(l) + " below 1 (labels are 1-based)");
        mx = std::max(mx, l);
    }
    out.num_classes = mx;
    out.validate();
    return out;
}

void write_csv(const Dataset& data, const std::string& path, const std::string& label_column) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open csv file for writing: " + path);
    const int d = data.dim();
    for (int j = 0; j < d; ++j) f << "f" << j << ",";
    f << label_column << "\n";
    char buf[64];
    for (int i = 0; i < data.n(); ++i) {
        for (int j = 0; j < d; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", data.features.at(i, j));
            f << buf << ",";
        }
        f << data.labels[static_cast<std::size_t>(i)] << "\n";
    }
    if (!f) throw DataError("write failed: " + path);
}

namespace {

std::uint32_t read_be32(std::istream& s, const std::string& path, const char* what) {
    unsigned char b[4];
    s.read(reinterpret_cast<char*>(b), 4);
    if (!s)
        throw ParseError("idx '" + path + "': truncated while reading " + std::string(what) + " at byte offset " +
                         std::to_string(static_cast<long long>(s.tellg())));
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

} // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw DataError("cannot open idx image file: " + images_path);
    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw DataError("cannot open idx label file: " + labels_path);

    const std::uint32_t magic_i = read_be32(fi, images_path, "magic");
    if (magic_i != 0x00000803u)
        throw ParseError("idx '" + images_path + "': bad image magic 0x" + [&] {
            char b[16];
            std::snprintf(b, sizeof b, "%08x", magic_i);
            return std::string(b);
        }() + ", expected 0x00000803");
    const std::uint32_t n = read_be32(fi, images_path, "count");
    const std::uint32_t rows = read_be32(fi, images_path, "rows");
    const std::uint32_t cols = read_be32(fi, images_path, "cols");

    const std::uint32_t magic_l = read_be32(fl, labels_path, "magic");
    if (magic_l != 0x00000801u) throw ParseError("idx '" + labels_path + "': bad label magic, expected 0x00000801");
    const std::uint32_t nl = read_be32(fl, labels_path, "count");
    if (n != nl)
        throw DataError("idx pair: " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");

    const std::size_t pixels = static_cast<std::size_t>(n) * rows * cols;
    std::vector<unsigned char> raw(pixels);
    fi.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels));
    if (!fi) throw ParseError("idx '" + images_path + "': truncated pixel payload");
    std::vector<unsigned char> rawl(n);
    fl.read(reinterpret_cast<char*>(rawl.data()), static_cast<std::streamsize>(n));
    if (!fl) throw ParseError("idx '" + labels_path + "': truncated label payload");

    Dataset out;
    out.name = images_path;
    out.features = Tensor::zeros({static_cast<int>(n), static_cast<int>(rows * cols)});
    for (std::size_t i = 0; i < pixels; ++i) out.features.data[i] = static_cast<double>(raw[i]) / 255.0;
    out.labels.reserve(n);
    int mx = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        const int l = static_cast<int>(rawl[i]) + 1; // stored 0-based
        out.labels.push_back(l);
        mx = std::max(mx, l);
    }
    out.num_classes = mx;
    out.validate();
    return out;
}

std::vector<std::vector<int>> batches(const std::vector<int>& indices, int batch_size, std::uint64_t seed,
                                      int epoch) {
    if (batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
    if (indices.empty()) throw ConfigError("batches: empty subset");
    std::vector<int> order = indices;
    Rng rng(mix_seed(mix_seed(seed, "batches"), static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    std::vector<std::vector<int>> out;
    out.reserve(order.size() / static_cast<std::size_t>(batch_size) + 1);
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

std::vector<std::vector<int>> batches(const Dataset& data, const Partition* part, std::optional<int> subset,
                                      int batch_size, std::uint64_t seed, int epoch) {
    if (subset.has_value()) {
        if (!part) throw UsageError("batches: subset selector requires a partition");
        return batches(part->indices_for(*subset), batch_size, seed, epoch);
    }
    std::vector<int> all(static_cast<std::size_t>(data.n()));
    std::iota(all.begin(), all.end(), 0);
    return batches(all, batch_size, seed, epoch);
}

} // namespace cgl
