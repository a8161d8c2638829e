#include "fewbench/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "fewbench/common.hpp"
#include "fewbench/rng.hpp"

namespace fewbench {

const char* split_name(Split s) {
    switch (s) {
        case Split::base: return "base";
        case Split::validation: return "validation";
        case Split::novel: return "novel";
        default: return "unassigned";
    }
}

size_t DatasetStore::input_dim() const {
    return features.rank() == 2 ? features.cols() : 0;
}

std::vector<uint32_t> DatasetStore::classes_in(Split s) const {
    std::vector<uint32_t> out;
    for (uint32_t c = 0; c < n_classes; ++c) {
        if (split_of_class[c] == s) {
            out.push_back(c);
        }
    }
    return out;
}

std::vector<uint32_t> DatasetStore::samples_of_class(uint32_t c) const {
    std::vector<uint32_t> out;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == c) {
            out.push_back(static_cast<uint32_t>(i));
        }
    }
    return out;
}

std::vector<uint32_t> DatasetStore::sample_indices_in(Split s) const {
    std::vector<uint32_t> out;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (split_of_class[labels[i]] == s) {
            out.push_back(static_cast<uint32_t>(i));
        }
    }
    return out;
}

Tensor DatasetStore::gather_rows(const std::vector<uint32_t>& indices) const {
    const size_t d = input_dim();
    Tensor out({indices.size(), d});
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= n_samples()) {
            throw DimensionError("gather_rows: sample index " + std::to_string(indices[i]) +
                                 " out of range");
        }
        std::memcpy(out.data() + i * d, features.data() + indices[i] * d,
                    d * sizeof(double));
    }
    return out;
}

void DatasetStore::validate() const {
    if (features.rank() != 2) {
        throw DataFormatError("dataset features must be rank-2");
    }
    if (features.rows() != labels.size()) {
        throw DimensionError("dataset: " + std::to_string(features.rows()) +
                             " feature rows vs " + std::to_string(labels.size()) + " labels");
    }
    if (split_of_class.size() != n_classes) {
        throw DimensionError("dataset: split map covers " +
                             std::to_string(split_of_class.size()) + " of " +
                             std::to_string(n_classes) + " classes");
    }
    for (uint32_t label : labels) {
        if (label >= n_classes) {
            throw DataFormatError("dataset: label " + std::to_string(label) +
                                  " out of range [0, " + std::to_string(n_classes) + ")");
        }
    }
}

DatasetStore generate_synthetic(uint32_t n_classes, uint32_t samples_per_class,
                                uint32_t input_dim, double cluster_spread,
                                uint64_t seed, uint32_t mean_dim,
                                double nuisance_spread) {
    if (n_classes == 0 || samples_per_class == 0 || input_dim == 0) {
        throw UsageError("generate_synthetic: counts must be positive");
    }
    if (cluster_spread < 0.0) {
        throw UsageError("generate_synthetic: cluster_spread must be >= 0");
    }
    if (nuisance_spread < 0.0) {
        nuisance_spread = cluster_spread;
    }
    if (mean_dim == 0) {
        mean_dim = input_dim;
    }
    if (mean_dim > input_dim) {
        throw UsageError("generate_synthetic: mean_dim " + std::to_string(mean_dim) +
                         " exceeds input_dim " + std::to_string(input_dim));
    }

    DatasetStore store;
    store.n_classes = n_classes;
    store.split_of_class.assign(n_classes, Split::unassigned);
    store.features = Tensor({static_cast<size_t>(n_classes) * samples_per_class, input_dim});
    store.labels.resize(static_cast<size_t>(n_classes) * samples_per_class);

    std::vector<double> mean(input_dim, 0.0);
    for (uint32_t c = 0; c < n_classes; ++c) {
        RngStream stream(derive_seed(seed, "synth-class", {c}));
        double norm = 0.0;
        do {
            norm = 0.0;
            for (uint32_t i = 0; i < mean_dim; ++i) {
                mean[i] = stream.next_gaussian();
                norm += mean[i] * mean[i];
            }
            norm = std::sqrt(norm);
        } while (norm < 1e-12);
        for (uint32_t i = 0; i < mean_dim; ++i) {
            mean[i] /= norm;
        }

        for (uint32_t s = 0; s < samples_per_class; ++s) {
            const size_t row = static_cast<size_t>(c) * samples_per_class + s;
            store.labels[row] = c;
            double* f = store.features.data() + row * input_dim;
            for (uint32_t i = 0; i < input_dim; ++i) {
                const double spread = i < mean_dim ? cluster_spread : nuisance_spread;
                f[i] = mean[i] + spread * stream.next_gaussian();
            }
        }
    }
    return store;
}

DatasetStore split_dataset(DatasetStore store, uint32_t n_base, uint32_t n_val,
                           uint32_t n_novel, uint64_t seed) {
    const uint64_t total =
        static_cast<uint64_t>(n_base) + n_val + n_novel;
    if (total != store.n_classes) {
        throw UsageError("split_dataset: " + std::to_string(n_base) + "+" +
                         std::to_string(n_val) + "+" + std::to_string(n_novel) + " = " +
                         std::to_string(total) + " != " + std::to_string(store.n_classes) +
                         " classes");
    }
    std::vector<uint32_t> perm(store.n_classes);
    std::iota(perm.begin(), perm.end(), 0u);
    RngStream stream(derive_seed(seed, "split"));
    stream.shuffle(perm);

    store.split_of_class.assign(store.n_classes, Split::unassigned);
    for (uint32_t i = 0; i < store.n_classes; ++i) {
        Split s = i < n_base               ? Split::base
                  : i < n_base + n_val     ? Split::validation
                                           : Split::novel;
        store.split_of_class[perm[i]] = s;
    }
    return store;
}

namespace {

constexpr char kDatasetMagic[8] = {'F', 'B', 'D', 'A', 'T', 'A', '0', '\n'};
constexpr uint32_t kDatasetVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
}

}  // namespace

void save_dataset(const std::string& path, const DatasetStore& store) {
    store.validate();
    std::string out;
    out.reserve(24 + store.n_samples() * (4 + 8 * store.input_dim()));
    out.append(kDatasetMagic, sizeof(kDatasetMagic));
    put_u32(out, kDatasetVersion);
    put_u32(out, static_cast<uint32_t>(store.n_samples()));
    put_u32(out, static_cast<uint32_t>(store.input_dim()));
    put_u32(out, store.n_classes);
    const size_t d = store.input_dim();
    for (size_t i = 0; i < store.n_samples(); ++i) {
        put_u32(out, store.labels[i]);
        const double* row = store.features.data() + i * d;
        for (size_t j = 0; j < d; ++j) {
            put_f64(out, row[j]);
        }
    }
    write_file_atomic(path, out);
}

DatasetStore load_dataset(const std::string& path) {
    const std::string bytes = read_file(path);
    size_t off = 0;
    auto need = [&](size_t n, const char* what) {
        if (off + n > bytes.size()) {
            throw DataFormatError(path + ": truncated while reading " + what +
                                  " at byte offset " + std::to_string(off));
        }
    };
    auto get_u32 = [&](const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
        }
        off += 4;
        return v;
    };
    auto get_f64 = [&](const char* what) {
        need(8, what);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            bits |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
        }
        off += 8;
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    };

    need(sizeof(kDatasetMagic), "magic");
    if (std::memcmp(bytes.data(), kDatasetMagic, sizeof(kDatasetMagic)) != 0) {
        throw DataFormatError(path + ": bad dataset magic at byte offset 0");
    }
    off += sizeof(kDatasetMagic);
    const uint32_t version = get_u32("version");
    if (version != kDatasetVersion) {
        throw DataFormatError(path + ": unknown dataset version " + std::to_string(version));
    }
    const uint32_t n = get_u32("sample count");
    const uint32_t dim = get_u32("feature dim");
    const uint32_t n_classes = get_u32("class count");
    if (dim == 0) {
        throw DimensionError(path + ": header declares zero feature dim");
    }

    DatasetStore store;
    store.n_classes = n_classes;
    store.split_of_class.assign(n_classes, Split::unassigned);
    store.features = Tensor({n, dim});
    store.labels.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
        const uint32_t label = get_u32("label");
        if (label >= n_classes) {
            throw DataFormatError(path + ": label " + std::to_string(label) +
                                  " out of range [0, " + std::to_string(n_classes) +
                                  ") at byte offset " + std::to_string(off - 4));
        }
        store.labels[i] = label;
        double* row = store.features.data() + static_cast<size_t>(i) * dim;
        for (uint32_t j = 0; j < dim; ++j) {
            row[j] = get_f64("feature");
        }
    }
    if (off != bytes.size()) {
        throw DataFormatError(path + ": trailing bytes at offset " + std::to_string(off));
    }
    return store;
}

DatasetStore import_csv(const std::string& path) {
    const std::string bytes = read_file(path);
    std::istringstream in(bytes);
    std::string line;
    if (!std::getline(in, line)) {
        throw DataFormatError(path + ": empty CSV, header row required");
    }
    // header: label,f1,...,fd
    {
        std::istringstream header(line);
        std::string field;
        if (!std::getline(header, field, ',') || field != "label") {
            throw DataFormatError(path + ": CSV header must start with 'label', got '" +
                                  field + "'");
        }
    }
    const size_t dim = static_cast<size_t>(std::count(line.begin(), line.end(), ','));
    if (dim == 0) {
        throw DataFormatError(path + ": CSV header declares no feature columns");
    }

    std::vector<uint32_t> labels;
    std::vector<double> values;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream row(line);
        std::string field;
        if (!std::getline(row, field, ',')) {
            throw DataFormatError(path + ": malformed row at line " + std::to_string(line_no));
        }
        try {
            const unsigned long label = std::stoul(field);
            if (field.find('-') != std::string::npos || label > 100000000ul) {
                throw std::out_of_range("label");
            }
            labels.push_back(static_cast<uint32_t>(label));
        } catch (const std::exception&) {
            throw DataFormatError(path + ": bad label '" + field + "' at line " +
                                  std::to_string(line_no));
        }
        size_t count = 0;
        while (std::getline(row, field, ',')) {
            try {
                values.push_back(std::stod(field));
            } catch (const std::exception&) {
                throw DataFormatError(path + ": bad feature '" + field + "' at line " +
                                      std::to_string(line_no));
            }
            ++count;
        }
        if (count != dim) {
            throw DimensionError(path + ": row at line " + std::to_string(line_no) + " has " +
                                 std::to_string(count) + " features, header declares " +
                                 std::to_string(dim));
        }
    }

    DatasetStore store;
    store.labels = std::move(labels);
    store.n_classes =
        store.labels.empty() ? 0 : *std::max_element(store.labels.begin(), store.labels.end()) + 1;
    store.split_of_class.assign(store.n_classes, Split::unassigned);
    store.features = Tensor({store.labels.size(), dim}, std::move(values));
    return store;
}

}  // namespace fewbench
