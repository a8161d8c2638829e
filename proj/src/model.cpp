#include "fewbench/model.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "fewbench/common.hpp"
#include "fewbench/rng.hpp"

namespace fewbench {

namespace {

constexpr double kNormFloor = 1e-12;

double row_norm(const double* row, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) {
        s += row[i] * row[i];
    }
    return std::sqrt(s);
}

}  // namespace

void BackboneConfig::validate() const {
    if (input_dim == 0) {
        throw UsageError("backbone input_dim must be >= 1");
    }
    if (group_dims.empty()) {
        throw UsageError("backbone needs at least one group");
    }
    for (size_t d : group_dims) {
        if (d == 0) {
            throw UsageError("backbone group widths must be >= 1");
        }
    }
    if (layers_per_group == 0) {
        throw UsageError("layers_per_group must be >= 1");
    }
}

Tensor BackboneModel::forward(const Tensor& batch) const {
    if (batch.rank() != 2 || batch.cols() != config.input_dim) {
        throw DimensionError("backbone forward: batch width " +
                             std::to_string(batch.rank() == 2 ? batch.cols() : 0) +
                             " != input_dim " + std::to_string(config.input_dim));
    }
    Tensor x = batch;
    for (const auto& group : groups) {
        for (const auto& layer : group) {
            x = relu(affine_forward(x, layer.weight.value, layer.bias.value));
        }
    }
    return x;
}

ForwardTrace BackboneModel::forward_trace(const Tensor& batch) const {
    if (batch.rank() != 2 || batch.cols() != config.input_dim) {
        throw DimensionError("backbone forward: batch width " +
                             std::to_string(batch.rank() == 2 ? batch.cols() : 0) +
                             " != input_dim " + std::to_string(config.input_dim));
    }
    ForwardTrace trace;
    Tensor x = batch;
    for (const auto& group : groups) {
        for (const auto& layer : group) {
            trace.layer_inputs.push_back(x);
            Tensor pre = affine_forward(x, layer.weight.value, layer.bias.value);
            x = relu(pre);
            trace.preacts.push_back(std::move(pre));
        }
    }
    trace.features = x;
    return trace;
}

void BackboneModel::backward(const ForwardTrace& trace, const Tensor& feature_grad) {
    size_t lowest_learnable = groups.size();
    for (size_t g = 0; g < groups.size(); ++g) {
        if (!group_frozen[g]) {
            lowest_learnable = g;
            break;
        }
    }
    if (lowest_learnable == groups.size()) {
        return;  // everything frozen
    }

    const size_t lpg = config.layers_per_group;
    Tensor g_out = feature_grad;
    for (size_t gi = groups.size(); gi-- > lowest_learnable;) {
        auto& group = groups[gi];
        for (size_t li = group.size(); li-- > 0;) {
            const size_t flat = gi * lpg + li;
            DenseLayer& layer = group[li];
            Tensor g_pre = relu_backward(trace.preacts[flat], g_out);
            AffineGrads ag =
                affine_backward(trace.layer_inputs[flat], layer.weight.value, g_pre);
            if (!group_frozen[gi]) {
                for (size_t i = 0; i < ag.weight.size(); ++i) {
                    layer.weight.grad[i] += ag.weight[i];
                }
                for (size_t i = 0; i < ag.bias.size(); ++i) {
                    layer.bias.grad[i] += ag.bias[i];
                }
            }
            g_out = std::move(ag.input);
        }
    }
}

void BackboneModel::set_group_frozen(size_t group, bool frozen) {
    group_frozen[group] = frozen;
    for (DenseLayer& layer : groups[group]) {
        layer.weight.frozen = frozen;
        layer.bias.frozen = frozen;
    }
}

std::vector<Param*> BackboneModel::all_params() {
    std::vector<Param*> out;
    for (auto& group : groups) {
        for (DenseLayer& layer : group) {
            out.push_back(&layer.weight);
            out.push_back(&layer.bias);
        }
    }
    return out;
}

std::vector<Param*> BackboneModel::learnable_params() {
    std::vector<Param*> out;
    for (size_t g = 0; g < groups.size(); ++g) {
        if (group_frozen[g]) {
            continue;
        }
        for (DenseLayer& layer : groups[g]) {
            out.push_back(&layer.weight);
            out.push_back(&layer.bias);
        }
    }
    return out;
}

CosineHead::CosineHead(Tensor weight_matrix, double scale_value)
    : weights(std::move(weight_matrix)), scale(scale_value) {
    if (weights.value.rank() != 2) {
        throw DimensionError("cosine head weights must be rank-2");
    }
    if (!(scale > 0.0)) {
        throw UsageError("cosine head scale must be > 0");
    }
}

Tensor CosineHead::logits(const Tensor& features) const {
    if (features.rank() != 2 || features.cols() != feature_dim()) {
        throw DimensionError("cosine head: feature width " +
                             std::to_string(features.rank() == 2 ? features.cols() : 0) +
                             " != head dim " + std::to_string(feature_dim()));
    }
    const size_t batch = features.rows();
    const size_t d = feature_dim();
    const size_t n = n_classes();

    std::vector<double> w_norms(n);
    for (size_t c = 0; c < n; ++c) {
        w_norms[c] = row_norm(weights.value.data() + c * d, d);
        if (w_norms[c] < kNormFloor) {
            throw DegenerateInputError("cosine head: weight row " + std::to_string(c) +
                                       " has zero norm");
        }
    }

    Tensor out({batch, n});
    for (size_t b = 0; b < batch; ++b) {
        const double* f = features.data() + b * d;
        const double fn = row_norm(f, d);
        if (fn < kNormFloor) {
            throw DegenerateInputError("cosine head: feature row " + std::to_string(b) +
                                       " has zero norm");
        }
        for (size_t c = 0; c < n; ++c) {
            const double* w = weights.value.data() + c * d;
            double dot = 0.0;
            for (size_t i = 0; i < d; ++i) {
                dot += f[i] * w[i];
            }
            out(b, c) = scale * dot / (fn * w_norms[c]);
        }
    }
    return out;
}

Tensor CosineHead::backward(const Tensor& features, const Tensor& upstream) {
    const size_t batch = features.rows();
    const size_t d = feature_dim();
    const size_t n = n_classes();
    if (upstream.rows() != batch || upstream.cols() != n) {
        throw DimensionError("cosine head backward: upstream shape mismatch");
    }

    std::vector<double> w_norms(n);
    for (size_t c = 0; c < n; ++c) {
        w_norms[c] = row_norm(weights.value.data() + c * d, d);
        if (w_norms[c] < kNormFloor) {
            throw DegenerateInputError("cosine head: weight row " + std::to_string(c) +
                                       " has zero norm");
        }
    }

    Tensor grad_features({batch, d});
    for (size_t b = 0; b < batch; ++b) {
        const double* f = features.data() + b * d;
        const double fn = row_norm(f, d);
        if (fn < kNormFloor) {
            throw DegenerateInputError("cosine head: feature row " + std::to_string(b) +
                                       " has zero norm");
        }
        double* gf = grad_features.data() + b * d;
        for (size_t c = 0; c < n; ++c) {
            const double up = upstream(b, c);
            if (up == 0.0) {
                continue;
            }
            const double* w = weights.value.data() + c * d;
            const double wn = w_norms[c];
            double dot = 0.0;
            for (size_t i = 0; i < d; ++i) {
                dot += f[i] * w[i];
            }
            const double cosv = dot / (fn * wn);
            // d logit / d f = s/|f| * (w/|w| - cos * f/|f|)
            const double cf = up * scale / fn;
            for (size_t i = 0; i < d; ++i) {
                gf[i] += cf * (w[i] / wn - cosv * f[i] / fn);
            }
            if (!weights.frozen) {
                double* gw = weights.grad.data() + c * d;
                const double cw = up * scale / wn;
                for (size_t i = 0; i < d; ++i) {
                    gw[i] += cw * (f[i] / fn - cosv * w[i] / wn);
                }
            }
        }
    }
    return grad_features;
}

void set_adaptability(BackboneModel& model, CosineHead& head, AdaptabilityLevel level) {
    const size_t g = model.n_groups();
    if (level.learnable_groups > g) {
        throw UsageError("adaptability level " + std::to_string(level.learnable_groups) +
                         " out of range [0, " + std::to_string(g) + "]");
    }
    const size_t first_learnable = g - level.learnable_groups;
    for (size_t i = 0; i < g; ++i) {
        model.set_group_frozen(i, i < first_learnable);
    }
    head.weights.frozen = false;
}

std::pair<BackboneModel, CosineHead> init_model(const BackboneConfig& config,
                                                size_t n_classes, double head_scale,
                                                uint64_t seed) {
    config.validate();
    if (n_classes == 0) {
        throw UsageError("init_model: n_classes must be >= 1");
    }
    RngStream stream(derive_seed(seed, "model-init"));

    BackboneModel model;
    model.config = config;
    model.group_frozen.assign(config.n_groups(), false);
    size_t d_in = config.input_dim;
    for (size_t g = 0; g < config.n_groups(); ++g) {
        std::vector<DenseLayer> group;
        for (size_t l = 0; l < config.layers_per_group; ++l) {
            const size_t d_out = config.group_dims[g];
            const double bound = std::sqrt(1.0 / static_cast<double>(d_in));
            Tensor w({d_in, d_out});
            for (size_t i = 0; i < w.size(); ++i) {
                w[i] = stream.next_uniform_sym(bound);
            }
            group.push_back(DenseLayer{Param(std::move(w)), Param(Tensor({d_out}))});
            d_in = d_out;
        }
        model.groups.push_back(std::move(group));
    }

    CosineHead head = init_cosine_head(n_classes, config.feature_dim(), head_scale, stream);
    return {std::move(model), std::move(head)};
}

CosineHead init_cosine_head(size_t n_classes, size_t feature_dim, double scale,
                            RngStream& stream) {
    if (n_classes == 0 || feature_dim == 0) {
        throw UsageError("init_cosine_head: n_classes and feature_dim must be >= 1");
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(feature_dim));
    Tensor hw({n_classes, feature_dim});
    for (size_t c = 0; c < n_classes; ++c) {
        double* row = hw.data() + c * feature_dim;
        do {
            for (size_t i = 0; i < feature_dim; ++i) {
                row[i] = stream.next_uniform_sym(bound);
            }
        } while (row_norm(row, feature_dim) < kNormFloor);
    }
    return CosineHead(std::move(hw), scale);
}

BackboneModel clone_frozen_reference(const BackboneModel& model) {
    BackboneModel copy = model;
    for (size_t g = 0; g < copy.n_groups(); ++g) {
        copy.set_group_frozen(g, true);
    }
    return copy;
}

BackboneModel clone_for_finetuning(const BackboneModel& model) {
    BackboneModel copy = model;
    for (Param* p : copy.all_params()) {
        p->reset_optimizer_state();
    }
    return copy;
}

namespace {

constexpr char kCheckpointMagic[8] = {'F', 'B', 'C', 'K', 'P', 'T', '0', '\n'};
constexpr uint32_t kCheckpointVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(out, bits);
}

class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string path)
        : bytes_(bytes), path_(std::move(path)) {}

    size_t offset() const { return offset_; }

    void expect(size_t n, const char* what) const {
        if (offset_ + n > bytes_.size()) {
            throw DataFormatError(path_ + ": truncated while reading " + what +
                                  " at byte offset " + std::to_string(offset_));
        }
    }

    uint32_t u32(const char* what) {
        expect(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes_[offset_ + i])) << (8 * i);
        }
        offset_ += 4;
        return v;
    }

    uint64_t u64(const char* what) {
        expect(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes_[offset_ + i])) << (8 * i);
        }
        offset_ += 8;
        return v;
    }

    double f64(const char* what) {
        const uint64_t bits = u64(what);
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }

    void raw(char* dst, size_t n, const char* what) {
        expect(n, what);
        std::memcpy(dst, bytes_.data() + offset_, n);
        offset_ += n;
    }

    bool at_end() const { return offset_ == bytes_.size(); }

    const std::string& path() const { return path_; }

private:
    std::string_view bytes_;
    std::string path_;
    size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const BackboneModel& model, uint64_t seed) {
    std::string out;
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<uint32_t>(model.config.input_dim));
    put_u32(out, static_cast<uint32_t>(model.config.n_groups()));
    put_u32(out, static_cast<uint32_t>(model.config.layers_per_group));
    for (size_t d : model.config.group_dims) {
        put_u32(out, static_cast<uint32_t>(d));
    }
    put_u64(out, seed);
    for (const auto& group : model.groups) {
        for (const auto& layer : group) {
            for (double v : layer.weight.value.values()) {
                put_f64(out, v);
            }
            for (double v : layer.bias.value.values()) {
                put_f64(out, v);
            }
        }
    }
    write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string bytes = read_file(path);
    ByteReader in(bytes, path);

    char magic[8];
    in.raw(magic, sizeof(magic), "magic");
    if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw DataFormatError(path + ": bad checkpoint magic at byte offset 0");
    }
    const uint32_t version = in.u32("version");
    if (version != kCheckpointVersion) {
        throw DataFormatError(path + ": unknown checkpoint version " + std::to_string(version));
    }

    BackboneConfig config;
    config.input_dim = in.u32("input_dim");
    const uint32_t n_groups = in.u32("n_groups");
    config.layers_per_group = in.u32("layers_per_group");
    config.group_dims.clear();
    for (uint32_t g = 0; g < n_groups; ++g) {
        config.group_dims.push_back(in.u32("group_dim"));
    }
    config.validate();

    Checkpoint ckpt;
    ckpt.seed = in.u64("seed");
    BackboneModel& model = ckpt.backbone;
    model.config = config;
    model.group_frozen.assign(n_groups, false);
    size_t d_in = config.input_dim;
    for (uint32_t g = 0; g < n_groups; ++g) {
        std::vector<DenseLayer> group;
        for (size_t l = 0; l < config.layers_per_group; ++l) {
            const size_t d_out = config.group_dims[g];
            Tensor w({d_in, d_out});
            for (size_t i = 0; i < w.size(); ++i) {
                w[i] = in.f64("weight");
            }
            Tensor b({d_out});
            for (size_t i = 0; i < b.size(); ++i) {
                b[i] = in.f64("bias");
            }
            group.push_back(DenseLayer{Param(std::move(w)), Param(std::move(b))});
            d_in = d_out;
        }
        model.groups.push_back(std::move(group));
    }
    if (!in.at_end()) {
        throw DataFormatError(path + ": trailing bytes at offset " +
                              std::to_string(in.offset()));
    }
    return ckpt;
}

}  // namespace fewbench
