#include <doctest.h>

#include <cmath>

#include "fewbench/common.hpp"
#include "fewbench/losses.hpp"
#include "fewbench/model.hpp"
#include "fewbench/ops.hpp"
#include "fewbench/rng.hpp"

using namespace fewbench;

namespace {

Tensor random_matrix(size_t rows, size_t cols, RngStream& stream, double scale = 1.0) {
    Tensor t({rows, cols});
    for (size_t i = 0; i < t.size(); ++i) {
        t[i] = stream.next_uniform_sym(scale);
    }
    return t;
}

}  // namespace

TEST_CASE("smoothed CE on uniform logits is ln N") {
    Tensor logits({3, 5});
    const std::vector<uint32_t> labels{0, 2, 4};
    for (double eps : {0.0, 0.1, 0.5}) {
        CeResult r = label_smoothed_ce(logits, labels, eps);
        CHECK(r.loss == doctest::Approx(std::log(5.0)).epsilon(1e-14));
    }
}

TEST_CASE("smoothed CE with epsilon 0 equals plain cross-entropy") {
    RngStream stream(derive_seed(21, "ce-eps0"));
    Tensor logits = random_matrix(4, 6, stream, 3.0);
    const std::vector<uint32_t> labels{5, 0, 3, 3};
    CeResult smoothed = label_smoothed_ce(logits, labels, 0.0);

    // independent plain-CE evaluation
    double expected = 0.0;
    for (size_t b = 0; b < 4; ++b) {
        Tensor row({6});
        for (size_t c = 0; c < 6; ++c) {
            row[c] = logits(b, c);
        }
        Tensor p = softmax(row);
        expected -= std::log(p[labels[b]]);
    }
    expected /= 4.0;
    CHECK(std::abs(smoothed.loss - expected) <= 1e-12);
}

TEST_CASE("smoothed CE matches the direct formula oracle") {
    // logits [2,0], label 0, N=2, eps=0.1:
    // softmax = (0.88079708, 0.11920292), target = (0.95, 0.05)
    // loss = -0.95*ln(0.88079708) - 0.05*ln(0.11920292) = 0.22692801104297264
    Tensor logits({1, 2}, {2.0, 0.0});
    const std::vector<uint32_t> labels{0};
    CeResult r = label_smoothed_ce(logits, labels, 0.1);
    CHECK(r.loss == doctest::Approx(0.22692801104297264).epsilon(1e-13));
}

TEST_CASE("smoothed CE rejects out-of-range labels") {
    Tensor logits({1, 3});
    const std::vector<uint32_t> labels{3};
    CHECK_THROWS_AS(label_smoothed_ce(logits, labels, 0.1), DimensionError);
}

TEST_CASE("smoothed CE loss is at least the smoothed-target entropy") {
    // loss = H(t) + KL(t || p) >= H(t)
    RngStream stream(derive_seed(22, "ce-entropy"));
    for (int trial = 0; trial < 30; ++trial) {
        const size_t n = 2 + stream.next_below(7);
        const size_t batch = 1 + stream.next_below(4);
        Tensor logits = random_matrix(batch, n, stream, 4.0);
        std::vector<uint32_t> labels(batch);
        for (auto& l : labels) {
            l = static_cast<uint32_t>(stream.next_below(n));
        }
        const double eps = 0.3 * stream.next_double();
        CeResult r = label_smoothed_ce(logits, labels, eps);

        const double uniform = eps / static_cast<double>(n);
        double entropy = 0.0;
        for (size_t c = 0; c < n; ++c) {
            const double t = uniform + (c == 0 ? 1.0 - eps : 0.0);
            if (t > 0.0) {
                entropy -= t * std::log(t);
            }
        }
        CHECK(r.loss >= entropy - 1e-12);
    }
}

TEST_CASE("SR loss of identical features is exactly -1") {
    Tensor f({2, 3}, {1.0, 2.0, 3.0, -0.5, 0.25, 4.0});
    SrResult r = stability_regularization(f, f);
    CHECK(r.loss == -1.0);
}

TEST_CASE("SR loss of orthogonal rows is 0") {
    Tensor ref({2, 2}, {1.0, 0.0, 0.0, 3.0});
    Tensor tuned({2, 2}, {0.0, 2.0, -5.0, 0.0});
    SrResult r = stability_regularization(ref, tuned);
    CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("SR loss is scale invariant in the tuned features") {
    Tensor ref({2, 3}, {1.0, 2.0, 3.0, 0.5, -1.0, 2.0});
    Tensor doubled = ref;
    for (size_t i = 0; i < doubled.size(); ++i) {
        doubled[i] *= 2.0;
    }
    SrResult r = stability_regularization(ref, doubled);
    CHECK(r.loss == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("SR rejects zero-norm rows, or skips them when asked") {
    Tensor ref({2, 2}, {1.0, 0.0, 1.0, 1.0});
    Tensor tuned({2, 2}, {0.0, 0.0, 1.0, 1.0});
    CHECK_THROWS_WITH_AS(stability_regularization(ref, tuned),
                         doctest::Contains("row 0"), DegenerateInputError);

    SrResult r = stability_regularization(ref, tuned, /*skip_degenerate=*/true);
    CHECK(r.skipped_rows == 1);
    CHECK(r.loss == doctest::Approx(-1.0).epsilon(1e-15));  // surviving row
    CHECK(r.grad_tuned(0, 0) == 0.0);
    CHECK(r.grad_tuned(0, 1) == 0.0);
}

TEST_CASE("SR properties: range and gradient orthogonality") {
    RngStream stream(derive_seed(23, "sr-prop"));
    for (int trial = 0; trial < 50; ++trial) {
        const size_t batch = 1 + stream.next_below(4);
        const size_t d = 2 + stream.next_below(6);
        Tensor ref = random_matrix(batch, d, stream);
        Tensor tuned = random_matrix(batch, d, stream);
        for (size_t i = 0; i < ref.size(); ++i) {
            ref[i] += ref[i] >= 0 ? 0.2 : -0.2;
            tuned[i] += tuned[i] >= 0 ? 0.2 : -0.2;
        }
        SrResult r = stability_regularization(ref, tuned);
        CHECK(r.loss >= -1.0 - 1e-12);
        CHECK(r.loss <= 1.0 + 1e-12);

        for (size_t b = 0; b < batch; ++b) {
            double dot = 0.0, gn = 0.0, vn = 0.0;
            for (size_t i = 0; i < d; ++i) {
                const double g = r.grad_tuned(b, i);
                const double v = tuned(b, i);
                dot += g * v;
                gn += g * g;
                vn += v * v;
            }
            CHECK(std::abs(dot) <= 1e-9 * std::sqrt(gn) * std::sqrt(vn) + 1e-15);
        }
    }
}

TEST_CASE("SR loss hits -1 iff tuned rows positively align with reference") {
    Tensor ref({1, 3}, {0.3, -0.4, 1.2});
    Tensor negated = ref;
    for (size_t i = 0; i < negated.size(); ++i) {
        negated[i] = -negated[i];
    }
    CHECK(stability_regularization(ref, negated).loss == doctest::Approx(1.0));
    Tensor scaled = ref;
    for (size_t i = 0; i < scaled.size(); ++i) {
        scaled[i] *= 0.125;
    }
    CHECK(stability_regularization(ref, scaled).loss == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("combined loss arithmetic") {
    CHECK(combined_loss(1.7, -0.8, 0.0) == 1.7);
    CHECK(combined_loss(1.6094, -1.0, 0.1) == doctest::Approx(1.5094).epsilon(1e-15));
    CHECK_THROWS_AS(combined_loss(std::numeric_limits<double>::infinity(), 0.0, 0.1),
                    NumericError);
}

TEST_CASE("combined gradients superpose linearly on a toy model") {
    RngStream stream(derive_seed(24, "superpose"));
    Tensor input = random_matrix(3, 4, stream);
    Tensor reference = random_matrix(3, 2, stream);
    for (size_t i = 0; i < reference.size(); ++i) {
        reference[i] += reference[i] >= 0 ? 0.5 : -0.5;
    }
    const std::vector<uint32_t> labels{0, 1, 0};
    const double alpha = 0.1;

    RngStream init(derive_seed(24, "superpose-init"));
    Param w(random_matrix(4, 2, init));
    Param b(Tensor::vector_of({0.1, -0.3}));

    auto ce_grads = [&] {
        Tensor out = affine_forward(input, w.value, b.value);
        CeResult ce = label_smoothed_ce(out, labels, 0.1);
        return affine_backward(input, w.value, ce.grad_logits);
    };
    auto sr_grads = [&] {
        Tensor out = affine_forward(input, w.value, b.value);
        SrResult sr = stability_regularization(reference, out);
        return affine_backward(input, w.value, sr.grad_tuned);
    };
    auto combined_grads = [&] {
        Tensor out = affine_forward(input, w.value, b.value);
        CeResult ce = label_smoothed_ce(out, labels, 0.1);
        SrResult sr = stability_regularization(reference, out);
        Tensor upstream = ce.grad_logits;
        for (size_t i = 0; i < upstream.size(); ++i) {
            upstream[i] += alpha * sr.grad_tuned[i];
        }
        return affine_backward(input, w.value, upstream);
    };

    AffineGrads g_ce = ce_grads();
    AffineGrads g_sr = sr_grads();
    AffineGrads g_all = combined_grads();
    for (size_t i = 0; i < g_all.weight.size(); ++i) {
        CHECK(std::abs(g_all.weight[i] - (g_ce.weight[i] + alpha * g_sr.weight[i])) <= 1e-12);
    }
    for (size_t i = 0; i < g_all.bias.size(); ++i) {
        CHECK(std::abs(g_all.bias[i] - (g_ce.bias[i] + alpha * g_sr.bias[i])) <= 1e-12);
    }
}

TEST_CASE("both losses match finite differences through backbone and head") {
    RngStream stream(derive_seed(25, "full-fdiff"));
    BackboneConfig config;
    config.input_dim = 4;
    config.group_dims = {6, 5};

    auto [model, head] = init_model(config, 3, 10.0, 777);
    auto [reference_model, unused_head] = init_model(config, 3, 10.0, 778);
    const BackboneModel reference = clone_frozen_reference(reference_model);

    Tensor batch = random_matrix(3, 4, stream);
    const std::vector<uint32_t> labels{1, 0, 2};
    Tensor ref_feats = reference.forward(batch);
    REQUIRE(stability_regularization(ref_feats, model.forward(batch)).skipped_rows == 0);

    std::vector<Param*> params = model.all_params();
    params.push_back(&head.weights);

    auto ce_loss = [&] {
        ForwardTrace trace = model.forward_trace(batch);
        Tensor logits = head.logits(trace.features);
        CeResult ce = label_smoothed_ce(logits, labels, 0.1);
        Tensor gf = head.backward(trace.features, ce.grad_logits);
        model.backward(trace, gf);
        return ce.loss;
    };
    CHECK(finite_diff_check(ce_loss, params) <= 1e-6);

    auto sr_loss = [&] {
        ForwardTrace trace = model.forward_trace(batch);
        SrResult sr = stability_regularization(ref_feats, trace.features);
        model.backward(trace, sr.grad_tuned);
        return sr.loss;
    };
    CHECK(finite_diff_check(sr_loss, params) <= 1e-6);

    auto total_loss = [&] {
        ForwardTrace trace = model.forward_trace(batch);
        Tensor logits = head.logits(trace.features);
        CeResult ce = label_smoothed_ce(logits, labels, 0.1);
        SrResult sr = stability_regularization(ref_feats, trace.features);
        Tensor gf = head.backward(trace.features, ce.grad_logits);
        for (size_t i = 0; i < gf.size(); ++i) {
            gf[i] += 0.1 * sr.grad_tuned[i];
        }
        model.backward(trace, gf);
        return combined_loss(ce.loss, sr.loss, 0.1);
    };
    CHECK(finite_diff_check(total_loss, params) <= 1e-6);
}