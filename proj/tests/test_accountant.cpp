#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "csnet/accountant.hpp"

#include <numeric>

using namespace csnet;

namespace {

std::int64_t sq(std::int64_t v) { return v * v; }

}  // namespace

TEST_CASE("conventional filter counts") {
    CHECK(count_conventional(7, 7, 5, 6) == 49 * 5 * 6);
    CHECK(count_conventional(1, 1, 1, 1) == 1);
    CHECK(count_conventional(7, 7, 16, 16) == 12544);
    CHECK(count_conventional(3, 5, 2, 7) == 3 * 5 * 2 * 7);
    CHECK_THROWS_AS(count_conventional(0, 7, 1, 1), ValidationError);
    CHECK_THROWS_AS(count_conventional(7, 7, -3, 1), ValidationError);
}

TEST_CASE("structural counts match the closed forms for both reference cascades") {
    for (int n1 = 1; n1 <= 64; ++n1)
        for (int n2 = 1; n2 <= 64; ++n2) {
            const std::int64_t first =
                count_csconv(reference_cascade_widen_first(n1, n2)).total_weights;
            const std::int64_t last =
                count_csconv(reference_cascade_widen_last(n1, n2)).total_weights;
            if (first != 9 * std::int64_t(n1) * n2 + 21 * sq(n2)) {
                CAPTURE(n1);
                CAPTURE(n2);
                CHECK(first == 9 * std::int64_t(n1) * n2 + 21 * sq(n2));
            }
            if (last != 29 * sq(n1) + std::int64_t(n1) * n2) {
                CAPTURE(n1);
                CAPTURE(n2);
                CHECK(last == 29 * sq(n1) + std::int64_t(n1) * n2);
            }
        }
    CHECK(true);  // loop above only records failures

    SUBCASE("equal channel widths cost 30*N^2 either way") {
        for (int n : {1, 4, 16, 64, 96, 192}) {
            CHECK(count_csconv(reference_cascade_widen_first(n, n)).total_weights == 30 * sq(n));
            CHECK(count_csconv(reference_cascade_widen_last(n, n)).total_weights == 30 * sq(n));
        }
    }
}

TEST_CASE("count_csconv reports biases and normalization parameters per stage") {
    const CsconvSpec spec = reference_cascade_widen_first(8, 12);
    const ParamReport plain = count_csconv(spec);
    REQUIRE(plain.per_layer.size() == 3);
    CHECK(plain.per_layer[0].name == "s0");
    CHECK(plain.per_layer[0].weights == 9 * 8 * 12 + 12 * 12);
    CHECK(plain.per_layer[0].biases == 12 + 12);
    CHECK(plain.per_layer[0].norm == 0);
    CHECK(plain.total_with_bias == plain.total_weights + 3 * 24);

    const ParamReport bn = count_csconv(spec, true);
    CHECK(bn.total_with_norm == bn.total_with_bias + 2 * 3 * 24);
    CHECK(bn.total_weights == plain.total_weights);

    SUBCASE("totals always equal the per-layer sums") {
        std::int64_t w = 0, b = 0, n = 0;
        for (const LayerParamCount& e : bn.per_layer) {
            w += e.weights;
            b += e.biases;
            n += e.norm;
            CHECK(e.weights >= 0);
            CHECK(e.biases >= 0);
            CHECK(e.norm >= 0);
        }
        CHECK(bn.total_weights == w);
        CHECK(bn.total_with_bias == w + b);
        CHECK(bn.total_with_norm == w + b + n);
    }
    SUBCASE("an invalid cascade is rejected") {
        CsconvSpec broken = spec;
        broken.input_h = 6;
        CHECK_THROWS_AS(count_csconv(broken), CascadeError);
    }
}

TEST_CASE("cost comparison against a conventional 7x7 filter") {
    CHECK(compare_costs(7, 7, 21, 40, reference_cascade_widen_first(21, 40)) == 0);
    for (int n : {1, 8, 32, 64})
        CHECK(compare_costs(7, 7, n, n, reference_cascade_widen_first(n, n)) == 19 * sq(n));
    CHECK(compare_costs(7, 7, 1, 4, reference_cascade_widen_first(1, 4)) == -176);

    SUBCASE("savings sign matches the crossover conditions everywhere") {
        auto sign = [](std::int64_t v) { return (v > 0) - (v < 0); };
        for (int n1 = 1; n1 <= 64; ++n1)
            for (int n2 = 1; n2 <= 64; ++n2) {
                const int want_first = sign(40 * std::int64_t(n1) - 21 * n2);
                const int want_last = sign(48 * std::int64_t(n2) - 29 * n1);
                const int got_first =
                    sign(compare_costs(7, 7, n1, n2, reference_cascade_widen_first(n1, n2)));
                const int got_last =
                    sign(compare_costs(7, 7, n1, n2, reference_cascade_widen_last(n1, n2)));
                if (got_first != want_first || got_last != want_last) {
                    CAPTURE(n1);
                    CAPTURE(n2);
                    CHECK(got_first == want_first);
                    CHECK(got_last == want_last);
                }
            }
        CHECK(true);
    }
    SUBCASE("receptive-field and channel mismatches are rejected") {
        CsconvSpec narrow = reference_cascade_widen_first(4, 4);
        CHECK_THROWS_AS(compare_costs(9, 9, 4, 4, narrow), ValidationError);
        CHECK_THROWS_AS(compare_costs(7, 7, 5, 4, narrow), ValidationError);
        CHECK_THROWS_AS(compare_costs(7, 7, 4, 5, narrow), ValidationError);
    }
}

TEST_CASE("preset budgets are pinned") {
    SUBCASE("small") {
        const ParamReport r = count_network(preset("csnet_s"));
        REQUIRE(r.per_layer.size() == 9);
        CHECK(r.per_layer[0].weights == 207936);
        CHECK(r.per_layer[3].weights == 368640);
        CHECK(r.per_layer[6].weights == 352128);
        CHECK(r.total_weights == 928704);
    }
    SUBCASE("medium") {
        const ParamReport r = count_network(preset("csnet_m"));
        CHECK(r.per_layer[0].weights == 410688);
        CHECK(r.per_layer[3].weights == 737280);
        CHECK(r.per_layer[6].weights == 702336);
        CHECK(r.total_weights == 1850304);
    }
    SUBCASE("large") {
        const ParamReport r = count_network(preset("csnet_l"));
        CHECK(r.per_layer[0].weights == 557984);
        CHECK(r.per_layer[3].weights == 1003520);
        CHECK(r.per_layer[6].weights == 1003520);
        CHECK(r.per_layer[7].weights == 955584);
        CHECK(r.total_weights == 3520608);
    }
    SUBCASE("tiny") {
        const ParamReport r = count_network(preset("csnet_tiny"));
        CHECK(r.total_weights == 31328);
    }
}

TEST_CASE("network counting covers only parameterized layers") {
    const ParamReport r = count_network(preset("csnet_s"));
    for (const LayerParamCount& e : r.per_layer) {
        if (e.name[0] == 'c')
            CHECK(e.weights > 0);
        else
            CHECK(e.weights + e.biases + e.norm == 0);
    }

    SUBCASE("the count matches the tensors init_params actually allocates") {
        const NetworkSpec net = preset("csnet_tiny");
        Rng rng(2);
        const ModelParams<float> mp = init_params<float>(net, rng);
        std::int64_t stored = 0;
        for (const std::string& name : mp.params.names()) stored += mp.params.get(name).size();
        CHECK(stored == count_network(net).total_with_norm);
    }
    SUBCASE("an empty network counts zero") {
        const ParamReport empty = count_network(NetworkSpec{});
        CHECK(empty.per_layer.empty());
        CHECK(empty.total_weights == 0);
        CHECK(empty.total_with_bias == 0);
        CHECK(empty.total_with_norm == 0);
    }
    SUBCASE("totals are order independent") {
        std::int64_t forward = 0, backward = 0;
        for (std::size_t i = 0; i < r.per_layer.size(); ++i) {
            forward += r.per_layer[i].weights;
            backward += r.per_layer[r.per_layer.size() - 1 - i].weights;
        }
        CHECK(forward == backward);
        CHECK(forward == r.total_weights);
    }
}

TEST_CASE("report rendering") {
    const ParamReport r = count_network(preset("csnet_tiny"));
    const std::string text = report_to_text(r);
    CHECK(text.find("c1") != std::string::npos);
    CHECK(text.find("928704") == std::string::npos);
    CHECK(text.find("31328") != std::string::npos);
    CHECK(text.find("weights") != std::string::npos);

    const std::string doc = report_to_json(r);
    CHECK(doc.find("\"total_weights\": 31328") != std::string::npos);
    CHECK(doc.find("\"name\": \"c1\"") != std::string::npos);
}
