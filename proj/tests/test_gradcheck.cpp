#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <string>
#include <vector>

#include "csnet/gradcheck.hpp"
#include "csnet/model.hpp"

using namespace csnet;

namespace {

// Reduced-width tiny network on a small input: few enough preactivations that
// a seed with every ReLU clear of the kink margin is found quickly, and few
// enough parameters that per-element central differences stay cheap.
NetworkSpec reduced_tiny() {
    NetworkSpec net = cap_channels(preset("csnet_tiny"), 4);
    net.input.h = 8;
    net.input.w = 8;
    validate(net);
    return net;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

TEST_CASE("gradcheck passes on the reduced-width tiny network") {
    const NetworkSpec net = reduced_tiny();
    const GradCheckReport report = gradcheck_network(net);

    CHECK(report.passed);
    CHECK(report.worst_relative_error < 1e-4);
    CHECK(report.kink_margin > 1e-3);

    SUBCASE("every trainable tensor is listed exactly once, in store order") {
        Rng rng(3);
        const ModelParams<double> state = init_params<double>(net, rng);
        REQUIRE(report.entries.size() == state.params.size());
        for (std::size_t i = 0; i < report.entries.size(); ++i) {
            CHECK(report.entries[i].name == state.params.names()[i]);
            CHECK(report.entries[i].passed);
        }
    }

    SUBCASE("conv biases under batch norm are checked as null gradients") {
        int null_count = 0;
        for (const GradCheckEntry& e : report.entries) {
            const bool is_conv_bias = ends_with(e.name, ".spatial.b") || ends_with(e.name, ".channel.b");
            CHECK(e.method ==
                  (is_conv_bias ? GradCheckMethod::null_gradient : GradCheckMethod::finite_difference));
            if (is_conv_bias) {
                ++null_count;
                CHECK(e.worst < kNullGradientTolerance);
            }
        }
        CHECK(null_count == 8);  // two per stage, four stages
    }

    SUBCASE("report text carries one line per tensor plus the verdict") {
        const std::string text = gradcheck_report_to_text(report);
        CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(report.entries.size()) + 1);
        CHECK(text.find("PASS") != std::string::npos);
        CHECK(text.find("FAIL") == std::string::npos);
        for (const GradCheckEntry& e : report.entries) CHECK(text.find(e.name) != std::string::npos);
    }
}

TEST_CASE("gradcheck rejects a corrupted backward pass") {
    const NetworkSpec net = reduced_tiny();
    GradCheckOptions opt;
    opt.tamper = [](ParamStore<double>& grads) {
        Tensor<double>& g = grads.get("c2.s1.channel.w");
        double* p = g.data();
        for (std::int64_t i = 0; i < g.size(); ++i) p[i] *= 1.5;
    };
    const GradCheckReport report = gradcheck_network(net, opt);

    CHECK(!report.passed);
    CHECK(report.worst_relative_error > 1e-4);
    bool found = false;
    for (const GradCheckEntry& e : report.entries) {
        if (e.name == "c2.s1.channel.w") {
            found = true;
            CHECK(!e.passed);
        } else if (e.method == GradCheckMethod::finite_difference) {
            CHECK(e.passed);  // the corruption stays localized to one tensor
        }
    }
    CHECK(found);
    CHECK(gradcheck_report_to_text(report).find("FAIL") != std::string::npos);
}

TEST_CASE("gradcheck is deterministic for fixed options") {
    const NetworkSpec net = reduced_tiny();
    const GradCheckReport a = gradcheck_network(net);
    const GradCheckReport b = gradcheck_network(net);
    CHECK(a.seed_used == b.seed_used);
    CHECK(a.kink_margin == b.kink_margin);
    REQUIRE(a.entries.size() == b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) CHECK(a.entries[i].worst == b.entries[i].worst);
}

TEST_CASE("gradcheck reports seed exhaustion when the margin is unattainable") {
    const NetworkSpec net = reduced_tiny();
    GradCheckOptions opt;
    opt.kink_margin = 10.0;  // batch-norm outputs can never all clear this
    opt.seed_tries = 3;
    CHECK_THROWS_AS(gradcheck_network(net, opt), Error);
}

TEST_CASE("cap_channels shrinks hidden widths and keeps the class count") {
    const NetworkSpec full = preset("csnet_tiny");
    const NetworkSpec capped = cap_channels(full, 4);
    validate(capped);

    CHECK(capped.input.c == full.input.c);
    CHECK(capped.input.h == full.input.h);
    REQUIRE(capped.layers.size() == full.layers.size());

    // Walk the stage chain: hidden widths are at most the cap, the in/out
    // chain stays consistent, and the final channel filter still emits the
    // original class count.
    int prev_out = capped.input.c;
    std::int64_t last_csconv = -1;
    for (std::size_t i = 0; i < capped.layers.size(); ++i) {
        if (capped.layers[i].kind == LayerKind::csconv) last_csconv = static_cast<std::int64_t>(i);
    }
    REQUIRE(last_csconv >= 0);
    for (std::size_t i = 0; i < capped.layers.size(); ++i) {
        const LayerSpec& layer = capped.layers[i];
        if (layer.kind != LayerKind::csconv) continue;
        for (std::size_t s = 0; s < layer.csconv.stages.size(); ++s) {
            const SubpatchFilterSpec& st = layer.csconv.stages[s];
            CHECK(st.in_channels == prev_out);
            CHECK(st.mid_channels <= 4);
            const bool final_stage =
                static_cast<std::int64_t>(i) == last_csconv && s + 1 == layer.csconv.stages.size();
            if (final_stage) {
                CHECK(st.out_channels == full.layers[i].csconv.stages[s].out_channels);
            } else {
                CHECK(st.out_channels <= 4);
            }
            prev_out = st.out_channels;
        }
    }
    CHECK(prev_out == 10);

    CHECK_THROWS_AS(cap_channels(full, 0), ValidationError);
}
