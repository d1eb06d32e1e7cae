#include <doctest.h>

#include "test_util.hpp"
#include "witu/errors.hpp"
#include "witu/gradcheck.hpp"

using namespace witu;

TEST_SUITE("gradcheck") {

TEST_CASE("relative error") {
    CHECK(gradcheck::relative_error(1.0, 1.0, 1e-4) == 0.0);
    CHECK(gradcheck::relative_error(1.0, 0.5, 1e-4) == doctest::Approx(0.5));
    CHECK(gradcheck::relative_error(1e-7, -1e-7, 1e-4) == doctest::Approx(2e-3));
}

TEST_CASE("case list covers the parameterized ops and the network") {
    std::vector<std::string> names;
    for (const auto& c : gradcheck::cases()) names.push_back(c.name);
    for (const char* n : {"conv2d", "conv_transpose2d", "linear", "layer_norm", "w_msa", "lipe", "wt_block", "network"})
        CHECK(std::find(names.begin(), names.end(), n) != names.end());
}

TEST_CASE("op-level cases pass in both precisions") {
    gradcheck::Options opt;
    opt.samples = 30;
    for (const char* name : {"conv2d", "conv_transpose2d", "linear", "layer_norm", "w_msa", "lipe"}) {
        INFO(name);
        for (const auto& r : gradcheck::run_suite<float>(opt, name)) {
            INFO(r.group << " " << r.worst);
            CHECK(r.passed());
            CHECK(r.tolerance == 1e-2);
        }
        for (const auto& r : gradcheck::run_suite<double>(opt, name)) {
            INFO(r.group << " " << r.worst);
            CHECK(r.passed());
            CHECK(r.tolerance == 1e-4);
        }
    }
}

TEST_CASE("a sign fault in one backward is detected") {
    gradcheck::Options opt;
    opt.samples = 20;
    for (const char* op : {"linear", "softmax", "conv2d"}) {
        opt.fault_op = op;
        bool any_failed = false;
        for (const auto& r : gradcheck::run_suite<double>(opt, "w_msa")) any_failed = any_failed || !r.passed();
        if (std::string(op) == "conv2d") {
            CHECK_FALSE(any_failed);
        } else {
            CHECK(any_failed);
        }
    }
}

TEST_CASE("invalid options and unknown cases") {
    gradcheck::Options opt;
    CHECK_THROWS_AS(gradcheck::run_suite<float>(opt, "nope"), ConfigError);
    opt.step = 0;
    CHECK_THROWS_AS(gradcheck::run_suite<float>(opt, "linear"), ConfigError);
}

}  // TEST_SUITE
