#include <doctest.h>

#include <cmath>
#include <sstream>

#include "test_util.hpp"
#include "witu/autograd.hpp"
#include "witu/errors.hpp"
#include "witu/ops.hpp"
#include "witu/tensor_io.hpp"

using namespace witu;
using test::random_tensor;

namespace {

// Direct loop convolution, accumulated in double.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, const ops::ConvSpec& s) {
    const std::size_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
    const std::size_t oh = (h + 2 * s.padding - s.kernel_h) / s.stride + 1;
    const std::size_t ow = (wd + 2 * s.padding - s.kernel_w) / s.stride + 1;
    const std::size_t cin_g = s.in_channels / s.groups, cout_g = s.out_channels / s.groups;
    Tensor y({n, s.out_channels, oh, ow});
    for (std::size_t bi = 0; bi < n; ++bi)
        for (std::size_t co = 0; co < s.out_channels; ++co)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = b[co];
                    for (std::size_t cl = 0; cl < cin_g; ++cl)
                        for (std::size_t ki = 0; ki < s.kernel_h; ++ki)
                            for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
                                const long r = long(i * s.stride + ki) - long(s.padding);
                                const long c = long(j * s.stride + kj) - long(s.padding);
                                if (r < 0 || c < 0 || r >= long(h) || c >= long(wd)) continue;
                                const std::size_t ci = (co / cout_g) * cin_g + cl;
                                acc += double(x.at({bi, ci, std::size_t(r), std::size_t(c)})) *
                                       w.at({co, cl, ki, kj});
                            }
                    y.at({bi, co, i, j}) = float(acc);
                }
    return y;
}

template <typename T>
double finite_diff(BasicTensor<T>& x, std::size_t i, double h, const std::function<double()>& f) {
    const T orig = x[i];
    x[i] = orig + h;
    const double fp = f();
    x[i] = orig - h;
    const double fm = f();
    x[i] = orig;
    return (fp - fm) / (2 * h);
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("tensor construction checks extents and data length") {
    CHECK(Tensor({2, 3}).numel() == 6);
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
    Tensor t({2, 3, 4});
    t.at({1, 2, 3}) = 5.0f;
    CHECK(t[23] == 5.0f);
    CHECK_THROWS_AS(t.at({2, 0, 0}), ShapeError);
    CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
    CHECK(t.reshaped({24}).dims() == Dims{24});
}

TEST_CASE("conv output extent formula") {
    ops::ConvSpec s{1, 1, 3, 3, 2, 1, 1};
    CHECK(s.out_extent(5, 3) == 3);
    CHECK(s.out_extent(6, 3) == 3);
    ops::ConvSpec big{1, 1, 5, 5, 1, 0, 1};
    CHECK_THROWS_AS(big.out_extent(3, 5), ShapeError);
}

TEST_CASE("conv2d sum of ones") {
    Tensor x({1, 1, 3, 3}, 1.0f), w({1, 1, 3, 3}, 1.0f), b({1});
    auto y = ops::conv2d(x, w, b, {1, 1, 3, 3, 1, 1, 1});
    CHECK(y.dims() == Dims{1, 1, 3, 3});
    CHECK(y.at({0, 0, 1, 1}) == 9.0f);
    CHECK(y.at({0, 0, 0, 0}) == 4.0f);
}

TEST_CASE("conv2d delta kernel is the identity") {
    Rng rng(1);
    auto x = random_tensor({2, 1, 6, 5}, rng);
    Tensor w({1, 1, 3, 3}), b({1});
    w.at({0, 0, 1, 1}) = 1.0f;
    CHECK(ops::conv2d(x, w, b, {1, 1, 3, 3, 1, 1, 1}) == x);
}

TEST_CASE("conv2d matches the loop oracle") {
    Rng rng(2);
    SUBCASE("strided") {
        ops::ConvSpec s{2, 3, 3, 3, 2, 1, 1};
        auto x = random_tensor({1, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
        auto y = ops::conv2d(x, w, b, s), ref = conv_oracle(x, w, b, s);
        REQUIRE(y.dims() == ref.dims());
        for (std::size_t i = 0; i < y.numel(); ++i) CHECK(test::rel_diff(y[i], ref[i]) <= 1e-5);
    }
    SUBCASE("grouped, rectangular kernel") {
        ops::ConvSpec s{4, 6, 3, 2, 1, 1, 2};
        auto x = random_tensor({2, 4, 6, 7}, rng), w = random_tensor(s.weight_dims(), rng), b = random_tensor({6}, rng);
        auto y = ops::conv2d(x, w, b, s), ref = conv_oracle(x, w, b, s);
        REQUIRE(y.dims() == ref.dims());
        CHECK(test::max_abs_diff(y, ref) <= 1e-5);
    }
}

TEST_CASE("conv2d shape errors name the axis") {
    Tensor x({1, 2, 5, 5}), w({3, 4, 3, 3}), b({3});
    try {
        ops::conv2d(x, w, b, {2, 3, 3, 3, 1, 1, 1});
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("axis") != std::string::npos);
    }
    CHECK_THROWS_AS(ops::conv2d(Tensor({1, 3, 5, 5}), Tensor({3, 2, 3, 3}), b, {2, 3, 3, 3, 1, 1, 1}), ShapeError);
}

TEST_CASE("conv_transpose2d single element broadcast") {
    Tensor x({1, 1, 1, 1}, 2.0f), w({1, 1, 2, 2}, 1.0f), b({1});
    auto y = ops::conv_transpose2d(x, w, b, 2);
    CHECK(y.dims() == Dims{1, 1, 2, 2});
    for (float v : y.data()) CHECK(v == 2.0f);
}

TEST_CASE("conv_transpose2d of zero input is the broadcast bias") {
    Rng rng(3);
    Tensor x({1, 2, 3, 3});
    auto w = random_tensor({2, 3, 2, 2}, rng);
    Tensor b({3}, std::vector<float>{0.5f, -1.0f, 2.0f});
    auto y = ops::conv_transpose2d(x, w, b, 2);
    CHECK(y.dims() == Dims{1, 3, 6, 6});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 36; ++i) CHECK(y[c * 36 + i] == b[c]);
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        auto x = random_tensor({1, 2, 4, 4}, rng);
        auto w = random_tensor({2, 3, 2, 2}, rng);
        auto z = random_tensor({1, 3, 8, 8}, rng);
        auto up = ops::conv_transpose2d(x, w, Tensor({3}), 2);
        // The same weight read as [Cout=2, Cin=3, 2, 2] is the matching conv2d.
        auto down = ops::conv2d(z, w, Tensor({2}), {3, 2, 2, 2, 2, 0, 1});
        CHECK(test::rel_diff(test::dot(up, z), test::dot(x, down)) <= 1e-4);
    }
}

TEST_CASE("linear") {
    SUBCASE("hand product") {
        Tensor x({1, 2}, std::vector<float>{1, 2});
        Tensor w({2, 2}, std::vector<float>{1, 1, 1, -1});
        auto y = ops::linear(x, w, Tensor({2}));
        CHECK(y[0] == 3.0f);
        CHECK(y[1] == -1.0f);
    }
    SUBCASE("identity weight") {
        Rng rng(4);
        auto x = random_tensor({3, 5}, rng);
        Tensor w({5, 5});
        for (std::size_t i = 0; i < 5; ++i) w.at({i, i}) = 1.0f;
        CHECK(ops::linear(x, w, Tensor({5})) == x);
    }
    SUBCASE("batch shape preserved") {
        Rng rng(5);
        auto y = ops::linear(random_tensor({4, 7, 3}, rng), random_tensor({6, 3}, rng), Tensor({6}));
        CHECK(y.dims() == Dims{4, 7, 6});
    }
    SUBCASE("trailing mismatch") {
        CHECK_THROWS_AS(ops::linear(Tensor({2, 3}), Tensor({4, 5}), Tensor({4})), ShapeError);
    }
}

TEST_CASE("layer_norm") {
    SUBCASE("hand values") {
        Tensor x({3}, std::vector<float>{1, 2, 3});
        auto y = ops::layer_norm(x, Tensor({3}, 1.0f), Tensor({3}), 1e-12);
        CHECK(std::fabs(y[0] + 1.2247) <= 1e-3);
        CHECK(std::fabs(y[1]) <= 1e-3);
        CHECK(std::fabs(y[2] - 1.2247) <= 1e-3);
    }
    SUBCASE("constant vector gives beta") {
        Tensor beta({4}, std::vector<float>{0.1f, -0.2f, 0.3f, 0.0f});
        for (float c : {0.0f, 7.5f, -300.0f}) {
            auto y = ops::layer_norm(Tensor({2, 4}, c), Tensor({4}, 1.0f), beta);
            for (std::size_t i = 0; i < 8; ++i) CHECK(y[i] == beta[i % 4]);
        }
    }
    SUBCASE("normalized statistics") {
        Rng rng(6);
        auto x = random_tensor({16, 32}, rng, -3, 5);
        auto y = ops::layer_norm(x, Tensor({32}, 1.0f), Tensor({32}));
        for (std::size_t r = 0; r < 16; ++r) {
            double m = 0, v = 0;
            for (std::size_t i = 0; i < 32; ++i) m += y[r * 32 + i];
            m /= 32;
            for (std::size_t i = 0; i < 32; ++i) v += (y[r * 32 + i] - m) * (y[r * 32 + i] - m);
            v /= 32;
            CHECK(std::fabs(m) <= 1e-5);
            CHECK(std::fabs(v - 1) <= 1e-3);
        }
    }
    SUBCASE("shift and scale invariance") {
        Rng rng(7);
        auto x = random_tensor({8, 16}, rng);
        const Tensor g({16}, 1.0f), b({16});
        auto base = ops::layer_norm(x, g, b);
        Tensor shifted = x, scaled = x;
        for (auto& v : shifted.storage()) v += 3.25f;
        for (auto& v : scaled.storage()) v *= 2.5f;
        CHECK(test::max_abs_diff(ops::layer_norm(shifted, g, b), base) <= 1e-5);
        CHECK(test::max_abs_diff(ops::layer_norm(scaled, g, b), base) <= 1e-4);
    }
}

TEST_CASE("softmax") {
    SUBCASE("symmetric pair") {
        auto y = ops::softmax(Tensor({2}, 0.0f));
        CHECK(y[0] == 0.5f);
        CHECK(y[1] == 0.5f);
    }
    SUBCASE("hand values") {
        auto y = ops::softmax(Tensor({3}, std::vector<float>{1, 2, 3}));
        CHECK(std::fabs(y[0] - 0.0900) <= 1e-4);
        CHECK(std::fabs(y[1] - 0.2447) <= 1e-4);
        CHECK(std::fabs(y[2] - 0.6652) <= 1e-4);
    }
    SUBCASE("rows sum to one, entries in [0,1], shift invariant") {
        Rng rng(8);
        auto x = random_tensor({10, 7}, rng, -20, 20);
        auto y = ops::softmax(x);
        for (std::size_t r = 0; r < 10; ++r) {
            double s = 0;
            for (std::size_t i = 0; i < 7; ++i) {
                const float v = y[r * 7 + i];
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
                s += v;
            }
            CHECK(std::fabs(s - 1) <= 1e-6);
        }
        Tensor shifted = x;
        for (auto& v : shifted.storage()) v += 11.0f;
        CHECK(test::max_abs_diff(ops::softmax(shifted), y) <= 1e-6);
    }
}

TEST_CASE("gelu tanh approximation") {
    CHECK(ops::gelu_scalar(0.0f) == 0.0f);
    CHECK(std::fabs(ops::gelu_scalar(3.0) - 2.9964) <= 1e-3);
    CHECK(std::fabs(ops::gelu_scalar(-10.0)) <= 1e-4);
    // Independent evaluation of 0.5 x (1 + tanh(sqrt(2/pi)(x + 0.044715 x^3))).
    for (double x : {-2.5, -0.7, 0.3, 1.9}) {
        const double ref = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
        CHECK(ops::gelu_scalar(x) == doctest::Approx(ref).epsilon(1e-12));
        const double h = 1e-6;
        const double fd = (ops::gelu_scalar(x + h) - ops::gelu_scalar(x - h)) / (2 * h);
        CHECK(ops::gelu_grad_scalar(x) == doctest::Approx(fd).epsilon(1e-7));
    }
}

TEST_CASE("ops are pure and finite") {
    Rng rng(9);
    auto x = random_tensor({2, 3, 6, 6}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    auto b = random_tensor({4}, rng);
    ops::ConvSpec s{3, 4, 3, 3, 1, 1, 1};
    auto a1 = ops::gelu(ops::conv2d(x, w, b, s));
    auto a2 = ops::gelu(ops::conv2d(x, w, b, s));
    CHECK(a1 == a2);
    for (float v : a1.data()) CHECK(std::isfinite(v));
    auto sm = ops::softmax(random_tensor({4, 9}, rng, -80, 80));
    for (float v : sm.data()) CHECK(std::isfinite(v));
}

TEST_CASE("backward: bias gradient counts output elements") {
    Rng rng(10);
    Tape<float> t;
    Var x = t.leaf(random_tensor({2, 3, 5, 4}, rng));
    Var w = t.leaf(random_tensor({2, 3, 3, 3}, rng), true);
    Var b = t.leaf(Tensor({2}), true);
    ops::ConvSpec s{3, 2, 3, 3, 2, 1, 1};
    Var y = ag::conv2d(t, x, w, b, s);
    t.backward(ag::sum(t, y));
    const float per_channel = float(2 * s.out_extent(5, 3) * s.out_extent(4, 3));
    CHECK(t.grad(b)[0] == per_channel);
    CHECK(t.grad(b)[1] == per_channel);
}

TEST_CASE("backward: sum of softmax has zero gradient") {
    Rng rng(11);
    Tape<double> t;
    Var x = t.leaf(random_tensor<double>({3, 6}, rng, -4, 4), true);
    t.backward(ag::sum(t, ag::softmax(t, x)));
    for (double g : t.grad(x).data()) CHECK(std::fabs(g) <= 1e-6);
}

TEST_CASE("backward: conv -> gelu -> linear matches finite differences") {
    Rng rng(12);
    ParamStore<double> store;
    auto& x = store.add("x", random_tensor<double>({1, 2, 5, 5}, rng));
    auto& w = store.add("w", random_tensor<double>({3, 2, 3, 3}, rng, -0.5, 0.5));
    auto& b = store.add("b", random_tensor<double>({3}, rng));
    auto& lw = store.add("lw", random_tensor<double>({4, 5}, rng));
    auto& lb = store.add("lb", random_tensor<double>({4}, rng));
    ops::ConvSpec s{2, 3, 3, 3, 1, 1, 1};
    auto build = [&](Tape<double>& t) {
        Var y = ag::conv2d(t, t.param(x), t.param(w), t.param(b), s);
        return ag::sum(t, ag::linear(t, ag::gelu(t, y), t.param(lw), t.param(lb)));
    };
    store.zero_grad();
    {
        Tape<double> t;
        t.backward(build(t));
    }
    auto loss = [&] {
        Tape<double> t(false);
        return t.value(build(t))[0];
    };
    for (auto& p : store) {
        CHECK(p.has_grad);
        for (std::size_t i = 0; i < p.value.numel(); i += 3) {
            const double fd = finite_diff(p.value, i, 1e-6, loss);
            CHECK(test::rel_diff(p.grad[i], fd) <= 1e-4);
        }
    }
}

TEST_CASE("backward: reused parameter accumulates once per use") {
    ParamStore<float> store;
    auto& p = store.add("p", Tensor({3}, std::vector<float>{1, 2, 3}));
    Tape<float> t;
    Var a = t.param(p);
    Var a2 = t.param(p);
    CHECK(a.id == a2.id);
    t.backward(ag::sum(t, ag::add(t, a, ag::scale(t, a2, 2.0))));
    CHECK(p.has_grad);
    for (float g : p.grad.data()) CHECK(g == 3.0f);
}

TEST_CASE("backward without forward is a state error") {
    Tape<float> t;
    CHECK_THROWS_AS(t.backward(Var{}), StateError);
    Tape<float> t2;
    Var x = t2.leaf(Tensor({1}, 1.0f), true);
    Var y = ag::scale(t2, x, 2.0);
    t2.backward(y);
    CHECK_THROWS_AS(t2.backward(y), StateError);
}

TEST_CASE("WTEN save-load-save is byte identical") {
    Rng rng(13);
    for (const Dims& d : {Dims{7}, Dims{1, 64, 64}, Dims{2, 3, 4, 5}}) {
        auto t = random_tensor(d, rng, -1e3, 1e3);
        std::ostringstream a;
        write_wten(a, t);
        std::istringstream in(a.str());
        auto back = read_wten(in);
        CHECK(back == t);
        std::ostringstream b;
        write_wten(b, back);
        CHECK(a.str() == b.str());
    }
}

TEST_CASE("WTEN layout and errors") {
    Tensor t({2}, std::vector<float>{1.0f, -2.0f});
    std::ostringstream os;
    write_wten(os, t);
    const std::string bytes = os.str();
    CHECK(bytes.substr(0, 4) == "WTEN");
    CHECK(bytes.size() == 4 + 4 + 4 + 8 + 2 * 4);
    std::istringstream bad("WTEX" + bytes.substr(4));
    CHECK_THROWS_AS(read_wten(bad), IoError);
    std::istringstream truncated(bytes.substr(0, bytes.size() - 2));
    CHECK_THROWS_AS(read_wten(truncated), IoError);
}

TEST_CASE("PGM export") {
    Tensor img({1, 2, 3}, std::vector<float>{0.0f, 0.5f, 1.0f, -1.0f, 2.0f, 0.25f});
    const std::string pgm = encode_pgm(img);
    const std::string header = "P5\n3 2\n255\n";
    REQUIRE(pgm.size() == header.size() + 6);
    CHECK(pgm.substr(0, header.size()) == header);
    const auto* px = reinterpret_cast<const unsigned char*>(pgm.data() + header.size());
    CHECK(px[0] == 0);
    CHECK(px[2] == 255);
    CHECK(px[3] == 0);
    CHECK(px[4] == 255);
    CHECK_THROWS_AS(encode_pgm(img, 1.0, 1.0), ConfigError);
}

}  // TEST_SUITE
