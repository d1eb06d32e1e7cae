#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "test_util.hpp"
#include "witu/checkpoint.hpp"
#include "witu/errors.hpp"
#include "witu/tensor_io.hpp"
#include "witu/training.hpp"
#include "witu/witunet.hpp"

using namespace witu;
using test::random_tensor;

namespace {

std::filesystem::path small_corpus(const test::TempDir& dir, std::size_t n_train = 2, std::size_t n_test = 1) {
    data::PhantomSpec ps;
    ps.size = 16;
    ps.seed = 3;
    data::NoiseSpec ns;
    ns.seed = 4;
    return data::build_corpus(n_train, n_test, ps, ns, dir / "corpus");
}

TrainRequest small_request(const std::filesystem::path& manifest, const std::filesystem::path& ckpt) {
    TrainRequest r;
    r.net = NetConfig::desk();
    r.optim.epochs = 2;
    r.optim.lr = 2e-3;
    r.optim.seed = 11;
    r.manifest = manifest;
    r.out.checkpoint = ckpt;
    return r;
}

std::string checkpoint_bytes(const NetConfig& net, const ParamStore<float>& p, const nlohmann::json& train = {}) {
    std::ostringstream os;
    write_checkpoint(os, net, p, train.is_null() ? nlohmann::json::object() : train);
    return os.str();
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("loss_mse values and gradient") {
    Rng rng(1);
    auto target = random_tensor({1, 1, 4, 5}, rng);
    {
        Tape<float> t;
        CHECK(t.value(loss_mse(t, t.leaf(target), target))[0] == 0.0f);
    }
    {
        Tape<float> t;
        Tensor shifted = target;
        for (auto& v : shifted.storage()) v += 0.5f;
        CHECK(t.value(loss_mse(t, t.leaf(shifted), target))[0] == doctest::Approx(0.25f).epsilon(1e-6));
    }
    auto target_d = target.cast<double>();
    auto pred = random_tensor<double>({1, 1, 4, 5}, rng);
    Tape<double> t;
    Var p = t.leaf(pred, true);
    t.backward(loss_mse(t, p, target_d));
    const auto& g = t.grad(p);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        CHECK(g[i] == doctest::Approx(2 * (pred[i] - target_d[i]) / 20).epsilon(1e-12));
        auto loss_at = [&](double d) {
            auto q = pred;
            q[i] += d;
            Tape<double> tt(false);
            return tt.value(loss_mse(tt, tt.leaf(q), target_d))[0];
        };
        CHECK(g[i] == doctest::Approx((loss_at(1e-6) - loss_at(-1e-6)) / 2e-6).epsilon(1e-6));
    }
    Tape<float> bad;
    CHECK_THROWS_AS(loss_mse(bad, bad.leaf(Tensor({2, 2})), Tensor({2, 3})), ShapeError);
}

TEST_CASE("adamw with zero gradient and zero decay is the identity") {
    Rng rng(2);
    ParamStore<float> s;
    auto& p = s.add("w", random_tensor({3, 4}, rng));
    const auto before = p.value;
    OptimConfig cfg;
    cfg.weight_decay = 0;
    for (int i = 0; i < 3; ++i) {
        s.zero_grad();
        p.has_grad = true;
        adamw_step(s, cfg);
    }
    CHECK(p.value == before);
    CHECK(s.step == 3);
}

TEST_CASE("adamw first step on a constant gradient moves by lr") {
    ParamStore<double> s;
    auto& p = s.add("w", BasicTensor<double>({1}, 0.3));
    OptimConfig cfg;
    cfg.lr = 1e-2;
    cfg.weight_decay = 0;
    p.grad[0] = 2.5;
    p.has_grad = true;
    adamw_step(s, cfg);
    // m_hat = g, v_hat = g^2: the step is lr * g / (|g| + eps).
    CHECK(p.value[0] == doctest::Approx(0.3 - 1e-2 * 2.5 / (2.5 + 1e-8)).epsilon(1e-14));
    CHECK(std::fabs(p.value[0] - (0.3 - 1e-2)) <= 1e-9);
}

TEST_CASE("adamw weight decay alone scales by 1 - lr*lambda") {
    ParamStore<double> s;
    auto& p = s.add("w", BasicTensor<double>({2}, std::vector<double>{1.5, -2.0}));
    OptimConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.2;
    p.has_grad = true;
    adamw_step(s, cfg);
    CHECK(p.value[0] == doctest::Approx(1.5 * (1 - 0.1 * 0.2)).epsilon(1e-14));
    CHECK(p.value[1] == doctest::Approx(-2.0 * (1 - 0.1 * 0.2)).epsilon(1e-14));
}

TEST_CASE("adamw follows the recurrences over several steps") {
    ParamStore<double> s;
    auto& p = s.add("w", BasicTensor<double>({1}, 0.7));
    OptimConfig cfg;
    cfg.lr = 0.05;
    cfg.weight_decay = 0.01;
    double theta = 0.7, m = 0, v = 0;
    const double grads[] = {0.4, -1.2, 0.05, 2.0};
    for (int t = 1; t <= 4; ++t) {
        const double g = grads[t - 1];
        p.grad[0] = g;
        p.has_grad = true;
        adamw_step(s, cfg);
        m = 0.9 * m + 0.1 * g;
        v = 0.99 * v + 0.01 * g * g;
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.99, t));
        theta = theta * (1 - 0.05 * 0.01) - 0.05 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(p.value[0] == doctest::Approx(theta).epsilon(1e-12));
    }
}

TEST_CASE("adamw without gradients is a state error") {
    ParamStore<float> s;
    s.add("a", Tensor({2}));
    s.add("b", Tensor({2}));
    s.at("a").has_grad = true;
    CHECK_THROWS_AS(adamw_step(s, OptimConfig{}), StateError);
}

TEST_CASE("optimizer config") {
    OptimConfig c;
    CHECK(c.lr == 5e-4);
    CHECK(c.beta1 == 0.9);
    CHECK(c.beta2 == 0.99);
    CHECK(c.epochs == 200);
    CHECK(c.batch_size == 1);
    CHECK(OptimConfig::desk().epochs == 50);
    CHECK(OptimConfig::from_json(c.to_json()) == c);
    c.lr = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = OptimConfig{};
    c.beta2 = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    OptimConfig cos;
    cos.cosine = true;
    CHECK(scheduled_lr(OptimConfig{}, 7, 10) == OptimConfig{}.lr);
    CHECK(scheduled_lr(cos, 1, 100) == doctest::Approx(cos.lr).epsilon(1e-3));
    CHECK(scheduled_lr(cos, 100, 100) < 1e-3 * cos.lr);
    CHECK(scheduled_lr(cos, 30, 100) > scheduled_lr(cos, 60, 100));
}

TEST_CASE("checkpoint save-load-save is byte identical") {
    Rng rng(3);
    NetConfig net = NetConfig::desk();
    auto p = build_params<float>(net, {5, false});
    for (auto& q : p) {
        q.m = random_tensor(q.value.dims(), rng);
        q.v = random_tensor(q.value.dims(), rng, 0, 1);
    }
    p.step = 17;
    nlohmann::json train{{"epoch", 3}, {"best_psnr", 30.5}};
    const std::string a = checkpoint_bytes(net, p, train);
    std::istringstream in(a);
    auto ck = read_checkpoint(in);
    CHECK(ck.net == net);
    CHECK(ck.params.step == 17);
    CHECK(ck.params.at("out.w").m == p.at("out.w").m);
    CHECK(checkpoint_bytes(ck.net, ck.params, ck.train) == a);

    NetConfig other = net;
    other.base_channels = 16;
    other.head_dim = 8;
    std::istringstream wrong(checkpoint_bytes(other, build_params<float>(net)));
    CHECK_THROWS_AS(read_checkpoint(wrong), ShapeError);
    std::istringstream garbage("WITX0000");
    CHECK_THROWS_AS(read_checkpoint(garbage), IoError);
}

TEST_CASE("training is deterministic and logs consistently") {
    test::TempDir dir("train_det");
    auto manifest = small_corpus(dir);
    auto a = train(small_request(manifest, dir / "a" / "run.witu"));
    auto b = train(small_request(manifest, dir / "b" / "run.witu"));
    REQUIRE(a.steps.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a.steps[i].step == i + 1);
        CHECK(a.steps[i].loss == b.steps[i].loss);
        CHECK(std::isfinite(a.steps[i].loss));
        CHECK(a.steps[i].loss >= 0);
    }
    CHECK(read_file(dir / "a" / "run.witu") == read_file(dir / "b" / "run.witu"));
    CHECK(a.epochs.size() == 2);
    CHECK(a.epoch_orders.size() == 2);
    for (auto order : a.epoch_orders) {
        std::sort(order.begin(), order.end());
        CHECK(order == std::vector<std::size_t>{0, 1});
    }
    TrainPaths paths{dir / "a" / "run.witu"};
    CHECK(std::filesystem::exists(paths.best()));
    const std::string steps = read_file(paths.steps_csv());
    CHECK(steps.rfind("step,epoch,loss\n", 0) == 0);
    CHECK(std::count(steps.begin(), steps.end(), '\n') == 5);
    CHECK(read_file(paths.epochs_csv()).rfind("epoch,psnr,ssim,rmse\n", 0) == 0);
    auto log = nlohmann::json::parse(read_file(paths.log_json()));
    CHECK(log["seed"] == 11);
    CHECK(log["epoch_orders"].size() == 2);

    auto c = small_request(manifest, dir / "c" / "run.witu");
    c.optim.seed = 12;
    CHECK(train(c).steps[0].loss != a.steps[0].loss);
}

TEST_CASE("resume continues the interrupted trajectory exactly") {
    test::TempDir dir("train_resume");
    auto manifest = small_corpus(dir, 3, 1);
    auto full_req = small_request(manifest, dir / "full.witu");
    full_req.optim.cosine = true;
    auto full = train(full_req);
    REQUIRE(full.steps.size() == 6);

    for (std::size_t cut : {2u, 4u, 5u}) {
        const auto path = dir / ("part" + std::to_string(cut) + ".witu");
        auto part_req = small_request(manifest, path);
        part_req.optim.cosine = true;
        part_req.optim.max_steps = cut;
        auto part = train(part_req);
        CHECK(part.steps.size() == cut);
        auto ck = load_checkpoint(path);
        CHECK(ck.params.step == cut);

        auto resume_req = small_request(manifest, path);
        resume_req.resume = path;
        auto rest = train(resume_req);
        REQUIRE(rest.steps.size() == 6);
        for (std::size_t i = 0; i < 6; ++i) CHECK(rest.steps[i].loss == full.steps[i].loss);
        auto a = load_checkpoint(dir / "full.witu"), b = load_checkpoint(path);
        for (auto& p : a.params) {
            CHECK(p.value == b.params.at(p.name).value);
            CHECK(p.m == b.params.at(p.name).m);
            CHECK(p.v == b.params.at(p.name).v);
        }
    }
}

TEST_CASE("non-finite loss aborts naming the step") {
    test::TempDir dir("train_nan");
    auto manifest = small_corpus(dir);
    auto m = data::read_manifest(manifest);
    Tensor poisoned = m.load(m.train()[0]).ldct;
    poisoned[5] = std::numeric_limits<float>::quiet_NaN();
    save_tensor(m.root / m.train()[0].ldct, poisoned);
    auto req = small_request(manifest, dir / "nan.witu");
    req.optim.augment = false;
    try {
        train(req);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        const std::string what = e.what();
        CHECK(what.find("at step") != std::string::npos);
        CHECK(what.find("largest gradient in '") != std::string::npos);
    }
}

TEST_CASE("evaluation of the zero-initialized network equals the baseline") {
    test::TempDir dir("eval");
    auto manifest = data::read_manifest(small_corpus(dir, 1, 3));
    NetConfig net = NetConfig::desk();
    auto store = build_params<float>(net, {1});
    auto ev = evaluate(store, net, manifest, {});
    REQUIRE(ev.tags.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(ev.model.per_image[i].psnr == ev.baseline.per_image[i].psnr);
        CHECK(ev.model.per_image[i].ssim == ev.baseline.per_image[i].ssim);
        CHECK(ev.model.per_image[i].rmse == ev.baseline.per_image[i].rmse);
    }
    const std::string csv = ev.csv();
    CHECK(csv.rfind("index,source,psnr,ssim,rmse\n", 0) == 0);
    for (int i = 0; i < 3; ++i) {
        CHECK(csv.find("\n" + std::to_string(i) + ",model,") != std::string::npos);
        CHECK(csv.find("\n" + std::to_string(i) + ",input-baseline,") != std::string::npos);
    }
    auto summary = ev.summary();
    CHECK(summary["model"]["psnr"]["mean"] == summary["input-baseline"]["psnr"]["mean"]);

    EvalOptions hu;
    hu.hounsfield = true;
    auto ev_hu = evaluate(store, net, manifest, metrics::MetricConfig::hounsfield(), hu);
    CHECK(ev_hu.baseline.rmse.mean == doctest::Approx(400 * ev.baseline.rmse.mean).epsilon(1e-4));
    CHECK(ev_hu.baseline.psnr.mean == doctest::Approx(ev.baseline.psnr.mean).epsilon(1e-4));

    EvalOptions train_split;
    train_split.test_split = false;
    CHECK(evaluate(store, net, manifest, {}, train_split).tags.size() == 1);
}

TEST_CASE("evaluation rejects multi-channel data") {
    test::TempDir dir("eval_shape");
    auto path = small_corpus(dir, 1, 1);
    auto m = data::read_manifest(path);
    const auto e = m.test()[0];
    save_tensor(m.root / e.ldct, Tensor({2, 16, 16}));
    save_tensor(m.root / e.fdct, Tensor({2, 16, 16}));
    NetConfig net = NetConfig::desk();
    auto store = build_params<float>(net);
    CHECK_THROWS_AS(evaluate(store, net, m, {}), ConfigError);
}

}  // TEST_SUITE
