#include <doctest.h>

#include <cstdio>
#include <sys/wait.h>

#include "test_util.hpp"
#include "witu/checkpoint.hpp"
#include "witu/data.hpp"
#include "witu/tensor_io.hpp"
#include "witu/witunet.hpp"

using namespace witu;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

Run cli(const std::string& args) {
    const std::string cmd = quote(WITUNET_CLI) + " " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

bool contains(const std::string& s, const std::string& needle) { return s.find(needle) != std::string::npos; }

std::string make_data(const test::TempDir& dir, const std::string& name = "data") {
    const auto out = dir / name;
    auto r = cli("make-data --out " + quote(out.string()) + " --n-train 2 --n-test 2 --size 16 --seed 5");
    REQUIRE(r.code == 0);
    return out.string();
}

// One quick desk run: 1 epoch over 2 pairs.
std::string train_small(const test::TempDir& dir, const std::string& data, const std::string& name,
                        const std::string& extra = "") {
    const auto ck = (dir / name).string();
    auto r = cli("train --data " + quote(data) + " --out " + quote(ck) + " --epochs 1 " + extra);
    INFO(r.output);
    REQUIRE(r.code == 0);
    return ck;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("make-data writes the requested corpus") {
    test::TempDir dir("cli_md");
    const auto out = make_data(dir);
    auto m = data::read_manifest(std::filesystem::path(out) / data::kManifestName);
    CHECK(m.train().size() == 2);
    CHECK(m.test().size() == 2);
    CHECK(m.load(m.entries[0]).ldct.dims() == Dims{1, 16, 16});

    const auto again = make_data(dir, "again");
    for (const auto& e : m.entries) {
        CHECK(read_file(std::filesystem::path(out) / e.ldct) == read_file(std::filesystem::path(again) / e.ldct));
    }

    write_file_atomic(dir / "blocker", "x");
    auto bad = cli("make-data --out " + quote((dir / "blocker").string()) + " --n-train 1 --n-test 1 --size 16");
    CHECK(bad.code != 0);
    CHECK_FALSE(std::filesystem::exists(dir / "blocker" / data::kManifestName));
    CHECK(cli("make-data --out " + quote((dir / "z").string()) + " --size 8").code == 1);
}

TEST_CASE("train, denoise and eval") {
    test::TempDir dir("cli_train");
    const auto data = make_data(dir);
    const auto ck = train_small(dir, data, "run.witu");
    CHECK(std::filesystem::exists(ck));
    CHECK(std::filesystem::exists(ck + ".steps.csv"));
    auto loaded = load_checkpoint(ck);
    CHECK(loaded.net == NetConfig::desk());
    CHECK(loaded.params.step == 2);

    SUBCASE("ablations change the stored configuration") {
        auto lipe = load_checkpoint(train_small(dir, data, "lipe.witu", "--ablate-lipe"));
        CHECK_FALSE(lipe.net.use_lipe);
        CHECK(lipe.net.use_nested);
        auto nested = load_checkpoint(train_small(dir, data, "nested.witu", "--ablate-nested"));
        CHECK(nested.net.use_lipe);
        CHECK_FALSE(nested.net.use_nested);
    }
    SUBCASE("missing corpus names the manifest") {
        auto r = cli("train --data " + quote((dir / "nowhere").string()) + " --out " + quote((dir / "x.witu").string()));
        CHECK(r.code == 2);
        CHECK(contains(r.output, "manifest"));
        CHECK(contains(r.output, "nowhere"));
    }
    SUBCASE("denoise with a zero-output network returns the input") {
        NetConfig net = NetConfig::desk();
        const auto zero = (dir / "zero.witu").string();
        save_checkpoint(zero, net, build_params<float>(net, {0, true}));
        auto m = data::read_manifest(std::filesystem::path(data) / data::kManifestName);
        const auto in = std::filesystem::path(data) / m.entries[0].ldct;
        const auto out = (dir / "out.wten").string();
        auto r = cli("denoise --checkpoint " + quote(zero) + " --input " + quote(in.string()) + " --output " + quote(out));
        REQUIRE(r.code == 0);
        CHECK(load_tensor(out) == load_tensor(in));

        const auto out2 = (dir / "out2.wten").string();
        REQUIRE(cli("denoise --checkpoint " + quote(ck) + " --input " + quote(in.string()) + " --output " + quote(out2)).code == 0);
        auto once = load_tensor(out2);
        CHECK(once.dims() == Dims{1, 16, 16});
        CHECK(once == denoise(load_tensor(in), loaded.params, loaded.net));
    }
    SUBCASE("eval writes per-image csv and summary json") {
        const auto csv = (dir / "e.csv").string(), json = (dir / "e.json").string();
        auto r = cli("eval --checkpoint " + quote(ck) + " --data " + quote(data) + " --csv " + quote(csv) + " --json " +
                     quote(json));
        REQUIRE(r.code == 0);
        const std::string text = read_file(csv);
        CHECK(text.rfind("index,source,psnr,ssim,rmse\n", 0) == 0);
        CHECK(contains(text, "\n1,model,"));
        CHECK(contains(text, "\n1,input-baseline,"));
        auto j = nlohmann::json::parse(read_file(json));
        CHECK(j["metric_max"] == 1.0);
        CHECK(j.contains("model"));
        CHECK(j.contains("input-baseline"));

        REQUIRE(cli("eval --checkpoint " + quote(ck) + " --data " + quote(data) + " --csv " + quote(csv) + " --json " +
                    quote(json) + " --metric-max 400")
                    .code == 0);
        CHECK(nlohmann::json::parse(read_file(json))["metric_max"] == 400.0);
    }
}

TEST_CASE("gradcheck exit codes") {
    auto ok = cli("gradcheck --case linear --samples 20");
    CHECK(ok.code == 0);
    CHECK(contains(ok.output, "PASS"));
    auto bad = cli("gradcheck --case linear --samples 20 --fault-op linear");
    CHECK(bad.code == 2);
    CHECK(contains(bad.output, "FAIL"));
    CHECK(cli("gradcheck --case no-such-case").code != 0);
}

TEST_CASE("help lists flags with defaults") {
    auto r = cli("train --help");
    CHECK(r.code == 0);
    for (const char* flag : {"--lr", "--epochs", "--window", "--ablate-lipe", "--ablate-nested", "--seed"})
        CHECK(contains(r.output, flag));
    CHECK(contains(r.output, "0.0005"));
    auto top = cli("--help");
    CHECK(top.code == 0);
    CHECK(contains(top.output, "--config"));
    CHECK(contains(top.output, "make-data"));
    CHECK(cli("").code == 1);
    CHECK(cli("train --no-such-flag").code == 1);
}

TEST_CASE("config files") {
    test::TempDir dir("cli_cfg");
    const auto data = make_data(dir);
    const auto cfg = (dir / "run.cfg").string();
    write_file_atomic(cfg, "# quick run\nepochs = 1\nlr = 0.001\nseed = 4\n");
    const auto ck = (dir / "c.witu").string();
    auto r = cli("train --config " + quote(cfg) + " --data " + quote(data) + " --out " + quote(ck) + " --seed 9");
    INFO(r.output);
    REQUIRE(r.code == 0);
    CHECK(contains(r.output, "overridden by command-line flag"));
    auto log = nlohmann::json::parse(read_file(ck + ".log.json"));
    CHECK(log["seed"] == 9);
    CHECK(log["steps"] == 2);
    CHECK(contains(r.output, "\"lr\":0.001"));

    write_file_atomic(cfg, "epochs = 1\nlearning_rate = 3\n");
    auto bad = cli("train --config " + quote(cfg) + " --data " + quote(data) + " --out " + quote(ck));
    CHECK(bad.code == 1);
    CHECK(contains(bad.output, "learning_rate"));
    CHECK(contains(bad.output, "epochs"));

    write_file_atomic(cfg, "this line has no separator\n");
    CHECK(cli("train --config " + quote(cfg) + " --data " + quote(data) + " --out " + quote(ck)).code == 1);
}

TEST_CASE("bench prints a table") {
    auto r = cli("bench --sizes 16,32 --window 4 --channels 8 --min-seconds 0.01");
    CHECK(r.code == 0);
    CHECK(contains(r.output, "flops_windowed"));
    CHECK(contains(r.output, "log-log slope"));
}

}  // TEST_SUITE
