#include "witu/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "witu/errors.hpp"
#include "witu/net_config.hpp"
#include "witu/rng.hpp"
#include "witu/window_ops.hpp"
#include "witu/witunet.hpp"
#include "witu/wt_block.hpp"

namespace witu::gradcheck {

template <>
double default_tolerance<float>() { return 1e-2; }
template <>
double default_tolerance<double>() { return 1e-4; }

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
    return std::fabs(analytic - numeric) / denom;
}


template <typename T>
std::vector<Result> check(const std::string& name, ParamStore<T>& store, const OutputFn<T>& fn,
                          const OutputFn<double>& reference, const Options& opt,
                          const std::function<std::string(const std::string&)>& group_of) {
    const double h = opt.step;
    const double tol = opt.tolerance > 0 ? opt.tolerance : default_tolerance<T>();
    if (!(h > 0) || !(opt.floor > 0)) throw ConfigError("gradcheck step and floor must be positive");
    auto group = [&](const std::string& p) { return group_of ? group_of(p) : name; };

    // Analytic pass at precision T with L = sum(w * out), w fixed and random.
    Rng rng(opt.seed);
    BasicTensor<double> weights;
    store.zero_grad();
    {
        Tape<T> tape;
        if (!opt.fault_op.empty()) tape.inject_sign_fault(opt.fault_op);
        Var out = fn(tape, store);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        BasicTensor<T> w(tape.value(out).dims());
        for (auto& v : w.storage()) v = static_cast<T>(u(rng));
        weights = w.template cast<double>();
        tape.backward(out, w);
    }

    // Numeric pass: the same L in double at the same parameter values.
    ParamStore<double> shadow = store.template cast<double>();
    auto eval = [&] {
        Tape<double> tape(false);
        const auto& out = tape.value(reference(tape, shadow));
        double acc = 0;
        for (std::size_t i = 0; i < out.numel(); ++i) acc += out[i] * weights[i];
        return acc;
    };
    auto central = [&](Parameter<double>& p, std::size_t i) {
        const double orig = p.value[i];
        p.value[i] = orig + h;
        const double fp = eval();
        p.value[i] = orig - h;
        const double fm = eval();
        p.value[i] = orig;
        return (fp - fm) / (2 * h);
    };

    // Parameters per group, then coordinates spread evenly over them.
    std::vector<std::string> order;
    std::vector<std::vector<Parameter<T>*>> members;
    for (auto& p : store) {
        const std::string g = group(p.name);
        auto it = std::find(order.begin(), order.end(), g);
        if (it == order.end()) {
            order.push_back(g);
            members.emplace_back();
            it = order.end() - 1;
        }
        members[it - order.begin()].push_back(&p);
    }

    std::vector<Result> results;
    for (std::size_t gi = 0; gi < order.size(); ++gi) {
        Result r;
        r.group = order[gi];
        r.tolerance = tol;
        const std::size_t per_param = std::max<std::size_t>(8, (opt.samples + members[gi].size() - 1) / members[gi].size());
        for (Parameter<T>* p : members[gi]) {
            const std::size_t n = p->value.numel();
            std::vector<std::size_t> idx(n);
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            if (n > per_param) {
                std::shuffle(idx.begin(), idx.end(), rng);
                idx.resize(per_param);
            }
            for (std::size_t i : idx) {
                const double numeric = central(shadow.at(p->name), i);
                const double analytic = p->grad[i];
                const double err = relative_error(analytic, numeric, opt.floor);
                ++r.checked;
                if (!(err <= tol)) ++r.failures;
                if (!(err <= r.max_rel_error)) {
                    r.max_rel_error = err;
                    std::ostringstream os;
                    os << p->name << '[' << i << "]: analytic " << analytic << " vs numeric " << numeric;
                    r.worst = os.str();
                }
            }
        }
        results.push_back(std::move(r));
    }
    return results;
}

namespace {

template <typename T>
BasicTensor<T> uniform(const Dims& dims, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    BasicTensor<T> t(dims);
    for (auto& v : t.storage()) v = static_cast<T>(u(rng));
    return t;
}

// Perturbs constant-initialized parameters (zero biases and tables, unit
// gamma) so no gradient path is trivially symmetric. Random weights keep
// their fan-in scale.
template <typename T>
void jitter(ParamStore<T>& store, Rng& rng) {
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (auto& p : store) {
        const auto vals = p.value.data();
        if (!std::all_of(vals.begin(), vals.end(), [&](T v) { return v == vals[0]; })) continue;
        for (auto& v : p.value.storage()) v = static_cast<T>(v + u(rng));
    }
}

std::string top_group(const std::string& name) {
    if (name == "input") return "input";
    return name.substr(0, name.find('.'));
}

template <typename T>
std::vector<Result> run_case(const std::string& name, const Options& opt) {
    Rng rng(mix_seed(opt.seed, std::hash<std::string>{}(name)));
    ParamStore<T> s;
    auto prefixed = [&](const std::string& g) { return name + "." + g; };
    auto by_param = [&](const std::string& p) { return prefixed(p); };

    if (name == "conv2d" || name == "conv2d_grouped") {
        const bool grouped = name == "conv2d_grouped";
        ops::ConvSpec spec{4, grouped ? 4u : 3u, 3, 3, grouped ? 1u : 2u, 1, grouped ? 2u : 1u};
        s.add("input", uniform<T>({2, 4, 7, 6}, -1, 1, rng));
        s.add("w", uniform<T>(spec.weight_dims(), -0.5, 0.5, rng));
        s.add("b", uniform<T>({spec.out_channels}, -0.5, 0.5, rng));
        auto loss = [spec](auto& t, auto& st) {
            return ag::conv2d(t, t.param(st.at("input")), t.param(st.at("w")), t.param(st.at("b")), spec);
        };
        return check<T>(name, s, loss, loss, opt, by_param);
    }
    if (name == "conv_transpose2d") {
        s.add("input", uniform<T>({2, 4, 3, 5}, -1, 1, rng));
        s.add("w", uniform<T>({4, 3, 2, 2}, -0.5, 0.5, rng));
        s.add("b", uniform<T>({3}, -0.5, 0.5, rng));
        auto loss = [](auto& t, auto& st) {
            return ag::conv_transpose2d(t, t.param(st.at("input")), t.param(st.at("w")), t.param(st.at("b")), 2);
        };
        return check<T>(name, s, loss, loss, opt, by_param);
    }
    if (name == "linear") {
        s.add("input", uniform<T>({3, 5, 6}, -1, 1, rng));
        s.add("w", uniform<T>({4, 6}, -0.5, 0.5, rng));
        s.add("b", uniform<T>({4}, -0.5, 0.5, rng));
        auto loss = [](auto& t, auto& st) {
            return ag::linear(t, t.param(st.at("input")), t.param(st.at("w")), t.param(st.at("b")));
        };
        return check<T>(name, s, loss, loss, opt, by_param);
    }
    if (name == "layer_norm") {
        s.add("input", uniform<T>({4, 5, 8}, -2, 2, rng));
        s.add("gamma", uniform<T>({8}, 0.5, 1.5, rng));
        s.add("beta", uniform<T>({8}, -0.5, 0.5, rng));
        auto loss = [](auto& t, auto& st) {
            return ag::layer_norm(t, t.param(st.at("input")), t.param(st.at("gamma")), t.param(st.at("beta")));
        };
        return check<T>(name, s, loss, loss, opt, by_param);
    }
    if (name == "w_msa") {
        // 6x6 image in 4x4 windows: exercises padding masks and the bias table.
        BlockOptions bo;
        bo.channels = 8;
        bo.heads = 2;
        bo.window = 4;
        register_wt_block(s, "blk", bo, rng);
        jitter(s, rng);
        s.add("input", uniform<T>({1, 8, 6, 6}, -1, 1, rng));
        auto loss = [bo](auto& t, auto& st) {
            auto vars = bind_wt_block(t, st, "blk", bo);
            return windowed_attention(t, t.param(st.at("input")), vars.attn);
        };
        auto group = [&](const std::string& p) {
            return p.find(".attn.") != std::string::npos || p == "input" ? prefixed(p == "input" ? p : p.substr(9))
                                                                         : std::string();
        };
        auto results = check<T>(name, s, loss, loss, opt, group);
        std::erase_if(results, [](const Result& r) { return r.group.empty(); });
        return results;
    }
    if (name == "lipe" || name == "lipe_depthwise") {
        BlockOptions bo;
        bo.channels = 4;
        bo.heads = 1;
        bo.window = 4;
        bo.depthwise_lipe = name == "lipe_depthwise";
        register_wt_block(s, "blk", bo, rng);
        jitter(s, rng);
        s.add("input", uniform<T>({1, 4, 5, 6}, -1, 1, rng));
        auto loss = [bo](auto& t, auto& st) {
            auto vars = bind_wt_block(t, st, "blk", bo);
            return lipe(t, t.param(st.at("input")), vars.lipe);
        };
        auto group = [&](const std::string& p) {
            return p.find(".lipe.") != std::string::npos || p == "input" ? prefixed(p == "input" ? p : p.substr(9))
                                                                         : std::string();
        };
        auto results = check<T>(name, s, loss, loss, opt, group);
        std::erase_if(results, [](const Result& r) { return r.group.empty(); });
        return results;
    }
    if (name == "wt_block" || name == "wt_block_mlp") {
        BlockOptions bo;
        bo.channels = 8;
        bo.heads = 2;
        bo.window = 4;
        bo.use_lipe = name == "wt_block";
        register_wt_block(s, "blk", bo, rng);
        jitter(s, rng);
        s.add("input", uniform<T>({1, 8, 5, 4}, -1, 1, rng));
        auto loss = [bo](auto& t, auto& st) {
            return wt_block(t, t.param(st.at("input")), bind_wt_block(t, st, "blk", bo));
        };
        auto group = [&](const std::string& p) {
            if (p == "input") return prefixed(p);
            auto rest = p.substr(4);
            return prefixed(rest.substr(0, rest.find('.')));
        };
        return check<T>(name, s, loss, loss, opt, group);
    }
    if (name == "network" || name == "network_plain" || name == "network_padded") {
        NetConfig cfg = NetConfig::desk();
        cfg.use_nested = name != "network_plain";
        const std::size_t side = name == "network_padded" ? 6 : 16;
        s = build_params<T>(cfg, {mix_seed(opt.seed, 1), false});
        jitter(s, rng);
        s.add("input", uniform<T>({1, 1, side, side}, 0, 1, rng));
        auto loss = [cfg](auto& t, auto& st) {
            return forward(t, t.param(st.at("input")), st, cfg);
        };
        return check<T>(name, s, loss, loss, opt, [&](const std::string& p) { return prefixed(top_group(p)); });
    }
    throw ConfigError("unknown gradcheck case '" + name + "'");
}

}  // namespace

const std::vector<Case>& cases() {
    static const std::vector<Case> all{
        {"conv2d", "strided 3x3 convolution"},
        {"conv2d_grouped", "grouped 3x3 convolution"},
        {"conv_transpose2d", "2x2 stride-2 transposed convolution"},
        {"linear", "token-wise linear map"},
        {"layer_norm", "layer norm over the last axis"},
        {"w_msa", "windowed attention with padding mask and bias table"},
        {"lipe", "LiPe feed-forward"},
        {"lipe_depthwise", "LiPe feed-forward, depthwise conv"},
        {"wt_block", "window transformer block"},
        {"wt_block_mlp", "window transformer block, MLP feed-forward"},
        {"network", "full nested network (desk config)"},
        {"network_plain", "full network with plain skips"},
        {"network_padded", "full network on an input that needs padding"},
    };
    return all;
}

template <typename T>
std::vector<Result> run_suite(const Options& opt, const std::string& case_name) {
    std::vector<Result> out;
    bool found = case_name.empty();
    for (const auto& c : cases()) {
        if (!case_name.empty() && c.name != case_name) continue;
        found = true;
        auto r = run_case<T>(c.name, opt);
        out.insert(out.end(), r.begin(), r.end());
    }
    if (!found) throw ConfigError("unknown gradcheck case '" + case_name + "'");
    return out;
}

template std::vector<Result> check(const std::string&, ParamStore<float>&, const OutputFn<float>&,
                                   const OutputFn<double>&, const Options&,
                                   const std::function<std::string(const std::string&)>&);
template std::vector<Result> check(const std::string&, ParamStore<double>&, const OutputFn<double>&,
                                   const OutputFn<double>&, const Options&,
                                   const std::function<std::string(const std::string&)>&);
template std::vector<Result> run_suite<float>(const Options&, const std::string&);
template std::vector<Result> run_suite<double>(const Options&, const std::string&);

}  // namespace witu::gradcheck
