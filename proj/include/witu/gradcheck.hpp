#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "witu/autograd.hpp"
#include "witu/param_store.hpp"

namespace witu::gradcheck {

// Builds the checked op's output on a tape from the store's parameters.
template <typename T>
using OutputFn = std::function<Var(Tape<T>&, ParamStore<T>&)>;

struct Options {
    std::size_t samples = 100;  // minimum coordinates per group
    std::uint64_t seed = 0;
    double step = 1e-5;    // central-difference step, evaluated in double
    double tolerance = 0;  // 0: 1e-2 (float) / 1e-4 (double)
    double floor = 1e-4;   // relative-error denominator floor
    std::string fault_op;  // negate the backward of this op on the analytic pass
};

template <typename T>
double default_tolerance();

struct Result {
    std::string group;
    std::size_t checked = 0;
    std::size_t failures = 0;
    double max_rel_error = 0;
    double tolerance = 0;
    std::string worst;  // "name[index]: analytic vs numeric"
    bool passed() const { return failures == 0 && checked > 0; }
};

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

// Compares tape gradients of L = sum(w * fn()) (w fixed, random) against
// central differences of the same L evaluated by `reference` on a double copy
// of the parameters, on sampled coordinates of every parameter. Parameters
// are grouped by `group_of` (one group named `name` if empty).
template <typename T>
std::vector<Result> check(const std::string& name, ParamStore<T>& store, const OutputFn<T>& fn,
                          const OutputFn<double>& reference, const Options& opt,
                          const std::function<std::string(const std::string&)>& group_of = {});

// Named end-to-end cases covering every parameterized op and the network.
struct Case {
    std::string name;
    std::string description;
};
const std::vector<Case>& cases();

// Runs one case (or all when name is empty) at precision T.
template <typename T>
std::vector<Result> run_suite(const Options& opt, const std::string& case_name = "");

}  // namespace witu::gradcheck
