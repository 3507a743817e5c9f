#pragma once

#include <functional>
#include <memory>

#include "lcnet/modules.hpp"

namespace lcnet {

struct GradTensorReport {
    std::string tensor;
    int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::string node;
    double h = 0.0;
    double tol = 0.0;
    bool pass = true;
    std::vector<GradTensorReport> cases;
};

// One registered check: a graph builder plus the shapes it consumes. The
// checker projects the output onto a fixed random cotangent g and compares
// every input/parameter element of the vjp against the central difference
// (phi(t+h) - phi(t-h)) / 2h with phi = <g, f(t)>. Branch decisions
// (relu masks, argmax witnesses) recorded on the base forward are replayed
// during probes, which keeps the quotient on the differentiated branch and
// excludes kink neighborhoods from the comparison.
struct GradCheckTarget {
    std::string name;
    double h = 1e-5;
    double tol = 1e-6;
    std::vector<std::vector<int64_t>> input_shapes;
    std::vector<std::string> input_layouts;
    ad::Mode mode = ad::Mode::Train;
    bool randomize_bn_stats = false;  // eval-mode checks need non-trivial running stats
    std::function<std::unique_ptr<Module>(Rng&)> make_module;  // may be empty
    std::function<ad::Var(Module*, const std::vector<ad::Var>&)> apply;
};

GradCheckReport run_grad_check(const GradCheckTarget& target, uint64_t seed, bool inject_fault = false);

// every primitive and composed block, sized so the whole suite stays fast
std::vector<GradCheckTarget> standard_targets();

std::string grad_reports_json(const std::vector<GradCheckReport>& reports);

}  // namespace lcnet
