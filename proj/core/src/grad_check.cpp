#include "dasc/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "dasc/rng.hpp"

namespace dasc {

namespace {

double rel_error(double analytic, double numeric) {
    return std::fabs(analytic - numeric) /
           std::max(1e-8, std::fabs(analytic) + std::fabs(numeric));
}

double eval_loss(const LossFn& f) {
    Tape tape(false);
    return f(tape).item();
}

} // namespace

double grad_check(const ScalarFn& f, const Tensor& at, double eps) {
    if (!at.requires_grad()) {
        throw Error("grad_check: input must require gradients");
    }
    Tensor x = at;  // shared storage; perturbations below mutate it in place
    LossFn g = [&f, &x](Tape& t) { return f(t, x); };

    const double base = eval_loss(g);
    if (eval_loss(g) != base) {
        throw Error("grad_check: function is non-deterministic");
    }

    x.zero_grad();
    Tape tape;
    Tensor loss = f(tape, x);
    tape.backward(loss);
    std::vector<double> analytic = x.grad();

    double worst = 0.0;
    auto& xv = x.data();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double keep = xv[i];
        xv[i] = keep + eps;
        const double up = eval_loss(g);
        xv[i] = keep - eps;
        const double dn = eval_loss(g);
        xv[i] = keep;
        const double numeric = (up - dn) / (2.0 * eps);
        worst = std::max(worst, rel_error(analytic[i], numeric));
    }
    return worst;
}

double grad_check_params(const LossFn& f, const std::vector<Tensor>& params,
                         std::size_t coords_per_tensor, Rng& rng, double eps) {
    const double base = eval_loss(f);
    if (eval_loss(f) != base) {
        throw Error("grad_check_params: function is non-deterministic");
    }

    for (const Tensor& p : params) {
        Tensor t = p;
        t.zero_grad();
    }
    Tape tape;
    Tensor loss = f(tape);
    tape.backward(loss);

    double worst = 0.0;
    for (const Tensor& p : params) {
        Tensor param = p;
        const std::vector<double> analytic = param.grad();
        std::vector<std::size_t> coords;
        if (param.size() <= coords_per_tensor) {
            coords.resize(param.size());
            for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        } else {
            coords.reserve(coords_per_tensor);
            for (std::size_t i = 0; i < coords_per_tensor; ++i) {
                coords.push_back(rng.uniform_below(param.size()));
            }
        }
        auto& pv = param.data();
        for (std::size_t i : coords) {
            const double keep = pv[i];
            pv[i] = keep + eps;
            const double up = eval_loss(f);
            pv[i] = keep - eps;
            const double dn = eval_loss(f);
            pv[i] = keep;
            const double numeric = (up - dn) / (2.0 * eps);
            worst = std::max(worst, rel_error(analytic[i], numeric));
        }
    }
    return worst;
}

} // namespace dasc
