#pragma once

#include <algorithm>
#include <functional>

#include "dkmd/tensor.hpp"

namespace dkmd::nn {

// f builds a scalar graph from one differentiable leaf on the given tape.
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;

namespace detail {
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}
}  // namespace detail

// Central-difference check of the tape gradient of f at x. Returns the
// maximum relative error over all coordinates, with the denominator
// max(|analytic|, |numeric|, 1e-8).
inline double finite_difference_check(const ScalarFn& f, const Array& x, double h = 1e-3) {
    std::vector<double> analytic;
    {
        Tape tape;
        Tensor leaf = tape.leaf(x);
        Tensor y = f(tape, leaf);
        if (y.rows() != 1 || y.cols() != 1)
            throw Error(ErrorCategory::shape, "finite_difference_check: f must return a scalar");
        tape.backward(y);
        analytic = leaf.grad();
    }
    double worst = 0.0;
    Array probe = x;
    for (std::size_t i = 0; i < probe.data.size(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + h;
        double fp;
        {
            Tape tape;
            fp = f(tape, tape.constant(probe)).scalar();
        }
        probe.data[i] = orig - h;
        double fm;
        {
            Tape tape;
            fm = f(tape, tape.constant(probe)).scalar();
        }
        probe.data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        worst = std::max(worst, detail::rel_err(analytic[i], numeric));
    }
    return worst;
}

// Same check for every coordinate of every listed parameter: `build` must
// construct the scalar via Tape::use on those parameters, so perturbing the
// stored values changes the forward result.
inline double finite_difference_check_params(const std::vector<Parameter*>& params,
                                             const std::function<Tensor(Tape&)>& build,
                                             double h = 1e-3) {
    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        Tensor y = build(tape);
        if (y.rows() != 1 || y.cols() != 1)
            throw Error(ErrorCategory::shape, "finite_difference_check_params: non-scalar objective");
        tape.backward(y);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad.data);

    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double orig = p.value.data[i];
            p.value.data[i] = orig + h;
            double fp;
            {
                Tape tape;
                fp = build(tape).scalar();
            }
            p.value.data[i] = orig - h;
            double fm;
            {
                Tape tape;
                fm = build(tape).scalar();
            }
            p.value.data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            worst = std::max(worst, detail::rel_err(analytic[k][i], numeric));
        }
    }
    for (Parameter* p : params) p->zero_grad();
    return worst;
}

}  // namespace dkmd::nn
