#pragma once

// Central finite-difference gradient check over named parameters.

#include "hiermask/params.hpp"
#include "hiermask/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace gradcheck {

using hiermask::ParamList;
using hiermask::ag::Tensor;

struct Result {
    long entries = 0;
    double max_rel = 0.0;  // over entries whose perturbation keeps every ReLU on its side
    std::string worst;
    long kinks = 0;  // entries whose +-h perturbation crossed a ReLU kink
    double max_rel_kink = 0.0;
    double max_abs_grad = 0.0;
};

/// |a - n| / max(|a|, |n|, floor).
inline double rel_error(double analytic, double numeric, double floor)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// `loss` builds the scalar loss from the current parameter values.
inline Result check(const ParamList<double>& params, const std::function<Tensor<double>()>& loss, double h = 1e-5,
                    double floor = 1e-5)
{
    for (const auto& p : params) p.tensor.zero_grad();
    hiermask::ag::backward(loss());
    std::vector<std::vector<double>> analytic;
    for (const auto& p : params) {
        const auto g = p.tensor.grad();
        analytic.emplace_back(g.begin(), g.end());
    }

    hiermask::ag::ReluPatternProbe probe;
    auto evaluate = [&] {
        hiermask::ag::NoGradGuard guard;
        probe.reset();
        const double v = loss().item();
        return std::pair{v, probe.hash()};
    };
    const auto base_pattern = evaluate().second;

    Result r;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto tensor = params[k].tensor;
        auto values = tensor.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            values[i] = original + h;
            const auto [plus, plus_pattern] = evaluate();
            values[i] = original - h;
            const auto [minus, minus_pattern] = evaluate();
            values[i] = original;
            const double numeric = (plus - minus) / (2.0 * h);
            const double err = rel_error(analytic[k][i], numeric, floor);
            r.max_abs_grad = std::max(r.max_abs_grad, std::abs(analytic[k][i]));
            ++r.entries;
            if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
                ++r.kinks;
                r.max_rel_kink = std::max(r.max_rel_kink, err);
            } else if (err > r.max_rel) {
                r.max_rel = err;
                r.worst = params[k].name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return r;
}

} // namespace gradcheck
