#pragma once

#include "hiermask/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace hiermask {

template <typename T>
struct NamedParam {
    std::string name;
    ag::Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

/// Draws initial parameter values in double precision so float and double
/// models built from the same seed agree up to rounding.
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    template <typename T>
    ag::Tensor<T> normal(ag::Shape shape, double stddev)
    {
        std::normal_distribution<double> dist(0.0, stddev);
        std::vector<T> values(static_cast<std::size_t>(ag::numel(shape)));
        for (auto& v : values) v = static_cast<T>(dist(rng_));
        return ag::Tensor<T>::from(std::move(shape), std::move(values), true);
    }

    template <typename T>
    static ag::Tensor<T> constant(ag::Shape shape, double value)
    {
        std::vector<T> values(static_cast<std::size_t>(ag::numel(shape)), static_cast<T>(value));
        return ag::Tensor<T>::from(std::move(shape), std::move(values), true);
    }

private:
    std::mt19937_64 rng_;
};

} // namespace hiermask
