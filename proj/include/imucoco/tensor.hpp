#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "imucoco/errors.hpp"

namespace imucoco {

// Dense row-major tensor of 64-bit reals.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d, bool rg = false)
        : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
        if (static_cast<std::size_t>(element_count(shape)) != data.size())
            throw ValidationError("tensor data length does not match shape");
    }

    static long element_count(const std::vector<int>& shape) {
        long n = 1;
        for (int d : shape) {
            if (d <= 0) throw ValidationError("tensor dimensions must be positive");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        const long n = element_count(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor vector(std::vector<double> v, bool requires_grad = false) {
        const int n = static_cast<int>(v.size());
        return Tensor({n}, std::move(v), requires_grad);
    }

    // Uniform(-limit, limit) fill, deterministic in the provided engine.
    static Tensor random_uniform(std::vector<int> shape, double limit, std::mt19937_64& rng,
                                 bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& v : t.data) v = dist(rng);
        return t;
    }

    long size() const { return static_cast<long>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_string() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }
};

}  // namespace imucoco
