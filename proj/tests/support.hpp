#pragma once

// Shared helpers for the unit tests: a seeded generator and random points.

#include "rigidlab/phase.hpp"

#include <cstdint>
#include <random>

namespace testsupport
{

class Rng
{
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo, double hi)
    {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

    rigidlab::Vector vector(int n, double lo, double hi)
    {
        rigidlab::Vector v(n);
        for (int i = 0; i < n; ++i) v[i] = uniform(lo, hi);
        return v;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

inline double relative_error(const rigidlab::Vector& a, const rigidlab::Vector& b)
{
    return (a - b).norm() / std::max(1.0, b.norm());
}

} // namespace testsupport
