#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <unistd.h>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "percep_tl/autodiff/tensor.hpp"

namespace testing_support {

using percep::ad::Shape;
using percep::ad::Tensor;

inline std::vector<double> random_values(std::size_t n, std::uint32_t seed, double lo = -2.0, double hi = 2.0) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(gen);
    return v;
}

inline Tensor random_tensor(const Shape& shape, std::uint32_t seed, bool requires_grad = true, double lo = -2.0,
                            double hi = 2.0) {
    return Tensor::from(shape, random_values(percep::ad::numel(shape), seed, lo, hi), requires_grad);
}

// Central-difference gradient of a scalar function of a flat value vector,
// evaluated without touching the reverse-mode machinery.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / std::max(1.0, std::fabs(analytic[i])));
    }
    return worst;
}

// Shortest edit script from a to b found by breadth-first search over single
// insert/delete/substitute moves; symbols are drawn from both strings.
// Returns -1 when b is not reachable within max_depth moves.
inline int edit_distance_bfs(const std::string& a, const std::string& b, int max_depth) {
    std::set<char> alphabet(a.begin(), a.end());
    alphabet.insert(b.begin(), b.end());
    const std::size_t cap = std::max(a.size(), b.size()) + 1;
    std::set<std::string> seen{a};
    std::vector<std::string> frontier{a};
    for (int depth = 0; depth <= max_depth; ++depth) {
        for (const auto& s : frontier)
            if (s == b) return depth;
        std::vector<std::string> next;
        auto visit = [&](std::string s) {
            if (seen.insert(s).second) next.push_back(std::move(s));
        };
        for (const auto& s : frontier) {
            for (std::size_t i = 0; i < s.size(); ++i) {
                visit(s.substr(0, i) + s.substr(i + 1));
                for (char c : alphabet) {
                    if (c == s[i]) continue;
                    std::string t = s;
                    t[i] = c;
                    visit(t);
                }
            }
            if (s.size() < cap) {
                for (std::size_t i = 0; i <= s.size(); ++i)
                    for (char c : alphabet) visit(s.substr(0, i) + c + s.substr(i));
            }
        }
        frontier = std::move(next);
    }
    return -1;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("percep_tl_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testing_support
