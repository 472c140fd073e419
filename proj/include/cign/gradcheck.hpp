#pragma once

// Finite-difference verification of every differentiable op's backward rule.
// grad_check compares tape gradients against central differences; the registry
// below enumerates one check per op so the CLI and tests can sweep all of them.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cign/seeding.hpp"
#include "cign/tensor.hpp"

namespace cign {

using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;

// Central-difference gradient of a scalar-valued function at x.
inline std::vector<double> fd_gradient(const ScalarFn& f, const Tensor& x, double h) {
    Tensor probe = x.clone(false);
    std::vector<double> g(probe.numel());
    for (std::size_t i = 0; i < probe.numel(); ++i) {
        double orig = probe.at(i);
        Tape t1, t2;
        probe.set(i, orig + h);
        double fp = f(t1, probe).item();
        probe.set(i, orig - h);
        double fm = f(t2, probe).item();
        probe.set(i, orig);
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Max over coordinates of |analytic - central| / max(1, |analytic|).
inline double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5) {
    if (h < 1e-7 || h > 1e-3) {
        throw DomainError("grad_check step h=" + std::to_string(h) + " outside [1e-7, 1e-3]");
    }
    Tensor var = x.clone(true);
    Tape tape;
    Tensor y = f(tape, var);
    if (y.numel() != 1) throw ShapeError("grad_check requires a scalar-valued function");
    var.zero_grad();
    tape.backward(y);
    std::vector<double> analytic(var.grad().begin(), var.grad().end());
    std::vector<double> numeric = fd_gradient(f, var, h);
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        double err = std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Registry of differentiable ops
// ---------------------------------------------------------------------------

struct OpCheck {
    std::string name;
    // Runs one seeded instance; returns the grad_check error.
    std::function<double(std::mt19937_64&)> run;
};

namespace detail {

inline Tensor rand_tensor(Shape shape, std::mt19937_64& rng, double sigma = 1.0) {
    return Tensor::randn(std::move(shape), rng, sigma);
}

}  // namespace detail

// One entry per differentiable op with a true gradient. The straight-through
// hard assignment is excluded: its forward is piecewise constant, so a finite
// difference cannot probe its surrogate gradient.
inline std::vector<OpCheck> gradcheck_registry() {
    using detail::rand_tensor;
    std::vector<OpCheck> reg;

    auto sum_of = [](Tape& t, const Tensor& y) { return sum(t, y); };

    reg.push_back({"matmul", [sum_of](std::mt19937_64& rng) {
                       Tensor b = rand_tensor({4, 2}, rng);
                       Tensor a = rand_tensor({3, 4}, rng);
                       double ea = grad_check(
                           [&](Tape& t, const Tensor& x) { return sum_of(t, matmul(t, x, b)); }, a);
                       double eb = grad_check(
                           [&](Tape& t, const Tensor& x) { return sum_of(t, matmul(t, a, x)); }, b);
                       return std::max(ea, eb);
                   }});
    reg.push_back({"transpose", [sum_of](std::mt19937_64& rng) {
                       Tensor w = rand_tensor({2, 3}, rng);
                       return grad_check(
                           [&](Tape& t, const Tensor& x) {
                               return sum_of(t, matmul(t, w, transpose(t, x)));
                           },
                           rand_tensor({4, 3}, rng));
                   }});
    reg.push_back({"softmax", [](std::mt19937_64& rng) {
                       Tensor mask = rand_tensor({3, 5}, rng);
                       return grad_check(
                           [&](Tape& t, const Tensor& x) {
                               return sum(t, mul(t, softmax(t, x, 1), mask));
                           },
                           rand_tensor({3, 5}, rng));
                   }});
    reg.push_back({"sigmoid", [sum_of](std::mt19937_64& rng) {
                       return grad_check(
                           [&](Tape& t, const Tensor& x) { return sum_of(t, sigmoid(t, x)); },
                           rand_tensor({6}, rng));
                   }});
    reg.push_back({"log", [sum_of](std::mt19937_64& rng) {
                       Tensor x = rand_tensor({6}, rng);
                       for (std::size_t i = 0; i < x.numel(); ++i)
                           x.set(i, 0.5 + std::abs(x.at(i)));
                       return grad_check(
                           [&](Tape& t, const Tensor& v) { return sum_of(t, log(t, v)); }, x);
                   }});
    reg.push_back({"exp", [sum_of](std::mt19937_64& rng) {
                       return grad_check(
                           [&](Tape& t, const Tensor& x) { return sum_of(t, exp(t, x)); },
                           rand_tensor({6}, rng));
                   }});
    reg.push_back({"sum", [](std::mt19937_64& rng) {
                       Tensor mask = rand_tensor({4}, rng);
                       return grad_check(
                           [&](Tape& t, const Tensor& x) {
                               return sum(t, mul(t, sum(t, x, 0), mask));
                           },
                           rand_tensor({3, 4}, rng));
                   }});
    reg.push_back({"mean", [](std::mt19937_64& rng) {
                       Tensor mask = rand_tensor({3}, rng);
                       return grad_check(
                           [&](Tape& t, const Tensor& x) {
                               return sum(t, mul(t, mean(t, x, 1), mask));
                           },
                           rand_tensor({3, 4}, rng));
                   }});
    reg.push_back({"concat", [sum_of](std::mt19937_64& rng) {
                       Tensor other = rand_tensor({2, 3}, rng);
                       Tensor mask = rand_tensor({5, 3}, rng);
                       return grad_check(
                           [&](Tape& t, const Tensor& x) {
                               return sum_of(t, mul(t, concat(t, {x, other}, 0), mask));
                           },
                           rand_tensor({3, 3}, rng));
                   }});
    reg.push_back({"scale", [sum_of](std::mt19937_64& rng) {
                       return grad_check(
                           [&](Tape& t, const Tensor& x) { return sum_of(t, scale(t, x, -2.5)); },
                           rand_tensor({5}, rng));
                   }});
    reg.push_back({"add", [sum_of](std::mt19937_64& rng) {
                       Tensor bias = rand_tensor({4}, rng);
                       Tensor a = rand_tensor({3, 4}, rng);
                       double ea = grad_check(
                           [&](Tape& t, const Tensor& x) {
                               return sum(t, mul(t, add(t, x, bias), x));
                           },
                           a);
                       double eb = grad_check(
                           [&](Tape& t, const Tensor& x) { return sum_of(t, add(t, a, x)); }, bias);
                       return std::max(ea, eb);
                   }});
    reg.push_back({"sub", [sum_of](std::mt19937_64& rng) {
                       Tensor b = rand_tensor({3, 4}, rng);
                       double ea = grad_check(
                           [&](Tape& t, const Tensor& x) { return sum_of(t, sub(t, x, b)); },
                           rand_tensor({3, 4}, rng));
                       double eb = grad_check(
                           [&](Tape& t, const Tensor& x) {
                               return sum(t, mul(t, sub(t, b, x), x));
                           },
                           rand_tensor({3, 4}, rng));
                       return std::max(ea, eb);
                   }});
    reg.push_back({"mul", [](std::mt19937_64& rng) {
                       Tensor b = rand_tensor({3, 4}, rng);
                       return grad_check(
                           [&](Tape& t, const Tensor& x) {
                               return sum(t, mul(t, mul(t, x, b), x));
                           },
                           rand_tensor({3, 4}, rng));
                   }});
    reg.push_back({"div", [sum_of](std::mt19937_64& rng) {
                       Tensor denom = rand_tensor({3, 4}, rng);
                       for (std::size_t i = 0; i < denom.numel(); ++i)
                           denom.set(i, 1.0 + std::abs(denom.at(i)));
                       Tensor num = rand_tensor({3, 4}, rng);
                       double ea = grad_check(
                           [&](Tape& t, const Tensor& x) { return sum_of(t, div(t, x, denom)); },
                           num);
                       double eb = grad_check(
                           [&](Tape& t, const Tensor& x) { return sum_of(t, div(t, num, x)); },
                           denom);
                       return std::max(ea, eb);
                   }});
    reg.push_back({"normalize_columns", [](std::mt19937_64& rng) {
                       // Entries bounded away from zero keep every column sum
                       // well clear of the zero-mass branch.
                       Tensor x = rand_tensor({4, 3}, rng);
                       for (std::size_t i = 0; i < x.numel(); ++i)
                           x.set(i, 0.3 + std::abs(x.at(i)));
                       Tensor mask = rand_tensor({4, 3}, rng);
                       return grad_check(
                           [&](Tape& t, const Tensor& v) {
                               return sum(t, mul(t, normalize_columns(t, v), mask));
                           },
                           x);
                   }});
    reg.push_back({"div_rows", [sum_of](std::mt19937_64& rng) {
                       Tensor denom = rand_tensor({3}, rng);
                       for (std::size_t i = 0; i < denom.numel(); ++i)
                           denom.set(i, 1.0 + std::abs(denom.at(i)));
                       Tensor num = rand_tensor({3, 4}, rng);
                       double ea = grad_check(
                           [&](Tape& t, const Tensor& x) {
                               return sum_of(t, div_rows(t, x, denom));
                           },
                           num);
                       double eb = grad_check(
                           [&](Tape& t, const Tensor& x) {
                               return sum_of(t, div_rows(t, num, x));
                           },
                           denom);
                       return std::max(ea, eb);
                   }});
    reg.push_back({"clamp", [sum_of](std::mt19937_64& rng) {
                       // Inputs kept away from the clamp bounds, where the
                       // subgradient and the finite difference agree.
                       Tensor x = rand_tensor({6}, rng, 0.3);
                       return grad_check(
                           [&](Tape& t, const Tensor& v) {
                               return sum(t, mul(t, clamp(t, v, -4.0, 4.0), v));
                           },
                           x);
                   }});
    reg.push_back({"rows", [](std::mt19937_64& rng) {
                       Tensor mask = rand_tensor({2, 4}, rng);
                       return grad_check(
                           [&](Tape& t, const Tensor& x) {
                               return sum(t, mul(t, rows(t, x, 1, 2), mask));
                           },
                           rand_tensor({5, 4}, rng));
                   }});
    reg.push_back({"reshape", [](std::mt19937_64& rng) {
                       Tensor mask = rand_tensor({12}, rng);
                       return grad_check(
                           [&](Tape& t, const Tensor& x) {
                               return sum(t, mul(t, reshape(t, x, {12}), mask));
                           },
                           rand_tensor({3, 4}, rng));
                   }});
    reg.push_back({"cosine_sim", [](std::mt19937_64& rng) {
                       Tensor b = rand_tensor({8}, rng);
                       Tensor a = rand_tensor({8}, rng);
                       double ea = grad_check(
                           [&](Tape& t, const Tensor& x) { return cosine_sim(t, x, b); }, a);
                       double eb = grad_check(
                           [&](Tape& t, const Tensor& x) { return cosine_sim(t, a, x); }, b);
                       return std::max(ea, eb);
                   }});
    return reg;
}

// A deliberately wrong backward rule: forward is exp but the recorded gradient
// is inflated. Used as the negative control for the checker itself.
inline Tensor corrupted_exp(Tape& tape, const Tensor& x) {
    std::size_t n = x.numel();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(x.at(i));
    Tensor result(x.shape(), std::move(out), x.requires_grad());
    if (result.requires_grad()) {
        tape.record([xn = x.node(), on = result.node()] {
            if (on->grad.size() != on->value.size()) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->value.size(); ++i)
                xn->grad[i] += 1.25 * on->value[i] * on->grad[i];
        });
    }
    return result;
}

struct GradcheckReport {
    struct Line {
        std::string name;
        double max_error;
        bool ok;
    };
    std::vector<Line> lines;
    bool all_ok = true;
};

inline GradcheckReport run_gradcheck(std::uint64_t seed, double tolerance = 1e-4,
                                     int instances = 10, bool inject_fault = false) {
    GradcheckReport report;
    auto registry = gradcheck_registry();
    for (std::size_t k = 0; k < registry.size(); ++k) {
        std::mt19937_64 rng(derive_seed(seed, k));
        double worst = 0.0;
        for (int i = 0; i < instances; ++i) worst = std::max(worst, registry[k].run(rng));
        bool ok = worst <= tolerance;
        report.lines.push_back({registry[k].name, worst, ok});
        report.all_ok = report.all_ok && ok;
    }
    if (inject_fault) {
        std::mt19937_64 rng(derive_seed(seed, 0xfa17));
        Tensor x = Tensor::randn({6}, rng);
        double err = grad_check(
            [](Tape& t, const Tensor& v) { return sum(t, corrupted_exp(t, v)); }, x);
        bool ok = err <= tolerance;
        report.lines.push_back({"corrupted_exp(fault)", err, ok});
        report.all_ok = report.all_ok && ok;
    }
    return report;
}

}  // namespace cign
