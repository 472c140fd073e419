#pragma once

// Adam with bias correction over named parameter tensors. One instance is
// created per task so moment estimates never leak across task boundaries.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cign/errors.hpp"
#include "cign/model.hpp"
#include "cign/tensor.hpp"

namespace cign {

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<NamedParam> params, double learning_rate, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8)
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
        for (auto& p : params) {
            Slot slot;
            slot.param = std::move(p);
            slot.m.assign(slot.param.tensor.numel(), 0.0);
            slot.v.assign(slot.param.tensor.numel(), 0.0);
            slots_.push_back(std::move(slot));
        }
    }

    void zero_grad() {
        for (auto& slot : slots_) slot.param.tensor.zero_grad();
    }

    // Applies one update from the gradients currently stored on the
    // parameters. A non-finite gradient aborts the step and names the tensor,
    // so a diverging run fails loudly instead of silently poisoning moments.
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (auto& slot : slots_) {
            auto& value = slot.param.tensor.raw();
            auto& grad = slot.param.tensor.grad_raw();
            for (std::size_t i = 0; i < value.size(); ++i) {
                const double g = grad[i];
                if (!std::isfinite(g)) {
                    throw DomainError("non-finite gradient in parameter '" + slot.param.name +
                                      "' at element " + std::to_string(i));
                }
                slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
                slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
                const double m_hat = slot.m[i] / bc1;
                const double v_hat = slot.v[i] / bc2;
                value[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
            }
        }
    }

    long steps_taken() const { return t_; }
    double learning_rate() const { return lr_; }

private:
    struct Slot {
        NamedParam param;
        std::vector<double> m;
        std::vector<double> v;
    };

    std::vector<Slot> slots_;
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    long t_ = 0;
};

}  // namespace cign
