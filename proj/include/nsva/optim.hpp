#pragma once

// Adam with bias correction and a linear warmup / linear decay schedule.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "nsva/tensor.hpp"

namespace nsva {

// Piecewise-linear schedule: 0 -> base_lr over warmup_steps, then base_lr -> 0
// at total_steps. lr(0) == 0 whenever warmup_steps > 0.
struct LrSchedule {
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;
    double base_lr = 1e-3;

    double lr(std::size_t step) const {
        if (total_steps == 0) return 0.0;
        double s = static_cast<double>(step);
        if (warmup_steps > 0 && step < warmup_steps) {
            return base_lr * s / static_cast<double>(warmup_steps);
        }
        if (step >= total_steps) return 0.0;
        double denom = static_cast<double>(total_steps - warmup_steps);
        if (denom <= 0.0) return 0.0;
        return base_lr * static_cast<double>(total_steps - step) / denom;
    }

    // Warmup defaults to 10% of the step budget.
    static LrSchedule with_warmup_fraction(std::size_t total, double base,
                                           double warmup_frac = 0.1) {
        LrSchedule s;
        s.total_steps = total;
        s.base_lr = base;
        s.warmup_steps = static_cast<std::size_t>(warmup_frac * static_cast<double>(total));
        return s;
    }
};

class AdamState {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    explicit AdamState(std::vector<Tensor> params) : params_(std::move(params)) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const Tensor& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    std::size_t step_count() const { return step_; }
    const std::vector<Tensor>& params() const { return params_; }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

    // One Adam update scaled by schedule.lr(schedule_step). The bias-correction
    // counter is internal and strictly increasing.
    void step(const LrSchedule& schedule, std::size_t schedule_step) {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (!params_[i].has_grad()) {
                throw std::runtime_error("AdamState::step: parameter " + std::to_string(i) +
                                         " has no gradient; run backward() first");
            }
        }
        ++step_;
        double lr = schedule.lr(schedule_step);
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i];
            const std::vector<double>& g = p.grad();
            std::vector<double>& m = m_[i];
            std::vector<double>& v = v_[i];
            std::vector<double>& x = p.data();
            for (std::size_t j = 0; j < x.size(); ++j) {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                x[j] -= lr * mhat / (std::sqrt(vhat) + epsilon);
            }
        }
    }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t step_ = 0;
};

// Free-function form mirroring the rest of the op surface.
inline void adam_step(AdamState& state, const LrSchedule& schedule, std::size_t step) {
    state.step(schedule, step);
}

}  // namespace nsva
