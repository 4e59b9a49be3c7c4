// Copyright 2026 The spectwin authors
// Adam with decoupled weight decay, over named tensors.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <map>
#include <string>

#include "spectwin/common.hpp"
#include "spectwin/matrix.hpp"

namespace spectwin {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment state per named tensor. Weight decay is decoupled
/// (applied directly to the parameter, not through the moments) and skipped
/// for 1-D tensors (biases, norms, class token).
template <typename S>
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step_tensor(const std::string& name, Matrix<S>& param, const Matrix<S>& grad,
                     double lr, double weight_decay, long t) {
        auto& slot = state_[name];
        if (slot.m.rows() != param.rows() || slot.m.cols() != param.cols()) {
            slot.m.resize(param.rows(), param.cols(), S(0));
            slot.v.resize(param.rows(), param.cols(), S(0));
        }
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
        const bool decay = weight_decay > 0.0 && param.rows() > 1 && param.cols() > 1;

        S* p = param.data();
        const S* g = grad.data();
        S* m = slot.m.data();
        S* v = slot.v.data();
        const size_t n = param.size();
        for (size_t i = 0; i < n; ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
            const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
            m[i] = static_cast<S>(mi);
            v[i] = static_cast<S>(vi);
            double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
            if (decay) update += lr * weight_decay * static_cast<double>(p[i]);
            p[i] = static_cast<S>(static_cast<double>(p[i]) - update);
        }
    }

    std::map<std::string, std::pair<Matrix<S>, Matrix<S>>> export_state() const {
        std::map<std::string, std::pair<Matrix<S>, Matrix<S>>> out;
        for (const auto& [name, slot] : state_) out[name] = {slot.m, slot.v};
        return out;
    }

    void import_state(const std::map<std::string, std::pair<Matrix<S>, Matrix<S>>>& in) {
        state_.clear();
        for (const auto& [name, mv] : in) state_[name] = Slot{mv.first, mv.second};
    }

private:
    struct Slot {
        Matrix<S> m, v;
    };
    AdamConfig cfg_;
    std::map<std::string, Slot> state_;
};

}  // namespace spectwin
