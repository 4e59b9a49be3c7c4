// Copyright 2026 The spectwin authors
// Cosine schedules and learning-rate warmup.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>

#include "spectwin/common.hpp"

namespace spectwin {

/// end + (start - end) * (1 + cos(pi * step / total)) / 2; hits the
/// endpoints exactly.
inline double cosine_schedule(double start, double end, long step, long total_steps) {
    if (total_steps <= 0) return end;
    if (step < 0) throw config_error("cosine_schedule: negative step");
    if (step > total_steps) step = total_steps;
    return end + (start - end) *
                     (1.0 + std::cos(kPi * static_cast<double>(step) / static_cast<double>(total_steps))) /
                     2.0;
}

/// Linear warmup to base_lr over warmup_steps, then cosine decay to final_lr.
inline double lr_at_step(long step, long total_steps, double base_lr, double final_lr,
                         double warmup_frac) {
    const long warmup = static_cast<long>(warmup_frac * static_cast<double>(total_steps));
    if (warmup > 0 && step < warmup)
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const long rest = total_steps - warmup;
    return cosine_schedule(base_lr, final_lr, step - warmup, rest > 0 ? rest : 1);
}

}  // namespace spectwin
