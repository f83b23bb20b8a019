#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace fox {

// Warmup-stable-decay learning-rate schedule: linear ramp 0 -> peak over
// warmup_steps, constant peak for stable_steps, then decay to floor_lr over
// decay_steps, floor_lr afterwards. The decay interpolates log-linearly
// between peak and floor when floor_lr > 0 and linearly otherwise.
struct WsdSchedule {
    std::int64_t warmup_steps = 2000;
    std::int64_t stable_steps = 0;
    std::int64_t decay_steps = 16000;
    double peak_lr = 4e-4;
    double floor_lr = 4e-5;

    void validate() const {
        if (warmup_steps < 0 || stable_steps < 0 || decay_steps < 0)
            throw std::invalid_argument("wsd: step counts must be >= 0");
        if (peak_lr <= 0.0) throw std::invalid_argument("wsd: peak_lr must be positive");
        if (floor_lr < 0.0 || floor_lr > peak_lr)
            throw std::invalid_argument("wsd: floor_lr must be in [0, peak_lr]");
    }
};

inline double wsd_lr(std::int64_t step, const WsdSchedule& s) {
    if (step < 0) throw std::invalid_argument("wsd: negative step");
    if (step < s.warmup_steps)
        return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    const std::int64_t stable_end = s.warmup_steps + s.stable_steps;
    if (step < stable_end) return s.peak_lr;
    if (step < stable_end + s.decay_steps) {
        const double t = static_cast<double>(step - stable_end) / static_cast<double>(s.decay_steps);
        if (s.floor_lr > 0.0)
            return s.peak_lr * std::pow(s.floor_lr / s.peak_lr, t);
        return s.peak_lr * (1.0 - t);
    }
    return s.floor_lr;
}

}  // namespace fox
