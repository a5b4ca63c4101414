#include "emosllm/curriculum.hpp"

namespace emosllm {

double lr_multiplier(double step, double total_steps, double warmup_fraction) {
    if (total_steps <= 0.0) throw ConfigError("lr_multiplier: total_steps must be > 0");
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0)
        throw ConfigError("lr_multiplier: warmup_fraction must be in (0, 1)");
    if (step < 0.0 || step > total_steps)
        throw ConfigError("lr_multiplier: step outside [0, total_steps]");
    const double warmup = warmup_fraction * total_steps;
    if (step <= warmup) return step / warmup;
    return (total_steps - step) / (total_steps - warmup);
}

std::pair<double, double> asr_loss_weight(int epoch, int total_epochs) {
    if (total_epochs < 2) throw ConfigError("asr_loss_weight: need at least 2 epochs");
    if (epoch < 1 || epoch > total_epochs)
        throw ConfigError("asr_loss_weight: epoch outside [1, total_epochs]");
    const double w_asr = 0.5 * double(total_epochs - epoch) / double(total_epochs - 1);
    return {w_asr, 1.0 - w_asr};
}

}  // namespace emosllm
