#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "alarm/backbone.hpp"

namespace alm {

/// Prompt + caption pairs built from a small template grammar; used to give the LM stand-in
/// a language prior before it is frozen.
struct CaptionExample {
    std::string prompt;
    std::string caption;
};

std::vector<CaptionExample> synthetic_captions(std::size_t count, std::uint64_t seed);

struct PretrainConfig {
    int steps = 1500;
    int batch = 16;
    int warmup_steps = 100;
    double peak_lr = 3e-3;
    std::uint64_t seed = 0;
};

/// Next-token training of every backbone parameter on prompt+caption+EOS sequences.
/// The backbone is left frozen afterwards. Returns the per-step mean loss.
std::vector<double> pretrain_backbone(Backbone& backbone, const std::vector<CaptionExample>& texts,
                                      const PretrainConfig& cfg,
                                      const std::function<void(int, double)>& on_step = {});

} // namespace alm
