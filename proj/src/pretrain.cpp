#include "alarm/pretrain.hpp"

#include <cmath>

#include "alarm/error.hpp"
#include "alarm/trainer.hpp"

namespace alm {

std::vector<CaptionExample> synthetic_captions(std::size_t count, std::uint64_t seed) {
    static const std::vector<std::string> prompts = {"Describe the audio.", "What do you hear?",
                                                     "What is happening in this clip?", "Caption the sound."};
    static const std::vector<std::string> subjects = {
        "a dog",  "a cat",    "rain",  "the wind", "a man",   "a woman", "a child",  "birds",  "a car",  "a train",
        "piano music", "a guitar", "drums", "people", "an engine", "water", "thunder", "a bell", "a phone", "footsteps"};
    static const std::vector<std::string> verbs = {"barks", "meows",  "falls", "blows", "speaks", "laughs",
                                                   "sings", "passes", "plays", "rings", "runs",   "hums",
                                                   "cries", "knocks", "fades", "starts"};
    static const std::vector<std::string> tails = {"", "", " loudly", " softly", " in the distance", " nearby",
                                                   " twice", " outside"};
    Rng rng(derive_seed(seed, {"captions"}));
    auto pick = [&](const std::vector<std::string>& v) {
        return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };
    std::vector<CaptionExample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::string caption = pick(subjects) + " " + pick(verbs) + pick(tails);
        if (std::uniform_int_distribution<int>(0, 3)(rng) == 0) caption += " and " + pick(subjects) + " " + pick(verbs);
        out.push_back({pick(prompts), caption});
    }
    return out;
}

std::vector<double> pretrain_backbone(Backbone& backbone, const std::vector<CaptionExample>& texts,
                                      const PretrainConfig& cfg, const std::function<void(int, double)>& on_step) {
    if (texts.empty()) throw Error(ErrorKind::InvalidInput, "pretraining corpus is empty");
    if (cfg.steps < 1 || cfg.batch < 1) throw Error(ErrorKind::InvalidInput, "pretraining needs steps and batch >= 1");
    backbone.set_frozen(false);
    TrainConfig opt;
    opt.warmup_steps = cfg.warmup_steps;
    opt.peak_lr = cfg.peak_lr;
    AdamW adam;
    Rng rng(derive_seed(cfg.seed, {"pretrain"}));
    std::uniform_int_distribution<std::size_t> pick(0, texts.size() - 1);
    std::vector<double> losses;
    for (int step = 1; step <= cfg.steps; ++step) {
        backbone.params().zero_grad();
        double total = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& ex = texts[pick(rng)];
            auto ids = tokenizer::encode(ex.prompt + ex.caption);
            ids.push_back(tokenizer::kEos);
            ad::Tape tape;
            ad::Var logits = backbone.forward_embeddings(backbone.embed_tokens(tape, ids).embeddings);
            std::vector<int> targets(ids.begin() + 1, ids.end());
            std::vector<Eigen::Index> positions;
            for (std::size_t p = 0; p + 1 < ids.size(); ++p) positions.push_back(static_cast<Eigen::Index>(p));
            ad::Var loss = ad::cross_entropy(logits, targets, positions);
            tape.backward(loss, Matrix::Constant(1, 1, 1.0 / cfg.batch));
            total += loss.value()(0, 0);
        }
        const double mean = total / cfg.batch;
        if (!std::isfinite(mean)) throw Error(ErrorKind::Diverged, "pretraining loss became non-finite");
        adam.step(backbone.params().trainable(), schedule_lr(step, cfg.steps, opt), opt);
        losses.push_back(mean);
        if (on_step) on_step(step, mean);
    }
    backbone.set_frozen(true);
    return losses;
}

} // namespace alm
