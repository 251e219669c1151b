#include "alarm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "alarm/backbone.hpp"
#include "alarm/checkpoint.hpp"
#include "alarm/error.hpp"

namespace alm {

void TrainConfig::validate() const {
    if (variant == Variant::Ensemble) throw Error(ErrorKind::InvalidInput, "variant e is inference-only");
    if (!(peak_lr > 0.0)) throw Error(ErrorKind::InvalidInput, "peak_lr must be positive");
    if (warmup_steps < 1) throw Error(ErrorKind::InvalidInput, "warmup_steps must be at least 1");
    if (effective_batch < 1) throw Error(ErrorKind::InvalidInput, "effective_batch must be at least 1");
    if (micro_batch < 0 || (micro_batch > 0 && effective_batch % micro_batch != 0))
        throw Error(ErrorKind::InvalidInput, "micro_batch must divide effective_batch");
    if (epochs < 0) throw Error(ErrorKind::InvalidInput, "epochs must be non-negative");
    if (weight_decay < 0.0 || beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || eps <= 0.0)
        throw Error(ErrorKind::InvalidInput, "invalid optimizer hyperparameters");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"variant", to_string(c.variant)}, {"effective_batch", c.effective_batch}, {"micro_batch", c.micro_batch},
         {"epochs", c.epochs}, {"warmup_steps", c.warmup_steps}, {"peak_lr", c.peak_lr},
         {"weight_decay", c.weight_decay}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps},
         {"seed", c.seed}, {"shuffle", c.shuffle}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.variant = j.contains("variant") ? parse_variant(j["variant"].get<std::string>()) : d.variant;
    c.effective_batch = j.value("effective_batch", d.effective_batch);
    c.micro_batch = j.value("micro_batch", d.micro_batch);
    c.epochs = j.value("epochs", d.epochs);
    c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
    c.peak_lr = j.value("peak_lr", d.peak_lr);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.eps = j.value("eps", d.eps);
    c.seed = j.value("seed", d.seed);
    c.shuffle = j.value("shuffle", d.shuffle);
}

TrainConfig full_scale_config(Variant variant) {
    TrainConfig c;
    c.variant = variant;
    c.effective_batch = 64;
    c.epochs = 2;
    c.warmup_steps = 1500;
    c.peak_lr = 1e-4;
    return c;
}

TrainConfig full_scale_single_encoder_config(Variant variant) {
    TrainConfig c = full_scale_config(variant);
    c.effective_batch = 32;
    return c;
}

TrainConfig full_scale_ca_init_config() {
    TrainConfig c = full_scale_config(Variant::CrossAttention);
    c.epochs = 1;
    return c;
}

long steps_per_epoch(std::size_t corpus_size, const TrainConfig& cfg) {
    const auto b = static_cast<std::size_t>(cfg.effective_batch);
    return static_cast<long>((corpus_size + b - 1) / b);
}

long total_steps(std::size_t corpus_size, const TrainConfig& cfg) {
    return steps_per_epoch(corpus_size, cfg) * cfg.epochs;
}

double schedule_lr(long step, long total, const TrainConfig& cfg) {
    if (step < 0 || step > total)
        throw Error(ErrorKind::OutOfRange,
                    "step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
    const long warmup = cfg.warmup_steps;
    if (step <= warmup) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(const std::vector<Parameter*>& params, double lr, const TrainConfig& cfg) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (Parameter* p : params) {
        auto& mom = moments_[p->name];
        if (mom.m.size() == 0) {
            mom.m = Matrix::Zero(p->value.rows(), p->value.cols());
            mom.v = Matrix::Zero(p->value.rows(), p->value.cols());
        }
        if (p->grad.size() == 0) p->zero_grad();
        mom.m = cfg.beta1 * mom.m + (1.0 - cfg.beta1) * p->grad;
        mom.v = cfg.beta2 * mom.v + (1.0 - cfg.beta2) * p->grad.array().square().matrix();
        Matrix update = (mom.m.array() / c1) / ((mom.v.array() / c2).sqrt() + cfg.eps);
        if (p->decay) update += cfg.weight_decay * p->value;
        p->value -= lr * update;
    }
}

TrainState TrainState::begin(const AlarmModel& model, const TrainConfig& cfg, long total) {
    TrainState s;
    for (const Parameter* p : model.params().all())
        if (p->trainable) s.census.push_back({p->name, p->value.rows(), p->value.cols()});
    s.total_steps = total;
    s.rng.seed(derive_seed(cfg.seed, {"trainer"}));
    s.frozen_digest = freeze_fingerprint(model.backbone().params());
    return s;
}

namespace {

double sequence_loss(const AlarmModel& model, const TrainExample& ex, FeatureProvider& features, double grad_scale) {
    ad::Tape tape;
    const FeatureSet fs = features.features(ex.audio, model.roles());
    const AudioPromptSequence seq = model.build_sequence(tape, fs, ex.prompt, ex.target);
    ad::Var loss = response_ce_loss(model.backbone().forward_logits(seq), seq.token_ids(), seq.target_span());
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value))
        throw Error(ErrorKind::Diverged, "non-finite loss " + std::to_string(value) + " on example " + ex.id);
    if (grad_scale != 0.0) tape.backward(loss, Matrix::Constant(1, 1, grad_scale));
    return value;
}

} // namespace

double train_step(AlarmModel& model, TrainState& state, const std::vector<TrainExample>& batch,
                  FeatureProvider& features, const TrainConfig& cfg) {
    if (batch.empty()) throw Error(ErrorKind::InvalidInput, "empty batch");
    if (state.step >= state.total_steps)
        throw Error(ErrorKind::OutOfRange, "training already reached its final step");
    if (freeze_fingerprint(model.backbone().params()) != state.frozen_digest)
        throw Error(ErrorKind::IncompatibleCheckpoint, "backbone digest does not match the training state");
    model.params().zero_grad();
    const std::size_t chunk = cfg.micro_batch > 0 ? static_cast<std::size_t>(cfg.micro_batch) : batch.size();
    const double n = static_cast<double>(batch.size());
    double total = 0.0;
    for (std::size_t start = 0; start < batch.size(); start += chunk) {
        const std::size_t end = std::min(batch.size(), start + chunk);
        double chunk_sum = 0.0;
        for (std::size_t i = start; i < end; ++i) chunk_sum += sequence_loss(model, batch[i], features, 1.0 / n);
        total += chunk_sum;
    }
    const double loss = total / n;
    if (!std::isfinite(loss)) throw Error(ErrorKind::Diverged, "non-finite batch loss at step " + std::to_string(state.step));
    const long next = state.step + 1;
    state.optimizer.step(model.params().trainable(), schedule_lr(next, state.total_steps, cfg), cfg);
    state.step = next;
    return loss;
}

double mean_span_loss(const AlarmModel& model, const std::vector<TrainExample>& examples, FeatureProvider& features) {
    if (examples.empty()) throw Error(ErrorKind::InvalidInput, "no examples");
    double sum = 0.0;
    for (const auto& ex : examples) sum += sequence_loss(model, ex, features, 0.0);
    return sum / static_cast<double>(examples.size());
}

namespace {

nlohmann::json train_meta(const TrainConfig& cfg, const TrainState& state, int epoch) {
    return {{"train_config", cfg}, {"step", state.step}, {"total_steps", state.total_steps}, {"epoch", epoch}};
}

} // namespace

FitResult fit(AlarmModel& model, const std::vector<TrainExample>& corpus, FeatureProvider& features,
              const TrainConfig& cfg, const FitOptions& options) {
    cfg.validate();
    if (corpus.empty()) throw Error(ErrorKind::InvalidInput, "training corpus is empty");
    if (cfg.variant != model.variant())
        throw Error(ErrorKind::InvalidInput,
                    "config variant " + to_string(cfg.variant) + " does not match model " + to_string(model.variant()));

    FitResult result;
    result.state = TrainState::begin(model, cfg, total_steps(corpus.size(), cfg));
    TrainState& state = result.state;

    std::ofstream log_file;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        log_file.open(options.out_dir / "train_log.jsonl", std::ios::trunc);
        if (!log_file) throw Error(ErrorKind::IoError, "cannot write training log in " + options.out_dir.string());
    }

    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const auto batch_size = static_cast<std::size_t>(cfg.effective_batch);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (cfg.shuffle) std::shuffle(order.begin(), order.end(), state.rng);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            std::vector<TrainExample> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i)
                batch.push_back(corpus[order[i]]);
            const double loss = train_step(model, state, batch, features, cfg);
            const StepLog entry{state.step, schedule_lr(state.step, state.total_steps, cfg), loss};
            result.log.push_back(entry);
            if (log_file) log_file << nlohmann::json{{"step", entry.step}, {"lr", entry.lr}, {"loss", entry.loss}}.dump() << '\n';
            if (options.on_step) options.on_step(entry);
        }
        if (!options.out_dir.empty() && options.per_epoch_checkpoints)
            save_checkpoint(options.out_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"), model,
                            train_meta(cfg, state, epoch));
    }

    if (freeze_fingerprint(model.backbone().params()) != state.frozen_digest)
        throw Error(ErrorKind::IncompatibleCheckpoint, "backbone changed during training");
    result.checkpoint = make_checkpoint(model, train_meta(cfg, state, cfg.epochs));
    if (!options.out_dir.empty()) write_archive(options.out_dir / "final.ckpt", result.checkpoint);
    return result;
}

} // namespace alm
