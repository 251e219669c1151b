#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "alarm/archive.hpp"
#include "alarm/model.hpp"

namespace alm {

struct TrainConfig {
    Variant variant = Variant::SingleContent;
    int effective_batch = 8;
    /// Sequences per accumulation chunk; 0 processes the whole batch at once.
    int micro_batch = 0;
    int epochs = 2;
    int warmup_steps = 30;
    double peak_lr = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    bool shuffle = true;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Full-scale presets: batch 64 for 2 epochs, and the single-encoder runs at batch 32.
TrainConfig full_scale_config(Variant variant);
TrainConfig full_scale_single_encoder_config(Variant variant);
/// CA trained from single-encoder initialization: one epoch.
TrainConfig full_scale_ca_init_config();

long steps_per_epoch(std::size_t corpus_size, const TrainConfig& cfg);
long total_steps(std::size_t corpus_size, const TrainConfig& cfg);

/// Linear warm-up to peak_lr, then cosine decay to 0 at total_steps.
double schedule_lr(long step, long total_steps, const TrainConfig& cfg);

struct TrainExample {
    std::string id;
    AudioRef audio;
    std::string prompt;
    std::string target;
};

struct AdamMoments {
    Matrix m;
    Matrix v;
};

/// Decoupled weight-decay Adam; decay applies only to parameters flagged `decay`.
class AdamW {
public:
    void step(const std::vector<Parameter*>& params, double lr, const TrainConfig& cfg);
    long steps() const { return t_; }
    const std::map<std::string, AdamMoments>& moments() const { return moments_; }

private:
    long t_ = 0;
    std::map<std::string, AdamMoments> moments_;
};

struct CensusEntry {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
};

struct TrainState {
    std::vector<CensusEntry> census;
    AdamW optimizer;
    long step = 0;
    long total_steps = 0;
    Rng rng;
    std::string frozen_digest;

    static TrainState begin(const AlarmModel& model, const TrainConfig& cfg, long total_steps);
};

/// One optimizer update over `batch` (|batch| sequences, accumulated in micro-batch chunks).
/// Returns the batch loss: the mean over sequences of each sequence's mean span loss.
double train_step(AlarmModel& model, TrainState& state, const std::vector<TrainExample>& batch,
                  FeatureProvider& features, const TrainConfig& cfg);

/// Mean span loss over `examples` without touching any parameter.
double mean_span_loss(const AlarmModel& model, const std::vector<TrainExample>& examples, FeatureProvider& features);

struct StepLog {
    long step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct FitOptions {
    /// Receives train_log.jsonl and checkpoints; empty keeps everything in memory.
    std::filesystem::path out_dir;
    bool per_epoch_checkpoints = true;
    std::function<void(const StepLog&)> on_step;
};

struct FitResult {
    Archive checkpoint;
    std::vector<StepLog> log;
    TrainState state;
};

FitResult fit(AlarmModel& model, const std::vector<TrainExample>& corpus, FeatureProvider& features,
              const TrainConfig& cfg, const FitOptions& options = {});

} // namespace alm
