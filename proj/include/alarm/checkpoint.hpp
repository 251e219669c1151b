#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "alarm/archive.hpp"
#include "alarm/model.hpp"

namespace alm {

/// Snapshot of a model: its parameters, read-only backbone arrays and a metadata block.
Archive make_checkpoint(const AlarmModel& model, const nlohmann::json& extra_meta = nlohmann::json::object());
void save_checkpoint(const std::filesystem::path& path, const AlarmModel& model,
                     const nlohmann::json& extra_meta = nlohmann::json::object());

struct LoadedModel {
    std::shared_ptr<Backbone> backbone;
    std::unique_ptr<AlarmModel> model;
    nlohmann::json meta;
};

/// Rebuilds the model (and its backbone) from a checkpoint; the stored frozen digest must match.
LoadedModel load_model(const Archive& archive);
LoadedModel load_model(const std::filesystem::path& path);
/// Restores parameter values into an existing model; names and shapes must match.
void restore_parameters(AlarmModel& model, const Archive& archive);

void save_backbone(const std::filesystem::path& path, const Backbone& backbone);
std::shared_ptr<Backbone> load_backbone(const std::filesystem::path& path);
std::shared_ptr<Backbone> backbone_from_archive(const Archive& archive);

/// CA warm start: copies every encoder's aggregation weights and adapter from its single-encoder
/// checkpoint, seeds the post-fusion projection and outer boundaries from the content model, then
/// freezes everything except the fusion module and boundaries. Returns the resulting census.
std::vector<std::string> init_from_single_encoder(AlarmModel& ca, const std::vector<Archive>& sources);
/// P warm start: takes the content path (aggregation, adapter, projection) frozen from a single-content model.
std::vector<std::string> init_perceiver_from_content(AlarmModel& p, const Archive& content);

} // namespace alm
