#include "alarm/checkpoint.hpp"

#include "alarm/error.hpp"

namespace alm {

Archive make_checkpoint(const AlarmModel& model, const nlohmann::json& extra_meta) {
    Archive a;
    a.meta = extra_meta;
    a.meta["kind"] = "alarm-checkpoint";
    a.meta["variant"] = to_string(model.variant());
    a.meta["bank"] = bank_to_json(model.bank());
    a.meta["model"] = model.config();
    a.meta["backbone"] = model.backbone().config();
    a.meta["frozen_digest"] = freeze_fingerprint(model.backbone().params());
    a.meta["census"] = model.census();
    for (const Parameter* p : model.params().all()) a.arrays.push_back({p->name, p->value, false});
    for (const Parameter* p : model.backbone().params().all()) a.arrays.push_back({p->name, p->value, true});
    return a;
}

void save_checkpoint(const std::filesystem::path& path, const AlarmModel& model, const nlohmann::json& extra_meta) {
    write_archive(path, make_checkpoint(model, extra_meta));
}

std::shared_ptr<Backbone> backbone_from_archive(const Archive& archive) {
    BackboneConfig cfg = archive.meta.contains("backbone") ? archive.meta["backbone"].get<BackboneConfig>() : BackboneConfig{};
    auto bb = std::make_shared<Backbone>(cfg, 0);
    for (Parameter* p : bb->params().all()) {
        const NamedArray* a = archive.find(p->name);
        if (!a) throw Error(ErrorKind::IncompatibleCheckpoint, "archive lacks backbone array " + p->name);
        if (a->value.rows() != p->value.rows() || a->value.cols() != p->value.cols())
            throw Error(ErrorKind::IncompatibleCheckpoint, "backbone array " + p->name + " has the wrong shape");
        p->value = a->value;
    }
    if (archive.meta.contains("frozen_digest") &&
        archive.meta["frozen_digest"].get<std::string>() != freeze_fingerprint(bb->params()))
        throw Error(ErrorKind::IncompatibleCheckpoint, "backbone weights do not match the recorded frozen digest");
    return bb;
}

void save_backbone(const std::filesystem::path& path, const Backbone& backbone) {
    Archive a;
    a.meta["kind"] = "alarm-backbone";
    a.meta["backbone"] = backbone.config();
    a.meta["frozen_digest"] = freeze_fingerprint(backbone.params());
    for (const Parameter* p : backbone.params().all()) a.arrays.push_back({p->name, p->value, true});
    write_archive(path, a);
}

std::shared_ptr<Backbone> load_backbone(const std::filesystem::path& path) { return backbone_from_archive(read_archive(path)); }

void restore_parameters(AlarmModel& model, const Archive& archive) {
    for (Parameter* p : model.params().all()) {
        const NamedArray* a = archive.find(p->name);
        if (!a) throw Error(ErrorKind::IncompatibleCheckpoint, "checkpoint lacks parameter " + p->name);
        if (a->value.rows() != p->value.rows() || a->value.cols() != p->value.cols())
            throw Error(ErrorKind::IncompatibleCheckpoint, "parameter " + p->name + " has the wrong shape");
        p->value = a->value;
    }
    if (archive.meta.contains("census")) {
        const auto census = archive.meta["census"].get<std::vector<std::string>>();
        for (Parameter* p : model.params().all()) p->trainable = false;
        for (const auto& name : census)
            if (Parameter* p = model.params().find(name)) p->trainable = true;
    }
}

LoadedModel load_model(const Archive& archive) {
    if (archive.meta.value("kind", "") != "alarm-checkpoint")
        throw Error(ErrorKind::IncompatibleCheckpoint, "archive is not a model checkpoint");
    LoadedModel out;
    out.meta = archive.meta;
    out.backbone = backbone_from_archive(archive);
    const Variant variant = parse_variant(archive.meta.at("variant").get<std::string>());
    out.model = std::make_unique<AlarmModel>(variant, bank_from_json(archive.meta.at("bank")),
                                             archive.meta.at("model").get<ModelConfig>(), out.backbone);
    restore_parameters(*out.model, archive);
    return out;
}

LoadedModel load_model(const std::filesystem::path& path) { return load_model(read_archive(path)); }

namespace {

void copy_array(AlarmModel& model, const Archive& source, const std::string& from, const std::string& to) {
    const NamedArray* a = source.find(from);
    Parameter* p = model.params().find(to);
    if (!a || !p) throw Error(ErrorKind::IncompatibleCheckpoint, "cannot copy " + from + " into " + to);
    if (a->value.rows() != p->value.rows() || a->value.cols() != p->value.cols())
        throw Error(ErrorKind::IncompatibleCheckpoint, "shape mismatch copying " + from + " into " + to);
    p->value = a->value;
}

void copy_prefix(AlarmModel& model, const Archive& source, const std::string& from, const std::string& to,
                 const std::string& skip = "") {
    bool any = false;
    for (const auto& a : source.arrays) {
        if (a.name.rfind(from, 0) != 0) continue;
        if (!skip.empty() && a.name.rfind(skip, 0) == 0) continue;
        copy_array(model, source, a.name, to + a.name.substr(from.size()));
        any = true;
    }
    if (!any) throw Error(ErrorKind::IncompatibleCheckpoint, "source checkpoint has no arrays under " + from);
}

const Archive& find_source(const std::vector<Archive>& sources, Variant variant) {
    for (const auto& s : sources)
        if (s.meta.value("variant", "") == to_string(variant)) return s;
    throw Error(ErrorKind::IncompatibleCheckpoint, "missing " + to_string(variant) + " checkpoint");
}

void require_same_backbone(const AlarmModel& model, const Archive& source) {
    if (source.meta.value("frozen_digest", "") != freeze_fingerprint(model.backbone().params()))
        throw Error(ErrorKind::IncompatibleCheckpoint, "source checkpoint was trained against a different backbone");
}

} // namespace

std::vector<std::string> init_from_single_encoder(AlarmModel& ca, const std::vector<Archive>& sources) {
    if (ca.variant() != Variant::CrossAttention)
        throw Error(ErrorKind::IncompatibleCheckpoint, "single-encoder initialization targets the CA variant");
    for (auto role : kFusionOrder) {
        const Archive& src = find_source(sources, single_variant(role));
        require_same_backbone(ca, src);
        const std::string prefix = "frontend." + to_string(role);
        copy_prefix(ca, src, prefix + ".", prefix + ".", prefix + ".proj.");
    }
    const Archive& content = find_source(sources, Variant::SingleContent);
    copy_prefix(ca, content, "frontend.content.proj.", "fusion.ca.proj.");
    copy_prefix(ca, content, "boundary.outer.", "boundary.outer.");
    ca.params().set_trainable("frontend.", false);
    ca.params().set_trainable("fusion.", true);
    ca.params().set_trainable("boundary.", true);
    return ca.census();
}

std::vector<std::string> init_perceiver_from_content(AlarmModel& p, const Archive& content) {
    if (p.variant() != Variant::Perceiver)
        throw Error(ErrorKind::IncompatibleCheckpoint, "content initialization targets the P variant");
    if (content.meta.value("variant", "") != to_string(Variant::SingleContent))
        throw Error(ErrorKind::IncompatibleCheckpoint, "P initialization needs a single-content checkpoint");
    require_same_backbone(p, content);
    copy_prefix(p, content, "frontend.content.", "frontend.content.");
    copy_prefix(p, content, "boundary.outer.", "boundary.outer.");
    p.params().set_trainable("frontend.", false);
    return p.census();
}

} // namespace alm
