#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "alarm/autograd.hpp"
#include "alarm/backbone.hpp"
#include "alarm/corpus.hpp"
#include "alarm/model.hpp"
#include "alarm/trainer.hpp"
#include "alarm/error.hpp"
#include "alarm/parameter.hpp"

namespace alm::testing {

/// Analytic gradients (tape) against central finite differences, one entry at a time.
/// Returns the largest per-parameter relative error ||g_a - g_n|| / max(||g_a||, ||g_n||).
inline double gradient_error(const std::vector<Parameter*>& params, const std::function<ad::Var(ad::Tape&)>& loss,
                             double step = 1e-5) {
    for (Parameter* p : params) p->zero_grad();
    {
        ad::Tape tape;
        tape.backward(loss(tape));
    }
    double worst = 0.0;
    for (Parameter* p : params) {
        Matrix numeric(p->value.rows(), p->value.cols());
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const double saved = p->value.data()[i];
            p->value.data()[i] = saved + step;
            ad::Tape tp;
            const double up = loss(tp).value()(0, 0);
            p->value.data()[i] = saved - step;
            ad::Tape tm;
            const double down = loss(tm).value()(0, 0);
            p->value.data()[i] = saved;
            numeric.data()[i] = (up - down) / (2.0 * step);
        }
        const double scale = std::max(p->grad.norm(), numeric.norm());
        if (scale < 1e-12) continue;
        worst = std::max(worst, (p->grad - numeric).norm() / scale);
    }
    return worst;
}

/// Overwrites every parameter with seeded N(0, stddev) values so zero-initialized maps carry gradient.
inline void randomize(ParameterStore& store, std::uint64_t seed, double stddev = 0.3) {
    Rng rng(seed);
    for (Parameter* p : store.all()) p->value = gaussian<double>(p->value.rows(), p->value.cols(), stddev, rng);
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double stddev = 1.0) {
    Rng rng(seed);
    return gaussian<double>(rows, cols, stddev, rng);
}

/// A backbone small enough for unit tests that run many training steps.
inline BackboneConfig tiny_backbone_config() {
    BackboneConfig c;
    c.d_model = 16;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ff_expansion = 2;
    c.max_context = 640;
    return c;
}

inline ModelConfig tiny_model_config(std::uint64_t seed = 1) {
    ModelConfig c;
    c.fusion_width = 8;
    c.mlp_hidden = 16;
    c.heads = 2;
    c.ff_expansion = 2;
    c.seed = seed;
    return c;
}

inline BankConfig tiny_bank() { return default_bank(8); }

inline std::shared_ptr<Backbone> tiny_backbone(std::uint64_t seed = 2) {
    return std::make_shared<Backbone>(tiny_backbone_config(), seed);
}

inline std::vector<TrainExample> toy_corpus(std::size_t n, double duration = 1.0) {
    static const std::vector<std::string> targets = {"a dog barks", "rain falls", "a man speaks", "piano music",
                                                     "birds sing",  "a car passes", "a woman laughs", "drums play"};
    std::vector<TrainExample> out;
    for (std::size_t i = 0; i < n; ++i) {
        AudioRef a;
        a.id = "clip" + std::to_string(i);
        a.duration = duration;
        a.seed = 100 + i;
        out.push_back({a.id, a, "Describe the audio.", targets[i % targets.size()]});
    }
    return out;
}

/// Names of parameters whose values differ anywhere between two snapshots.
inline std::vector<std::string> changed_parameters(const std::map<std::string, Matrix>& before,
                                                   const ParameterStore& after) {
    std::vector<std::string> out;
    for (const Parameter* p : after.all()) {
        auto it = before.find(p->name);
        if (it == before.end() || it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols() ||
            it->second != p->value)
            out.push_back(p->name);
    }
    return out;
}

inline std::map<std::string, Matrix> snapshot(const ParameterStore& store) {
    std::map<std::string, Matrix> out;
    for (const Parameter* p : store.all()) out[p->name] = p->value;
    return out;
}

/// Mixed-domain metadata: every fourth record is a spoken instruction carrying its transcription.
inline std::vector<MetadataRecord> synthetic_manifest(std::size_t n) {
    static const std::vector<std::string> sounds = {"a dog barking twice", "heavy rain on a tin roof",
                                                    "a man speaking calmly in English", "a slow piano melody",
                                                    "birds singing at dawn", "a car passing on a wet road"};
    std::vector<MetadataRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        MetadataRecord r;
        r.id = "rec" + std::to_string(1000 + i);
        r.audio.id = r.id;
        r.audio.duration = 1.0 + static_cast<double>(i % 5);
        r.audio.seed = i;
        r.a_text = sounds[i % sounds.size()] + ", clip " + std::to_string(i) + ".";
        switch (i % 4) {
        case 0: r.domain = Domain::Sound; break;
        case 1: r.domain = Domain::Speech; break;
        case 2: r.domain = Domain::Music; break;
        default:
            r.domain = Domain::Instruction;
            r.extras = {{"transcription", "What is the speaker asking about in clip " + std::to_string(i) + "?"},
                        {"context", "A passage about clip " + std::to_string(i) + "."}};
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace alm::testing
