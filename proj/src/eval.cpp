#include "alarm/eval.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "alarm/error.hpp"

namespace alm {

void BenchmarkItem::validate() const {
    if (id.empty()) throw Error(ErrorKind::InvalidInput, "benchmark item without id");
    if (choices.size() < 2) throw Error(ErrorKind::InvalidInput, "item " + id + " needs at least two choices");
    if (choices.size() > 26) throw Error(ErrorKind::InvalidInput, "item " + id + " has more choices than letters");
    if (answer_index < 0 || answer_index >= static_cast<int>(choices.size()))
        throw Error(ErrorKind::InvalidInput, "item " + id + " answer_index " + std::to_string(answer_index) +
                                                 " outside " + std::to_string(choices.size()) + " choices");
}

void to_json(nlohmann::json& j, const BenchmarkItem& item) {
    j = {{"id", item.id},         {"audio", item.audio},     {"question", item.question},
         {"choices", item.choices}, {"answer_index", item.answer_index}, {"category", item.category}};
}

void from_json(const nlohmann::json& j, BenchmarkItem& item) {
    item.id = j.at("id").get<std::string>();
    if (j.at("audio").is_object()) {
        item.audio = j["audio"].get<AudioRef>();
    } else {
        item.audio.id = j["audio"].get<std::string>();
        item.audio.duration = j.at("duration").get<double>();
        if (j.contains("seed")) item.audio.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("features")) item.audio.path = j["features"].get<std::string>();
    }
    item.question = j.at("question").get<std::string>();
    item.choices = j.at("choices").get<std::vector<std::string>>();
    item.answer_index = j.at("answer_index").get<int>();
    item.category = j.value("category", "all");
}

std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read benchmark " + path.string());
    std::vector<BenchmarkItem> items;
    std::set<std::string> ids;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(n) + ": ";
        try {
            BenchmarkItem item = nlohmann::json::parse(line).get<BenchmarkItem>();
            item.validate();
            if (!ids.insert(item.id).second) throw Error(ErrorKind::InvalidInput, "duplicate id " + item.id);
            items.push_back(std::move(item));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::ParseError, where + e.what());
        } catch (const Error& e) {
            throw Error(ErrorKind::ParseError, where + e.what());
        }
    }
    return items;
}

void write_benchmark(const std::filesystem::path& path, const std::vector<BenchmarkItem>& items) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    for (const auto& item : items) out << nlohmann::json(item).dump() << '\n';
}

std::string to_string(ExtractionMethod m) {
    switch (m) {
    case ExtractionMethod::Letter: return "letter";
    case ExtractionMethod::Exact: return "exact";
    case ExtractionMethod::Fallback: return "fallback";
    case ExtractionMethod::Abstain: return "abstain";
    }
    return "abstain";
}

std::string strip_thinking(const std::string& text) {
    static const std::string close = "</think>";
    const auto pos = text.rfind(close);
    return pos == std::string::npos ? text : text.substr(pos + close.size());
}

namespace {

std::vector<std::string> tokens(const std::string& text) {
    std::string cleaned;
    for (unsigned char c : text) cleaned += std::isalnum(c) ? static_cast<char>(std::tolower(c)) : ' ';
    std::istringstream in(cleaned);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

std::string normalized(const std::string& text) {
    std::string out;
    for (const auto& t : tokens(text)) out += (out.empty() ? "" : " ") + t;
    return out;
}

std::optional<int> letter_match(const std::string& text, int n) {
    // Pattern classes in precedence order; the first class yielding a single letter decides.
    // Keywords in any common casing; the letter itself must be a capital so "the answer is a dog" stays text.
    static const std::regex answer_is(
        R"((?:[Aa]nswer|ANSWER|[Cc]hoice|CHOICE|[Oo]ption|OPTION)\s*(?:is|IS|Is|:)\s*:?\s*\(?([A-Z])\)?(?![A-Za-z]))");
    static const std::regex parenthesized(R"(\(([A-Z])\))");
    static const std::regex dotted(R"((?:^|\s)([A-Z])[.:](?=\s|$))");

    auto collect = [&](const std::regex& re) {
        std::vector<int> found;
        for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it) {
            const int idx = (*it)[1].str()[0] - 'A';
            if (idx < n) found.push_back(idx);
        }
        return found;
    };

    if (auto hits = collect(answer_is); !hits.empty()) return hits.back();
    for (const auto* re : {&parenthesized, &dotted}) {
        const auto hits = collect(*re);
        if (hits.empty()) continue;
        if (std::all_of(hits.begin(), hits.end(), [&](int h) { return h == hits.front(); })) return hits.front();
    }
    return std::nullopt;
}

} // namespace

Extraction extract_choice(const std::string& text, const std::vector<std::string>& choices) {
    if (choices.empty()) throw Error(ErrorKind::InvalidInput, "extract_choice needs choices");
    const std::string answer = strip_thinking(text);
    const int n = static_cast<int>(choices.size());

    if (auto idx = letter_match(answer, n)) return {idx, ExtractionMethod::Letter};

    const std::string norm = normalized(answer);
    std::optional<int> exact;
    for (int i = 0; i < n; ++i)
        if (!norm.empty() && normalized(choices[static_cast<std::size_t>(i)]) == norm) {
            if (exact) {
                exact.reset();
                break;
            }
            exact = i;
        }
    if (exact) return {exact, ExtractionMethod::Exact};

    const auto answer_tokens = tokens(answer);
    const std::set<std::string> have(answer_tokens.begin(), answer_tokens.end());
    double best = 0.0;
    int best_idx = -1;
    bool tie = false;
    for (int i = 0; i < n; ++i) {
        const auto ct = tokens(choices[static_cast<std::size_t>(i)]);
        const std::set<std::string> want(ct.begin(), ct.end());
        if (want.empty()) continue;
        const auto shared = std::count_if(want.begin(), want.end(), [&](const std::string& w) { return have.count(w) > 0; });
        const double score = static_cast<double>(shared) / static_cast<double>(want.size());
        if (score > best) {
            best = score;
            best_idx = i;
            tie = false;
        } else if (score == best && score > 0.0) {
            tie = true;
        }
    }
    if (best > kOverlapThreshold && !tie) return {best_idx, ExtractionMethod::Fallback};
    return {std::nullopt, ExtractionMethod::Abstain};
}

std::string choice_label(int index) { return std::string("(") + static_cast<char>('A' + index) + ")"; }

std::string format_question(const BenchmarkItem& item, bool include_choices) {
    std::string out = item.question;
    if (!include_choices) return out;
    for (std::size_t i = 0; i < item.choices.size(); ++i)
        out += "\n" + choice_label(static_cast<int>(i)) + " " + item.choices[i];
    return out;
}

Responder model_responder(const SequenceModel& model, FeatureProvider& features, int max_new_tokens) {
    return [&model, &features, max_new_tokens](const BenchmarkItem& item, const std::string& prompt) {
        ad::Tape tape;
        const FeatureSet fs = features.features(item.audio, model.roles());
        const AudioPromptSequence seq = model.build_sequence(tape, fs, prompt, "");
        const Generation g = model.backbone().generate(seq, max_new_tokens);
        return Response{g.text, !g.stopped_at_eos};
    };
}

EvalReport evaluate(const std::vector<BenchmarkItem>& items, const Responder& respond, const EvalOptions& options) {
    if (items.empty()) throw Error(ErrorKind::InvalidInput, "benchmark is empty");
    EvalReport report;
    report.strict = options.strict;
    for (const auto& item : items) {
        ItemAudit a;
        a.id = item.id;
        a.category = item.category;
        a.answer_index = item.answer_index;
        try {
            const Response r = respond(item, format_question(item, options.include_choices));
            a.raw = r.text;
            a.truncated = r.truncated;
            const Extraction e = extract_choice(r.text, item.choices);
            a.extracted = e.index;
            a.method = e.method;
            a.correct = e.index && *e.index == item.answer_index;
        } catch (const Error& e) {
            a.errored = true;
            a.error = e.what();
        }
        if (a.errored) ++report.errored;
        if (a.truncated) ++report.truncated;
        if (!a.errored || options.strict) {
            auto& cat = report.categories[item.category];
            ++cat.total;
            ++report.total;
            if (a.correct) {
                ++cat.correct;
                ++report.correct;
            }
        }
        report.audit.push_back(std::move(a));
    }
    return report;
}

namespace {

/// Byte-level generations may not be valid UTF-8; invalid bytes become U+FFFD so the report serializes.
std::string valid_utf8(const std::string& in) {
    std::string out;
    const auto* s = reinterpret_cast<const unsigned char*>(in.data());
    const std::size_t n = in.size();
    for (std::size_t i = 0; i < n;) {
        const unsigned char c = s[i];
        std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
        bool ok = len > 0 && i + len <= n && !(len == 2 && c < 0xC2) && !(len == 4 && c > 0xF4);
        for (std::size_t k = 1; ok && k < len; ++k) ok = (s[i + k] & 0xC0) == 0x80;
        if (ok && len == 3) {
            const unsigned cp = ((c & 0x0Fu) << 12) | ((s[i + 1] & 0x3Fu) << 6) | (s[i + 2] & 0x3Fu);
            ok = cp >= 0x800 && (cp < 0xD800 || cp > 0xDFFF);
        }
        if (ok && len == 4) {
            const unsigned cp = ((c & 0x07u) << 18) | ((s[i + 1] & 0x3Fu) << 12);
            ok = cp >= 0x10000 && cp <= 0x10FFFF;
        }
        if (ok) {
            out.append(in, i, len);
            i += len;
        } else {
            out += "\xEF\xBF\xBD";
            ++i;
        }
    }
    return out;
}

} // namespace

nlohmann::json EvalReport::to_json() const {
    nlohmann::json cats = nlohmann::json::object();
    for (const auto& [name, c] : categories)
        cats[name] = {{"correct", c.correct}, {"total", c.total}, {"accuracy", c.accuracy()}};
    nlohmann::json items = nlohmann::json::array();
    for (const auto& a : audit) {
        nlohmann::json j = {{"id", a.id},
                            {"category", a.category},
                            {"raw", valid_utf8(a.raw)},
                            {"extracted", a.extracted ? nlohmann::json(*a.extracted) : nlohmann::json(nullptr)},
                            {"method", to_string(a.method)},
                            {"answer_index", a.answer_index},
                            {"correct", a.correct},
                            {"truncated", a.truncated},
                            {"errored", a.errored}};
        if (a.errored) j["error"] = a.error;
        items.push_back(std::move(j));
    }
    return {{"categories", cats},
            {"overall", {{"correct", correct}, {"total", total}, {"accuracy", accuracy()}}},
            {"errored", errored},
            {"truncated", truncated},
            {"strict", strict},
            {"items", items}};
}

} // namespace alm
