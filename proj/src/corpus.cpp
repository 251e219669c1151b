#include "alarm/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <variant>

namespace alm {

std::string to_string(Domain d) {
    switch (d) {
    case Domain::Speech: return "speech";
    case Domain::Sound: return "sound";
    case Domain::Music: return "music";
    case Domain::Instruction: return "instruction";
    }
    return "unknown";
}

Domain parse_domain(const std::string& text) {
    for (auto d : {Domain::Speech, Domain::Sound, Domain::Music, Domain::Instruction})
        if (to_string(d) == text) return d;
    throw Error(ErrorKind::InvalidInput, "unknown domain '" + text + "'");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string single_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return trim(s);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

void check_split(const std::optional<std::string>& split) {
    if (split && *split != "train" && *split != "val")
        throw Error(ErrorKind::InvalidInput, "split must be 'train' or 'val', got '" + *split + "'");
}

std::optional<std::string> normalize_split(const nlohmann::json& j) {
    if (!j.contains("split") || j["split"].is_null()) return std::nullopt;
    std::string s = j["split"].get<std::string>();
    if (s == "validation" || s == "valid" || s == "dev") s = "val";
    return s;
}

} // namespace

void MetadataRecord::validate() const {
    if (id.empty()) throw Error(ErrorKind::InvalidInput, "record without id");
    if (trim(a_text).empty()) throw Error(ErrorKind::InvalidInput, "record " + id + " has an empty a_text");
    if (!(audio.duration > 0.0)) throw Error(ErrorKind::InvalidInput, "record " + id + " has no positive duration");
    check_split(split);
}

void CorpusRecord::validate() const {
    if (r_text.empty()) throw Error(ErrorKind::InvalidInput, "corpus record " + id + " has an empty r_text");
    if (rephrase_skipped && r_text != r0)
        throw Error(ErrorKind::InvalidInput, "corpus record " + id + " skipped rephrasing but r_text != r0");
    check_split(split);
}

void to_json(nlohmann::json& j, const MetadataRecord& r) {
    j = {{"id", r.id}, {"audio", r.audio.id}, {"duration", r.audio.duration}, {"a_text", r.a_text},
         {"domain", to_string(r.domain)}};
    if (r.audio.seed) j["seed"] = *r.audio.seed;
    if (r.audio.path) j["features"] = *r.audio.path;
    if (!r.extras.empty()) j["extras"] = r.extras;
    if (r.split) j["split"] = *r.split;
}

void from_json(const nlohmann::json& j, MetadataRecord& r) {
    r.id = j.at("id").get<std::string>();
    if (j.contains("audio") && j["audio"].is_object()) {
        r.audio = j["audio"].get<AudioRef>();
    } else {
        r.audio.id = j.value("audio", r.id);
        r.audio.duration = j.at("duration").get<double>();
        if (j.contains("seed")) r.audio.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("features")) r.audio.path = j["features"].get<std::string>();
    }
    r.a_text = j.at("a_text").get<std::string>();
    r.domain = parse_domain(j.at("domain").get<std::string>());
    r.extras = j.value("extras", nlohmann::json::object());
    r.split = normalize_split(j);
}

void to_json(nlohmann::json& j, const CorpusRecord& r) {
    j = {{"id", r.id},
         {"audio", r.audio},
         {"domain", to_string(r.domain)},
         {"prompt", r.prompt},
         {"r0", r.r0},
         {"r_text", r.r_text},
         {"rephrase_skipped", r.rephrase_skipped},
         {"candidates_kept", r.candidates_kept},
         {"provenance",
          {{"generator", r.provenance.generator},
           {"rephraser", r.provenance.rephraser},
           {"budget", r.provenance.budget},
           {"budget_used", r.provenance.budget_used},
           {"seed", r.provenance.seed}}}};
    if (r.split) j["split"] = *r.split;
}

void from_json(const nlohmann::json& j, CorpusRecord& r) {
    r.id = j.at("id").get<std::string>();
    r.audio = j.at("audio").get<AudioRef>();
    r.domain = parse_domain(j.at("domain").get<std::string>());
    r.prompt = j.at("prompt").get<std::string>();
    r.r0 = j.at("r0").get<std::string>();
    r.r_text = j.at("r_text").get<std::string>();
    r.rephrase_skipped = j.value("rephrase_skipped", false);
    r.candidates_kept = j.value("candidates_kept", 0);
    r.split = normalize_split(j);
    if (j.contains("provenance")) {
        const auto& p = j["provenance"];
        r.provenance.generator = p.value("generator", "");
        r.provenance.rephraser = p.value("rephraser", "");
        r.provenance.budget = p.value("budget", 0);
        r.provenance.budget_used = p.value("budget_used", 0);
        r.provenance.seed = p.value("seed", std::uint64_t{0});
    }
}

namespace {

template <typename T>
std::vector<T> load_jsonl(const std::filesystem::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, std::string("cannot read ") + what + " " + path.string());
    std::vector<T> out;
    std::set<std::string> ids;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (trim(line).empty()) continue;
        try {
            T rec = nlohmann::json::parse(line).get<T>();
            rec.validate();
            if (!ids.insert(rec.id).second) throw Error(ErrorKind::InvalidInput, "duplicate id " + rec.id);
            out.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::ParseError, path.string() + ":" + std::to_string(n) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(ErrorKind::ParseError, path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

} // namespace

std::vector<MetadataRecord> load_manifest(const std::filesystem::path& path) {
    return load_jsonl<MetadataRecord>(path, "manifest");
}

std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path) { return load_jsonl<CorpusRecord>(path, "corpus"); }

void write_corpus(const std::filesystem::path& path, const std::vector<CorpusRecord>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
}

void FilterRules::normalize() {
    for (auto& p : banned_phrases) p = lower(trim(p));
    banned_phrases.erase(std::remove(banned_phrases.begin(), banned_phrases.end(), std::string{}), banned_phrases.end());
    if (budget < 1) throw Error(ErrorKind::InvalidInput, "thinking budget must be at least 1");
}

void to_json(nlohmann::json& j, const FilterRules& r) {
    j = {{"banned_phrases", r.banned_phrases},
         {"candidate_instruction", r.candidate_instruction},
         {"answerability_instruction", r.answerability_instruction},
         {"response_instruction", r.response_instruction},
         {"rephrase_instruction", r.rephrase_instruction},
         {"budget", r.budget},
         {"temperature", r.temperature},
         {"filter_temperature", r.filter_temperature}};
}

void from_json(const nlohmann::json& j, FilterRules& r) {
    FilterRules d;
    r.banned_phrases = j.value("banned_phrases", d.banned_phrases);
    r.candidate_instruction = j.value("candidate_instruction", d.candidate_instruction);
    r.answerability_instruction = j.value("answerability_instruction", d.answerability_instruction);
    r.response_instruction = j.value("response_instruction", d.response_instruction);
    r.rephrase_instruction = j.value("rephrase_instruction", d.rephrase_instruction);
    r.budget = j.value("budget", d.budget);
    r.temperature = j.value("temperature", d.temperature);
    r.filter_temperature = j.value("filter_temperature", d.filter_temperature);
    r.normalize();
}

FilterRules load_rules(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read rules " + path.string());
    try {
        return nlohmann::json::parse(in).get<FilterRules>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ParseError, "rules " + path.string() + ": " + e.what());
    }
}

namespace {

std::string describe(const MetadataRecord& rec) {
    std::string text = "Description: " + single_line(rec.a_text);
    if (rec.extras.contains("context") && rec.extras["context"].is_string())
        text += "\nContext: " + single_line(rec.extras["context"].get<std::string>());
    return text;
}

void require_role(const LlmClient& client, LlmRole role, const char* op) {
    if (client.role() != role)
        throw Error(ErrorKind::InvalidInput, std::string(op) + " needs a " + to_string(role) + " client");
}

} // namespace

std::vector<std::string> generate_candidates(const MetadataRecord& rec, const LlmClient& q, const FilterRules& rules,
                                             int n, std::uint64_t seed, int retry_cap) {
    require_role(q, LlmRole::Instruct, "generate_candidates");
    if (n < 1) throw Error(ErrorKind::InvalidInput, "candidate count must be at least 1");
    std::vector<std::string> out;
    for (int j = 0; j < n; ++j) {
        std::string prompt;
        for (int attempt = 0; attempt <= retry_cap && prompt.empty(); ++attempt) {
            ChatRequest req;
            req.task = LlmTask::Candidate;
            req.messages = {{"system", rules.candidate_instruction}, {"user", describe(rec)}};
            req.temperature = rules.temperature;
            req.seed = derive_seed(seed, {"candidate", std::to_string(j), std::to_string(attempt)});
            req.sample = j + attempt * n;
            prompt = single_line(q.complete(req).content);
        }
        if (prompt.empty())
            throw Error(ErrorKind::PipelineError, "candidate " + std::to_string(j) + " of " + rec.id + " stayed empty");
        out.push_back(std::move(prompt));
    }
    return out;
}

bool contains_banned_phrase(const std::string& text, const FilterRules& rules) {
    const std::string l = lower(text);
    return std::any_of(rules.banned_phrases.begin(), rules.banned_phrases.end(),
                       [&](const std::string& p) { return l.find(lower(p)) != std::string::npos; });
}

namespace {

std::vector<bool> parse_verdicts(const std::string& reply, std::size_t expected) {
    const auto open = reply.find('['), close = reply.rfind(']');
    if (open == std::string::npos || close == std::string::npos || close < open)
        throw Error(ErrorKind::PipelineError, "answerability reply is not a JSON array");
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(reply.substr(open, close - open + 1));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::PipelineError, std::string("answerability reply: ") + e.what());
    }
    if (arr.size() != expected)
        throw Error(ErrorKind::PipelineError, "answerability reply judged " + std::to_string(arr.size()) + " of " +
                                                  std::to_string(expected) + " candidates");
    std::vector<bool> keep;
    for (const auto& v : arr) {
        if (v.is_boolean())
            keep.push_back(v.get<bool>());
        else if (v.is_string() && (lower(v.get<std::string>()) == "keep" || lower(v.get<std::string>()) == "drop"))
            keep.push_back(lower(v.get<std::string>()) == "keep");
        else
            throw Error(ErrorKind::PipelineError, "unrecognized answerability verdict " + v.dump());
    }
    return keep;
}

} // namespace

std::vector<std::string> filter_candidates(const std::vector<std::string>& candidates, const MetadataRecord& rec,
                                           const LlmClient& q, const FilterRules& rules, std::uint64_t seed) {
    if (candidates.empty()) throw Error(ErrorKind::InvalidInput, "no candidates to filter");
    require_role(q, LlmRole::Instruct, "filter_candidates");
    std::vector<std::string> allowed;
    for (const auto& c : candidates)
        if (!contains_banned_phrase(c, rules)) allowed.push_back(c);
    if (allowed.empty()) throw Error(ErrorKind::EmptyFiltered, "every candidate of " + rec.id + " uses a banned phrase");

    std::string listing = describe(rec) + "\nCandidates:";
    for (std::size_t i = 0; i < allowed.size(); ++i) listing += "\n" + std::to_string(i + 1) + ". " + single_line(allowed[i]);
    ChatRequest req;
    req.task = LlmTask::Answerability;
    req.messages = {{"system", rules.answerability_instruction}, {"user", listing}};
    req.temperature = rules.filter_temperature;
    req.seed = derive_seed(seed, {"answerability"});
    const auto keep = parse_verdicts(q.complete(req).content, allowed.size());

    std::vector<std::string> out;
    for (std::size_t i = 0; i < allowed.size(); ++i)
        if (keep[i]) out.push_back(allowed[i]);
    if (out.empty()) throw Error(ErrorKind::EmptyFiltered, "no answerable candidate for " + rec.id);
    return out;
}

std::size_t select_index(std::size_t count, const std::string& record_id, std::uint64_t seed) {
    if (count == 0) throw Error(ErrorKind::EmptyFiltered, "cannot select from an empty candidate set");
    Rng rng(derive_seed(seed, {"select", record_id}));
    return std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
}

std::string select_prompt(const std::vector<std::string>& filtered, const std::string& record_id, std::uint64_t seed) {
    return filtered[select_index(filtered.size(), record_id, seed)];
}

std::string generate_initial_response(const MetadataRecord& rec, const std::string& prompt, const LlmClient& qr,
                                      const FilterRules& rules, std::uint64_t seed) {
    require_role(qr, LlmRole::Reasoning, "generate_initial_response");
    ChatRequest req;
    req.task = LlmTask::Response;
    req.messages = {{"system", rules.response_instruction}, {"user", describe(rec) + "\nQuestion: " + single_line(prompt)}};
    req.temperature = rules.temperature;
    req.seed = derive_seed(seed, {"response"});
    const ChatResponse res = qr.complete(req);
    std::string r0 = res.reasoning.empty() ? res.content : "<think>" + res.reasoning + "</think>\n" + res.content;
    if (trim(r0).empty()) throw Error(ErrorKind::PipelineError, "empty initial response for " + rec.id);
    return r0;
}

bool is_transcription_prompt(const MetadataRecord& rec, const std::string& prompt) {
    if (rec.domain != Domain::Instruction) return false;
    if (!rec.extras.contains("transcription") || !rec.extras["transcription"].is_string()) return false;
    return single_line(rec.extras["transcription"].get<std::string>()) == single_line(prompt);
}

RephraseResult rephrase_response(const MetadataRecord& rec, const std::string& prompt, const std::string& r0,
                                 const FilterRules& rules, const LlmClient& qr, std::uint64_t seed) {
    if (is_transcription_prompt(rec, prompt)) return {r0, true, 0};
    require_role(qr, LlmRole::Reasoning, "rephrase_response");
    if (rules.budget < 1) throw Error(ErrorKind::InvalidInput, "thinking budget must be at least 1");
    ChatRequest req;
    req.task = LlmTask::Rephrase;
    req.messages = {{"system", rules.rephrase_instruction}, {"user", r0}};
    req.temperature = rules.temperature;
    req.seed = derive_seed(seed, {"rephrase"});
    req.thinking_budget = rules.budget;
    const ChatResponse res = qr.complete(req);
    // The rephraser's own trace is only measured: it never becomes part of the target.
    const int used = std::min(rules.budget, count_tokens(res.reasoning));
    const std::string r_text = trim(res.content);
    if (r_text.empty()) throw Error(ErrorKind::PipelineError, "empty rephrased response for " + rec.id);
    return {r_text, false, used};
}

CorpusRecord process_record(const MetadataRecord& rec, const LlmClient& q, const LlmClient& qr,
                            const FilterRules& rules, const BuildOptions& options) {
    rec.validate();
    const std::uint64_t seed = derive_seed(options.seed, {"record", rec.id});
    CorpusRecord out;
    out.id = rec.id;
    out.audio = rec.audio;
    out.domain = rec.domain;
    out.split = rec.split;
    out.provenance = {q.model_id(), qr.model_id(), rules.budget, 0, seed};

    std::vector<std::string> filtered;
    if (rec.domain == Domain::Instruction && rec.extras.contains("transcription")) {
        filtered = {single_line(rec.extras["transcription"].get<std::string>())};
    } else {
        const auto candidates = generate_candidates(rec, q, rules, options.candidates, seed, options.retry_cap);
        filtered = filter_candidates(candidates, rec, q, rules, seed);
    }
    out.candidates_kept = static_cast<int>(filtered.size());
    out.prompt = select_prompt(filtered, rec.id, options.seed);
    out.r0 = generate_initial_response(rec, out.prompt, qr, rules, seed);
    const RephraseResult reph = rephrase_response(rec, out.prompt, out.r0, rules, qr, seed);
    out.r_text = reph.r_text;
    out.rephrase_skipped = reph.skipped;
    out.provenance.budget_used = reph.budget_used;
    out.validate();
    return out;
}

nlohmann::json BuildReport::to_json() const {
    nlohmann::json p = nlohmann::json::array();
    for (const auto& r : parked) p.push_back({{"id", r.id}, {"reason", std::string(alm::to_string(r.reason))}, {"message", r.message}});
    return {{"total", total}, {"written", written}, {"resumed", resumed}, {"parked_count", parked.size()}, {"parked", p}};
}

namespace {

/// Reads committed ids from a partial output and cuts off anything after the last intact line.
std::set<std::string> recover_output(const std::filesystem::path& out) {
    std::set<std::string> ids;
    if (!std::filesystem::exists(out)) return ids;
    std::ifstream in(out, std::ios::binary);
    const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::size_t good = 0;
    while (good < data.size()) {
        const auto nl = data.find('\n', good);
        if (nl == std::string::npos) break;
        try {
            ids.insert(nlohmann::json::parse(data.substr(good, nl - good)).at("id").get<std::string>());
        } catch (const nlohmann::json::exception&) {
            break;
        }
        good = nl + 1;
    }
    if (good != data.size()) std::filesystem::resize_file(out, good);
    return ids;
}

struct Committed {};
using Outcome = std::variant<Committed, CorpusRecord, ParkedRecord>;

} // namespace

BuildReport build_corpus(const std::vector<MetadataRecord>& manifest, const LlmClient& q, const LlmClient& qr,
                         const FilterRules& rules, const BuildOptions& options, const std::filesystem::path& out) {
    if (options.concurrency < 1) throw Error(ErrorKind::InvalidInput, "concurrency must be at least 1");
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    const std::set<std::string> done = options.resume ? recover_output(out) : std::set<std::string>{};
    std::ofstream file(out, std::ios::binary | (options.resume ? std::ios::app : std::ios::trunc));
    if (!file) throw Error(ErrorKind::IoError, "cannot write corpus " + out.string());

    const std::size_t n = manifest.size();
    const std::size_t window = static_cast<std::size_t>(options.concurrency) * 4;
    std::vector<std::optional<Outcome>> slots(n);
    std::mutex mutex;
    std::condition_variable cv;
    std::size_t committed = 0;
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            {
                std::unique_lock lock(mutex);
                cv.wait(lock, [&] { return i < committed + window; });
            }
            Outcome result;
            const MetadataRecord& rec = manifest[i];
            if (done.count(rec.id)) {
                result = Committed{};
            } else {
                try {
                    result = process_record(rec, q, qr, rules, options);
                } catch (const Error& e) {
                    result = ParkedRecord{rec.id, e.kind(), e.what()};
                } catch (const std::exception& e) {
                    result = ParkedRecord{rec.id, ErrorKind::PipelineError, e.what()};
                }
            }
            std::lock_guard lock(mutex);
            slots[i] = std::move(result);
            cv.notify_all();
        }
    };

    std::vector<std::thread> pool;
    for (int t = 0; t < options.concurrency; ++t) pool.emplace_back(worker);

    BuildReport report;
    report.total = n;
    for (std::size_t i = 0; i < n; ++i) {
        Outcome outcome;
        {
            std::unique_lock lock(mutex);
            cv.wait(lock, [&] { return slots[i].has_value(); });
            outcome = std::move(*slots[i]);
            slots[i].reset();
        }
        if (std::holds_alternative<Committed>(outcome)) {
            ++report.resumed;
        } else if (auto* rec = std::get_if<CorpusRecord>(&outcome)) {
            file << nlohmann::json(*rec).dump() << '\n';
            file.flush();
            ++report.written;
        } else {
            report.parked.push_back(std::get<ParkedRecord>(outcome));
        }
        std::lock_guard lock(mutex);
        committed = i + 1;
        cv.notify_all();
    }
    for (auto& t : pool) t.join();
    if (!file) throw Error(ErrorKind::IoError, "failed writing corpus " + out.string());
    return report;
}

CorpusSplit split_corpus(const std::vector<CorpusRecord>& corpus, double val_frac, std::uint64_t seed) {
    if (!(val_frac > 0.0 && val_frac < 1.0)) throw Error(ErrorKind::InvalidInput, "val_frac must lie in (0, 1)");
    std::vector<bool> is_val(corpus.size(), false);
    std::map<Domain, std::vector<std::size_t>> random_pool;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (corpus[i].split)
            is_val[i] = *corpus[i].split == "val";
        else
            random_pool[corpus[i].domain].push_back(i);
    }
    for (auto& [domain, idx] : random_pool) {
        Rng rng(derive_seed(seed, {"split", to_string(domain)}));
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(idx.size())));
        for (std::size_t k = 0; k < n_val; ++k) is_val[idx[k]] = true;
    }
    CorpusSplit out;
    for (std::size_t i = 0; i < corpus.size(); ++i) (is_val[i] ? out.validation : out.train).push_back(corpus[i]);
    return out;
}

std::vector<TrainExample> to_train_examples(const std::vector<CorpusRecord>& records) {
    std::vector<TrainExample> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back({r.id, r.audio, r.prompt, r.r_text});
    return out;
}

} // namespace alm
