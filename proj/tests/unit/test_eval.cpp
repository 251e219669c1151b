#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "alarm/error.hpp"
#include "alarm/eval.hpp"
#include "../support.hpp"

using namespace alm;
using namespace alm::testing;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::InvalidInput;
}

const std::vector<std::string> kChoices = {"a dog barking", "rain on a roof", "a piano melody", "a passing car"};

BenchmarkItem item(const std::string& id, int answer, const std::string& category = "sound") {
    BenchmarkItem it;
    it.id = id;
    it.audio = {id, 2.0, std::uint64_t{3}, std::nullopt};
    it.question = "What is heard?";
    it.choices = kChoices;
    it.answer_index = answer;
    it.category = category;
    return it;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "alarm_eval_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("benchmark loading validates every line") {
    const auto dir = temp_dir("load");
    write_benchmark(dir / "ok.jsonl", {item("x", 2), item("y", 0, "music")});
    const auto items = load_benchmark(dir / "ok.jsonl");
    REQUIRE(items.size() == 2);
    CHECK(items[0].answer_index == 2);
    CHECK(items[0].choices == kChoices);
    CHECK(items[1].category == "music");
    CHECK(items[0].audio.seed == 3u);

    auto error_of = [&](const std::string& body) {
        std::ofstream(dir / "bad.jsonl") << body;
        try {
            load_benchmark(dir / "bad.jsonl");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::ParseError);
            return std::string(e.what());
        }
        return std::string("no error");
    };
    const std::string good = nlohmann::json(item("a", 1)).dump() + "\n";
    nlohmann::json bad_index = item("b", 0);
    bad_index["answer_index"] = 4;
    CHECK(error_of(good + bad_index.dump() + "\n").find("bad.jsonl:2") != std::string::npos);
    CHECK(error_of(good + good).find("duplicate id a") != std::string::npos);
    CHECK(error_of(good + good.substr(0, 20) + "\n").find("bad.jsonl:2") != std::string::npos);
    nlohmann::json one_choice = item("c", 0);
    one_choice["choices"] = {"only"};
    CHECK(error_of(one_choice.dump()).find(":1") != std::string::npos);
    std::ofstream(dir / "flat.jsonl")
        << R"({"id": "f", "audio": "f.wav", "duration": 4, "question": "q", "choices": ["x", "y"], "answer_index": 1})" "\n";
    CHECK(load_benchmark(dir / "flat.jsonl").front().audio.duration == 4.0);
    CHECK(kind_of([&] { load_benchmark(dir / "none.jsonl"); }) == ErrorKind::IoError);
}

TEST_CASE("extraction cascade resolves each form") {
    auto check = [](const std::string& text, std::optional<int> index, ExtractionMethod method) {
        const Extraction e = extract_choice(text, kChoices);
        CHECK_MESSAGE(e.index == index, text);
        CHECK_MESSAGE(e.method == method, text);
    };
    using enum ExtractionMethod;
    check("<think>Maybe (A)? or (C).</think> The answer is (B).", 1, Letter);
    check("a passing car", 3, Exact);
    check("  A Passing CAR! ", 3, Exact);
    check("Something else entirely.", std::nullopt, Abstain);
    check("", std::nullopt, Abstain);

    check("Answer: C", 2, Letter);
    check("the correct option is d", std::nullopt, Abstain);
    check("The answer is a dog barking", 0, Fallback);
    check("I think (D) fits.", 3, Letter);
    check("(A) or (B)", std::nullopt, Abstain);
    check("B. because it rains", 1, Letter);
    check("Choice E", std::nullopt, Abstain);
    check("The answer is (B), not the answer is (C).", 2, Letter);
    check("</think>I hear rain falling on a metal roof", 1, Fallback);
    check("a dog", 0, Fallback);
    check("the dog", std::nullopt, Abstain);
    check("a piano melody, not a dog barking", std::nullopt, Abstain);
    check("<think>the answer is (A)</think>", std::nullopt, Abstain);
    CHECK(strip_thinking("<think>x</think>one</think>two") == "two");
    CHECK(strip_thinking("plain") == "plain");

    CHECK(extract_choice("same", {"same", "same"}).method == Abstain);
    CHECK(kind_of([&] { extract_choice("x", {}); }) == ErrorKind::InvalidInput);
}

TEST_CASE("report arithmetic and strictness") {
    std::vector<BenchmarkItem> items;
    for (int i = 0; i < 12; ++i) items.push_back(item("i" + std::to_string(i), i % 4, i < 5 ? "speech" : "music"));
    items[9].audio.path = "/no/such/features";
    const Responder r = [](const BenchmarkItem& it, const std::string& prompt) {
        if (it.audio.path) throw Error(ErrorKind::IoError, "features missing");
        CHECK(prompt.find("(D) a passing car") != std::string::npos);
        const int guess = it.id == "i3" || it.id == "i7" ? (it.answer_index + 1) % 4 : it.answer_index;
        return Response{"The answer is " + choice_label(guess), it.id == "i0"};
    };
    const EvalReport lenient = evaluate(items, r);
    CHECK(lenient.total == 11);
    CHECK(lenient.errored == 1);
    CHECK(lenient.truncated == 1);
    CHECK(lenient.correct == 9);
    CHECK(lenient.accuracy() == doctest::Approx(9.0 / 11.0));
    int sum_total = 0, sum_correct = 0;
    for (const auto& [name, c] : lenient.categories) {
        sum_total += c.total;
        sum_correct += c.correct;
        CHECK(c.accuracy() >= 0.0);
        CHECK(c.accuracy() <= 1.0);
    }
    CHECK(sum_total == lenient.total);
    CHECK(sum_correct == lenient.correct);
    CHECK(lenient.categories.at("speech").total == 5);
    CHECK(lenient.categories.at("speech").correct == 4);
    CHECK(lenient.categories.at("music").total == 6);

    const EvalReport strict = evaluate(items, r, {.strict = true});
    CHECK(strict.total == 12);
    CHECK(strict.correct == 9);
    CHECK(strict.categories.at("music").total == 7);

    const nlohmann::json j = lenient.to_json();
    CHECK(j["overall"]["total"] == 11);
    CHECK(j["items"].size() == 12);
    CHECK(j["items"][9]["errored"] == true);
    CHECK(j["items"][0]["method"] == "letter");
    CHECK(j["items"][0]["truncated"] == true);
    CHECK(evaluate(items, r).to_json().dump() == j.dump());
    CHECK(kind_of([&] { evaluate({}, r); }) == ErrorKind::InvalidInput);
}

TEST_CASE("accuracy is invariant to consistent choice permutations") {
    std::vector<BenchmarkItem> items;
    for (int i = 0; i < 20; ++i) items.push_back(item("p" + std::to_string(i), i % 4, i % 2 ? "perception" : "reasoning"));
    // The responder has a fixed opinion per item, expressed in three different output forms.
    const Responder r = [](const BenchmarkItem& it, const std::string&) {
        const int k = std::stoi(it.id.substr(1));
        const std::string& belief = kChoices[static_cast<std::size_t>((k * 7) % 4)];
        const auto pos = std::find(it.choices.begin(), it.choices.end(), belief) - it.choices.begin();
        if (k % 3 == 0) return Response{"<think>hmm</think>The answer is " + choice_label(static_cast<int>(pos))};
        if (k % 3 == 1) return Response{belief};
        return Response{"I hear " + belief + " here"};
    };
    const EvalReport base = evaluate(items, r);
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<BenchmarkItem> shuffled = items;
        for (auto& it : shuffled) {
            const std::string answer = it.choices[static_cast<std::size_t>(it.answer_index)];
            std::shuffle(it.choices.begin(), it.choices.end(), rng);
            it.answer_index = static_cast<int>(std::find(it.choices.begin(), it.choices.end(), answer) - it.choices.begin());
        }
        const EvalReport permuted = evaluate(shuffled, r);
        CHECK(permuted.correct == base.correct);
        for (std::size_t i = 0; i < items.size(); ++i) {
            REQUIRE(permuted.audit[i].extracted.has_value());
            CHECK(shuffled[i].choices[static_cast<std::size_t>(*permuted.audit[i].extracted)] ==
                  items[i].choices[static_cast<std::size_t>(*base.audit[i].extracted)]);
        }
    }
    CHECK(base.correct > 0);
    CHECK(base.correct < 20);
}

TEST_CASE("self-labeled benchmark closes the loop") {
    const Responder echo = [](const BenchmarkItem& it, const std::string& prompt) {
        return Response{"<think>listening</think>" + it.id + " sounds like " + prompt};
    };
    std::vector<BenchmarkItem> items;
    for (int i = 0; i < 6; ++i) {
        BenchmarkItem it = item("q" + std::to_string(i), 0);
        it.question = "What is heard in clip " + std::to_string(i) + "?";
        const std::string own = strip_thinking(echo(it, it.question).text);
        it.choices = {"silence", own, "static noise"};
        it.answer_index = 1;
        items.push_back(it);
    }
    const EvalReport report = evaluate(items, echo, {.strict = true, .include_choices = false});
    CHECK(report.accuracy() == 1.0);
    for (const auto& a : report.audit) CHECK(a.method == ExtractionMethod::Exact);
}

TEST_CASE("model responder is greedy and deterministic") {
    auto bb = tiny_backbone();
    AlarmModel m(Variant::SingleContent, tiny_bank(), tiny_model_config(), bb);
    FeatureProvider fp(tiny_bank());
    const Responder r = model_responder(m, fp, 6);
    const auto it = item("m0", 0);
    const Response a = r(it, "What is heard?");
    const Response b = r(it, "What is heard?");
    CHECK(a.text == b.text);
    CHECK(a.truncated == b.truncated);
    const std::vector<BenchmarkItem> items = {item("m0", 0), item("m1", 2)};
    CHECK(evaluate(items, r).to_json().dump() == evaluate(items, r).to_json().dump());
    const EvalReport raw_bytes = evaluate({item("m3", 0)}, [](const BenchmarkItem&, const std::string&) {
        return Response{std::string("ok \xF6\xC3(") + "\xC3\xA9"};
    });
    CHECK(raw_bytes.to_json()["items"][0]["raw"] == "ok \xEF\xBF\xBD\xEF\xBF\xBD(\xC3\xA9");
    BenchmarkItem broken = item("m2", 1);
    broken.audio.duration = 0.0;
    const EvalReport rep = evaluate({broken}, r);
    CHECK(rep.errored == 1);
    CHECK(rep.total == 0);
}
