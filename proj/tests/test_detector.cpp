#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <set>
#include <thread>

#include "lastingbench/detector.hpp"
#include "lastingbench/harness.hpp"
#include "test_util.hpp"

namespace lb = lastingbench;

namespace {

// Server whose chat endpoint always returns a fixed string.
struct FixedReplyServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    explicit FixedReplyServer(std::string reply) {
        server.Post("/v1/chat/completions", [reply](const httplib::Request&,
                                                    httplib::Response& res) {
            nlohmann::json out = {
                {"choices", {{{"message", {{"role", "assistant"}, {"content", reply}}}}}}};
            res.set_content(out.dump(), "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FixedReplyServer() {
        server.stop();
        thread.join();
    }

    lb::ModelEndpoint endpoint() const {
        lb::ModelEndpoint e;
        e.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
        e.timeout_s = 5;
        return e;
    }
};

} // namespace

TEST_CASE("answer_matches rules") {
    std::vector<std::string> golds = {"Marie of Hohenstaufen"};
    CHECK(lb::answer_matches("Marie of Hohenstaufen", golds, lb::MatchRule::strict));
    CHECK(!lb::answer_matches("It was Marie of Hohenstaufen.", golds, lb::MatchRule::strict));
    CHECK(lb::answer_matches("It was Marie of Hohenstaufen.", golds, lb::MatchRule::substring));
    // Tokens must appear as a contiguous run.
    CHECK(!lb::answer_matches("Marie said of arc Hohenstaufen", golds, lb::MatchRule::substring));
    CHECK(!lb::answer_matches("I don't know", golds, lb::MatchRule::substring));
    CHECK_THROWS_AS(lb::answer_matches("x", {}, lb::MatchRule::strict), std::invalid_argument);
}

TEST_CASE("rephrase and contradict generation via sim") {
    lbtest::SimFixture fixture(11, 4, 0.5);
    lb::Gateway gateway;
    auto generator = fixture.faithful_endpoint();
    const std::string q = fixture.corpus.instances[0].question;

    std::string rephrased = lb::rephrase_question(gateway, generator, q);
    CHECK(rephrased != q);
    std::string contradictory = lb::contradict_question(gateway, generator, q);
    CHECK(contradictory != q);
    CHECK(lb::text::contains(contradictory, "not"));

    CHECK_THROWS_AS(lb::rephrase_question(gateway, generator, ""), std::invalid_argument);
    CHECK_THROWS_AS(lb::contradict_question(gateway, generator, ""), std::invalid_argument);
}

TEST_CASE("a generator that echoes the question is degenerate") {
    FixedReplyServer server("What?");
    lb::Gateway gateway;
    CHECK_THROWS_AS(lb::rephrase_question(gateway, server.endpoint(), "What?"),
                    lb::DegenerateRephraseError);
}

TEST_CASE("probes on the synthetic corpus") {
    lbtest::SimFixture fixture(17, 10, 0.4);
    lb::Gateway gateway;
    auto mixed = fixture.mixed_endpoint();
    auto faithful = fixture.faithful_endpoint();
    const auto& memorized = fixture.corpus.instances[0]; // first ids are memorized
    const auto& clean = fixture.corpus.instances.back();

    SUBCASE("contextless probe") {
        auto [mem_answer, mem_hit] =
            lb::contextless_probe(gateway, mixed, memorized, lb::MatchRule::substring, nullptr);
        CHECK(mem_hit);
        CHECK(mem_answer == memorized.gold_answers.front());

        auto [clean_answer, clean_hit] =
            lb::contextless_probe(gateway, faithful, memorized, lb::MatchRule::substring, nullptr);
        CHECK(!clean_hit);
        CHECK(clean_answer == "I don't know");
    }

    SUBCASE("rephrase probe keeps faithful readers correct") {
        auto generator = fixture.faithful_endpoint();
        std::string rephrased =
            lb::rephrase_question(gateway, generator, memorized.question);
        auto [answer, hit] = lb::rephrase_probe(gateway, faithful, memorized, rephrased,
                                                lb::MatchRule::substring, nullptr);
        CHECK(hit);
        auto [empty_answer, empty_hit] = lb::rephrase_probe(
            gateway, faithful, clean, "Entirely unrelated question about nothing?",
            lb::MatchRule::substring, nullptr);
        CHECK(!empty_hit);

        // A memorizing reader whose memory key shares too few tokens with the
        // rephrase misses as well when the context holds no evidence.
        lbtest::TempDir dir("lb-mem");
        lb::SimProfile mem;
        mem.mode = lb::SimMode::memorizing;
        mem.memory["what is the capital of veldrona"] = "Morvex";
        std::string mem_path = dir.str("mem.json");
        lb::save_profile(mem, mem_path);
        lb::ModelEndpoint mem_endpoint;
        mem_endpoint.base_url = "sim://" + mem_path;
        lb::QaInstance off_topic;
        off_topic.id = "off-1";
        off_topic.question = "What is the capital of Veldrona?";
        off_topic.gold_answers = {"Morvex"};
        off_topic.context = "Nothing relevant lives in this passage.";
        auto [below_answer, below_hit] =
            lb::rephrase_probe(gateway, mem_endpoint, off_topic,
                               "Which town hosts the famous winter regatta?",
                               lb::MatchRule::substring, nullptr);
        CHECK(!below_hit);
        CHECK(below_answer == "I don't know");
    }

    SUBCASE("contradiction probe") {
        auto generator = fixture.faithful_endpoint();
        std::string contradictory =
            lb::contradict_question(gateway, generator, memorized.question);

        auto [mem_answer, mem_leak] = lb::contradiction_probe(
            gateway, mixed, memorized, contradictory, lb::MatchRule::substring, nullptr);
        CHECK(mem_leak);
        CHECK(mem_answer == memorized.gold_answers.front());

        auto [faith_answer, faith_leak] = lb::contradiction_probe(
            gateway, faithful, memorized, contradictory, lb::MatchRule::substring, nullptr);
        CHECK(!faith_leak);
        CHECK(faith_answer == "I don't know");
    }
}

TEST_CASE("detect separates memorized from clean instances") {
    lbtest::SimFixture fixture(29, 10, 0.4);
    lb::Gateway gateway;
    auto mixed = fixture.mixed_endpoint();
    auto generator = fixture.faithful_endpoint();
    std::set<std::string> memorized(fixture.corpus.memorized_ids.begin(),
                                    fixture.corpus.memorized_ids.end());

    for (const auto& inst : fixture.corpus.instances) {
        lb::LeakageVerdict v = lb::detect(gateway, mixed, generator, inst);
        // The verdict always equals the disjunction of its flags.
        CHECK(v.leaked == (v.contextless_correct || v.rephrase_failed || v.contradiction_leaked));
        CHECK(v.leaked == (memorized.count(inst.id) > 0));
        if (v.leaked) CHECK(v.contextless_correct);
        CHECK(!v.transcripts.empty());
        CHECK(!v.perturbations.rephrased.empty());
        CHECK(v.perturbations.rephrased != inst.question);
        CHECK(!v.perturbations.contradictory.empty());
    }
}

TEST_CASE("trivially guessable golds are flagged high_prior") {
    lbtest::TempDir dir("lb-highprior");
    lb::SimProfile p;
    p.mode = lb::SimMode::memorizing;
    lb::QaInstance inst;
    inst.id = "yn-1";
    inst.question = "Is the harbor of Veldrona open at night?";
    inst.context = "The harbor has gates. They are sometimes closed.";
    inst.gold_answers = {"yes"};
    p.memory[lb::text::join(lb::text::norm_tokens(inst.question), " ")] = "yes";
    std::string path = dir.str("p.json");
    lb::save_profile(p, path);
    lb::ModelEndpoint model;
    model.base_url = "sim://" + path;

    lb::Gateway gateway;
    lb::LeakageVerdict v = lb::detect(gateway, model, model, inst);
    CHECK(v.leaked);
    CHECK(v.contextless_correct); // documented false-positive class
    CHECK(v.high_prior);

    lb::QaInstance year = inst;
    year.gold_answers = {"2013"};
    lb::LeakageVerdict vy = lb::detect(gateway, model, model, year);
    CHECK(vy.high_prior);
}

TEST_CASE("probe transport errors carry the probe name") {
    lbtest::SimFixture fixture(31, 2, 0.5);
    lb::Gateway gateway;
    lb::ModelEndpoint dead;
    dead.base_url = "http://127.0.0.1:9/v1"; // closed port
    dead.timeout_s = 1;
    dead.max_retries = 0;
    auto generator = fixture.faithful_endpoint();
    CHECK_THROWS_WITH_AS(
        lb::detect(gateway, dead, generator, fixture.corpus.instances[0]),
        doctest::Contains("contextless probe"), lb::TransportError);
}

TEST_CASE("contextless flag fraction equals the contextless EM mean under strict matching") {
    lbtest::SimFixture fixture(101, 15, 0.4);
    lb::Gateway gateway;
    auto mixed = fixture.mixed_endpoint();
    auto generator = fixture.faithful_endpoint();

    int flagged = 0;
    for (const auto& inst : fixture.corpus.instances) {
        auto v = lb::detect(gateway, mixed, generator, inst, lb::MatchRule::strict);
        if (v.contextless_correct) ++flagged;
    }
    double flag_fraction =
        static_cast<double>(flagged) / static_cast<double>(fixture.corpus.instances.size());

    auto run = lb::evaluate(gateway, mixed, fixture.corpus.instances,
                            lb::Condition::contextless);
    CHECK(flag_fraction == lb::aggregate_run(run).em_mean);
}

TEST_CASE("multiple rephrases vote on the rephrase-failed flag") {
    lbtest::SimFixture fixture(103, 6, 0.5);
    lb::Gateway gateway;
    auto v = lb::detect(gateway, fixture.faithful_endpoint(), fixture.faithful_endpoint(),
                        fixture.corpus.instances[0], lb::MatchRule::substring, 3);
    // A faithful reader answers every rephrase correctly.
    CHECK(!v.rephrase_failed);
    CHECK(!v.leaked);
}

TEST_CASE("verdict json has the documented shape") {
    lbtest::SimFixture fixture(37, 4, 0.5);
    lb::Gateway gateway;
    auto v = lb::detect(gateway, fixture.mixed_endpoint(), fixture.faithful_endpoint(),
                        fixture.corpus.instances[0]);
    auto j = lb::verdict_to_json("sim-0001", v);
    CHECK(j.at("id") == "sim-0001");
    CHECK(j.at("flags").contains("contextless_correct"));
    CHECK(j.at("flags").contains("rephrase_failed"));
    CHECK(j.at("flags").contains("contradiction_leaked"));
    CHECK(j.contains("leaked"));
    CHECK(j.at("answers").contains("contextless"));
}
