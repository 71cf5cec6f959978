#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <string>
#include <vector>

#include "lastingbench/dataset.hpp"
#include "test_util.hpp"

namespace lb = lastingbench;
using lbtest::TempDir;

namespace {

lb::QaInstance make_instance(std::string context) {
    lb::QaInstance inst;
    inst.id = "t-1";
    inst.dataset = "test";
    inst.question = "q?";
    inst.gold_answers = {"a"};
    inst.context = std::move(context);
    return inst;
}

// Every non-whitespace byte must land in exactly one span, all spans must
// slice the source exactly, and spans must be sorted and disjoint.
template <typename SpanLike>
void check_tiling(const std::string& source, const std::vector<SpanLike>& pieces) {
    std::vector<bool> covered(source.size(), false);
    size_t prev_end = 0;
    for (const auto& p : pieces) {
        CHECK(p.span.start >= prev_end);
        CHECK(p.span.end <= source.size());
        CHECK(p.text == source.substr(p.span.start, p.span.end - p.span.start));
        for (size_t i = p.span.start; i < p.span.end; ++i) covered[i] = true;
        prev_end = p.span.end;
    }
    for (size_t i = 0; i < source.size(); ++i)
        if (!lb::text::is_space(source[i])) CHECK(covered[i]);
}

std::string random_paragraph(std::mt19937_64& rng) {
    static const char* words[] = {"alpha", "beta", "gamma", "delta", "omega", "sigma"};
    size_t n = 3 + rng() % 8;
    std::string p;
    for (size_t i = 0; i < n; ++i) {
        if (i) p += " ";
        p += words[rng() % 6];
    }
    return p + ".";
}

} // namespace

// ---------------------------------------------------------------------------
// split_sentences
// ---------------------------------------------------------------------------

TEST_CASE("split_sentences respects abbreviations") {
    auto s = lb::split_sentences("He died c. 1261. He ruled.");
    REQUIRE(s.size() == 2);
    CHECK(s[0].text == "He died c. 1261.");
    CHECK(s[1].text == "He ruled.");
}

TEST_CASE("split_sentences edge cases") {
    CHECK(lb::split_sentences("").empty());
    CHECK(lb::split_sentences("   \n\t ").empty());

    auto one = lb::split_sentences("No terminator here");
    REQUIRE(one.size() == 1);
    CHECK(one[0].text == "No terminator here");

    auto abbr = lb::split_sentences("Mr. Smith arrived. Dr. Jones left!");
    REQUIRE(abbr.size() == 2);
    CHECK(abbr[0].text == "Mr. Smith arrived.");

    // e.g. followed by an uppercase word still does not split.
    auto eg = lb::split_sentences("Fruit, e.g. Apples, is good. Bananas too.");
    REQUIRE(eg.size() == 2);

    // Decimal points and lowercase continuations never split.
    auto dec = lb::split_sentences("Pi is 3.14 roughly. the rest follows.");
    REQUIRE(dec.size() == 1);

    auto excl = lb::split_sentences("Stop! Now.");
    REQUIRE(excl.size() == 2);
}

TEST_CASE("split_sentences tiles arbitrary text") {
    std::mt19937_64 rng(99);
    static const char* pieces[] = {"Mr. Low spoke.", "It rained...",  "Why?",
                                   "He died c. 1261.", "All done!",   "e.g. pears",
                                   "Numbers like 3.14 stay."};
    for (int trial = 0; trial < 200; ++trial) {
        std::string text;
        size_t n = rng() % 6;
        for (size_t i = 0; i < n; ++i) {
            text += pieces[rng() % 7];
            text += (rng() % 3 == 0) ? "\n" : " ";
        }
        auto sentences = lb::split_sentences(text);
        check_tiling(text, sentences);
    }
}

// ---------------------------------------------------------------------------
// chunk_context
// ---------------------------------------------------------------------------

TEST_CASE("chunk_context splits on blank lines") {
    auto chunks = lb::chunk_context(make_instance("A.\n\nB."));
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].text == "A.");
    CHECK(chunks[1].text == "B.");
    CHECK(chunks[0].index == 0);
    CHECK(chunks[1].index == 1);
}

TEST_CASE("chunk_context keeps a single paragraph whole") {
    std::string context(300, 'x');
    auto chunks = lb::chunk_context(make_instance(context));
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0].span.start == 0);
    CHECK(chunks[0].span.end == 300);
}

TEST_CASE("chunk round-trip oracle on random paragraph sets") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        size_t n = 1 + rng() % 5;
        std::vector<std::string> paragraphs;
        for (size_t i = 0; i < n; ++i) paragraphs.push_back(random_paragraph(rng));
        std::string context = lb::text::join(paragraphs, "\n\n");
        auto chunks = lb::chunk_context(make_instance(context));
        REQUIRE(chunks.size() == n);
        std::vector<std::string> texts;
        for (const auto& c : chunks) texts.push_back(c.text);
        CHECK(lb::text::join(texts, "\n\n") == context);
        check_tiling(context, chunks);
    }
}

TEST_CASE("chunk_context covers messy whitespace and single newlines") {
    std::string context = "  first para\nstill first\n\n\n  second para  \n\t\n third ";
    auto chunks = lb::chunk_context(make_instance(context));
    REQUIRE(chunks.size() == 3);
    CHECK(chunks[0].text == "first para\nstill first");
    check_tiling(context, chunks);
}

TEST_CASE("long paragraphs split at sentence boundaries") {
    std::string sentence = "This sentence is about forty characters.";
    std::string para;
    for (int i = 0; i < 10; ++i) para += (i ? " " : "") + sentence;
    auto chunks = lb::chunk_context(make_instance(para), lb::ChunkPolicy{100});
    CHECK(chunks.size() > 1);
    for (const auto& c : chunks) CHECK(c.span.length() <= 100);
    check_tiling(para, chunks);

    // A single oversized sentence stays whole.
    std::string giant(500, 'y');
    auto one = lb::chunk_context(make_instance(giant), lb::ChunkPolicy{100});
    REQUIRE(one.size() == 1);
}

TEST_CASE("chunk_context is deterministic") {
    std::string context = "Alpha beta.\n\nGamma delta. Epsilon zeta.\n\nEta theta.";
    auto a = lb::chunk_context(make_instance(context));
    auto b = lb::chunk_context(make_instance(context));
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].span == b[i].span);
        CHECK(a[i].text == b[i].text);
    }
}

TEST_CASE("multi-byte UTF-8 content survives chunking, splitting and splicing") {
    std::string context =
        "Caf\xc3\xa9 r\xc3\xa9sum\xc3\xa9 is na\xc3\xafve. Z\xc3\xbcrich hosts it.\n\n"
        "\xe6\x97\xa5\xe6\x9c\xac\xe8\xaa\x9e text mixed in. Final bit.";
    lb::QaInstance inst;
    inst.context = context;

    auto chunks = lb::chunk_context(inst);
    REQUIRE(chunks.size() == 2);
    check_tiling(context, chunks);

    auto sentences = lb::sentences_in_chunk(chunks[0]);
    REQUIRE(sentences.size() == 2);
    CHECK(sentences[0].text == "Caf\xc3\xa9 r\xc3\xa9sum\xc3\xa9 is na\xc3\xafve.");
    for (const auto& s : sentences)
        CHECK(s.text == context.substr(s.span.start, s.span.end - s.span.start));
}

TEST_CASE("sentences_in_chunk rebases spans") {
    std::string context = "Ignore me.\n\nFirst real. Second real.";
    auto chunks = lb::chunk_context(make_instance(context));
    REQUIRE(chunks.size() == 2);
    auto sentences = lb::sentences_in_chunk(chunks[1]);
    REQUIRE(sentences.size() == 2);
    for (const auto& s : sentences) {
        CHECK(s.chunk_index == 1);
        CHECK(s.text == context.substr(s.span.start, s.span.end - s.span.start));
    }
}

// ---------------------------------------------------------------------------
// JSONL I/O
// ---------------------------------------------------------------------------

TEST_CASE("load_jsonl basics") {
    TempDir dir("lb-data");
    std::string path = dir.str("hotpot.jsonl");

    SUBCASE("one record with one gold") {
        lbtest::write_file(path,
                           R"({"input":"Who is the paternal grandmother?","context":"ctx","answers":["Marie of Hohenstaufen"]})"
                           "\n");
        auto instances = lb::load_jsonl(path);
        REQUIRE(instances.size() == 1);
        CHECK(instances[0].gold_answers == std::vector<std::string>{"Marie of Hohenstaufen"});
        CHECK(instances[0].id == "hotpot-1"); // synthesized from file stem + line
        CHECK(instances[0].dataset == "hotpot");
    }

    SUBCASE("empty file") {
        lbtest::write_file(path, "");
        CHECK(lb::load_jsonl(path).empty());
    }

    SUBCASE("empty answers rejected with id") {
        lbtest::write_file(path, R"({"_id":"bad-7","input":"q","context":"c","answers":[]})"
                                 "\n");
        CHECK_THROWS_WITH_AS(lb::load_jsonl(path),
                             doctest::Contains("empty gold answers for id bad-7"),
                             std::runtime_error);
    }

    SUBCASE("malformed line names its number") {
        lbtest::write_file(path, R"({"input":"q","context":"c","answers":["a"]})"
                                 "\nnot json\n");
        CHECK_THROWS_WITH_AS(lb::load_jsonl(path), doctest::Contains(":2:"),
                             std::runtime_error);
    }

    SUBCASE("unknown fields pass through") {
        lbtest::write_file(
            path, R"({"_id":"x","input":"q","context":"c","answers":["a"],"length":12})"
                  "\n");
        auto instances = lb::load_jsonl(path);
        REQUIRE(instances.size() == 1);
        CHECK(instances[0].extra.at("length") == 12);
    }

    SUBCASE("explicit id field is honored") {
        lbtest::write_file(path, R"({"id":"my-id","input":"q","context":"c","answers":["a"]})"
                                 "\n");
        CHECK(lb::load_jsonl(path)[0].id == "my-id");
    }

    SUBCASE("duplicate ids are rejected") {
        lbtest::write_file(path,
                           R"({"_id":"dup","input":"q","context":"c","answers":["a"]})"
                           "\n"
                           R"({"_id":"dup","input":"q2","context":"c2","answers":["b"]})"
                           "\n");
        CHECK_THROWS_WITH_AS(lb::load_jsonl(path), doctest::Contains("duplicate id dup"),
                             std::runtime_error);
    }

    SUBCASE("missing file") { CHECK_THROWS(lb::load_jsonl(dir.str("nope.jsonl"))); }
}

TEST_CASE("load-write-load is a fixpoint for untouched instances") {
    TempDir dir("lb-data");
    std::string first = dir.str("a.jsonl");
    std::string second = dir.str("b.jsonl");
    lbtest::write_file(
        first,
        R"({"_id":"i1","input":"q1","context":"c1","answers":["a1"],"length":3})"
        "\n"
        R"({"_id":"i2","input":"q2","context":"c2","answers":["a2","alt"],"dataset":"dx"})"
        "\n");
    auto once = lb::load_jsonl(first);
    lb::write_jsonl(once, second);
    auto twice = lb::load_jsonl(second);
    REQUIRE(once.size() == twice.size());
    for (size_t i = 0; i < once.size(); ++i) {
        CHECK(once[i].id == twice[i].id);
        CHECK(once[i].context == twice[i].context);
        CHECK(once[i].question == twice[i].question);
        CHECK(once[i].gold_answers == twice[i].gold_answers);
        CHECK(once[i].dataset == twice[i].dataset);
    }
    // And writing the reloaded list again produces identical bytes.
    std::string third = dir.str("c.jsonl");
    lb::write_jsonl(twice, third);
    CHECK(lbtest::read_file(second) == lbtest::read_file(third));
}

TEST_CASE("write_defended_jsonl") {
    TempDir dir("lb-data");
    std::string path = dir.str("defended.jsonl");

    lb::QaInstance inst;
    inst.id = "d-1";
    inst.dataset = "demo";
    inst.question = "Who?";
    inst.context = "AAA hero BBB villain CCC";
    inst.gold_answers = {"hero"};

    SUBCASE("unchanged instance round trips verbatim with empty edits") {
        lb::DefendedInstance d = lb::unchanged_instance(inst);
        lb::write_defended_jsonl({d}, path);
        auto reloaded = lb::load_jsonl(path);
        REQUIRE(reloaded.size() == 1);
        CHECK(reloaded[0].context == inst.context);
        CHECK(reloaded[0].gold_answers == inst.gold_answers);
        CHECK(reloaded[0].extra.at("lastingbench_edits").empty());
        CHECK(reloaded[0].extra.at("original_answers") ==
              nlohmann::json(inst.gold_answers));
    }

    SUBCASE("two edits are recorded with spans") {
        lb::DefendedInstance d;
        d.id = inst.id;
        d.original = inst;
        d.antifact_answer = "rebel";
        d.defended_context = "AAA rebel BBB nobody CCC";
        d.edits = {lb::Edit{lb::Span{4, 8}, "hero", "rebel"},
                   lb::Edit{lb::Span{13, 20}, "villain", "nobody"}};
        lb::write_defended_jsonl({d}, path);
        auto reloaded = lb::load_jsonl(path);
        REQUIRE(reloaded.size() == 1);
        CHECK(reloaded[0].gold_answers == std::vector<std::string>{"rebel"});
        const auto& edits = reloaded[0].extra.at("lastingbench_edits");
        REQUIRE(edits.size() == 2);
        CHECK(edits[0].at("original") == "hero");
        CHECK(edits[0].at("replacement") == "rebel");
        CHECK(edits[1].at("span") == nlohmann::json({13, 20}));
    }
}
