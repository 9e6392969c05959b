#include <catch_amalgamated.hpp>

#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"

using namespace dgekt;

namespace {

std::vector<InteractionRecord> parse(const std::string& text, ParseStats* stats = nullptr) {
    std::istringstream in(text);
    return parse_log(in, LogFormat::Csv, stats);
}

const std::string kHeader = std::string(kCsvHeader) + "\n";

std::vector<InteractionRecord> student_records(const std::string& id, std::size_t n) {
    std::vector<InteractionRecord> out;
    for (std::size_t k = 0; k < n; ++k)
        out.push_back({id, "e" + std::to_string(k % 3), {"c"}, static_cast<int>(k % 2), static_cast<std::int64_t>(k)});
    return out;
}

std::vector<StudentSequence> students(std::size_t count) {
    std::vector<StudentSequence> s;
    for (std::size_t i = 0; i < count; ++i) s.push_back({"s" + std::to_string(1000 + i), {{0, 1}, {0, 0}}});
    return s;
}

}  // namespace

TEST_CASE("quoted concept list maps to a record") {
    auto r = parse(kHeader + "s1,e7,\"c1;c2\",1,3\n");
    REQUIRE(r.size() == 1);
    CHECK(r[0] == InteractionRecord{"s1", "e7", {"c1", "c2"}, 1, 3});
}

TEST_CASE("rows with an empty concept column are dropped and counted") {
    ParseStats stats;
    auto r = parse(kHeader + "s1,e1,,1,0\ns1,e2,c1,0,1\ns2,e1,\" ; \",1,0\n", &stats);
    CHECK(r.size() == 1);
    CHECK(stats.rows == 3);
    CHECK(stats.dropped_without_concepts == 2);
}

TEST_CASE("non-binary correct field names the line") {
    try {
        (void)parse(kHeader + "s1,e1,c1,1,0\ns1,e2,c1,2,1\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("malformed rows are rejected with line numbers") {
    CHECK_THROWS_WITH(parse(kHeader + "s1,e1,c1,1\n"), Catch::Matchers::ContainsSubstring("line 2"));
    CHECK_THROWS_WITH(parse(kHeader + "s1,e1,\"c1,1,0\n"), Catch::Matchers::ContainsSubstring("unterminated"));
    CHECK_THROWS_WITH(parse(kHeader + "s1,e1,c1,1,x\n"), Catch::Matchers::ContainsSubstring("order"));
    CHECK_THROWS_WITH(parse("a,b,c\n"), Catch::Matchers::ContainsSubstring("line 1"));
    CHECK_THROWS_AS(parse(""), ParseError);
}

TEST_CASE("byte-order mark, CRLF and blank lines are tolerated") {
    auto r = parse("\xEF\xBB\xBF" + std::string(kCsvHeader) + "\r\ns1,e1,c1,0,5\r\n\r\n");
    REQUIRE(r.size() == 1);
    CHECK(r[0].order_key == 5);
    CHECK(r[0].correct == 0);
}

TEST_CASE("sample data file parses") {
    std::ifstream in(DGEKT_TEST_DATA "/sample_log.csv");
    REQUIRE(in);
    ParseStats stats;
    auto r = parse_log(in, LogFormat::Csv, &stats);
    CHECK(r.size() == 900);
    CHECK(stats.dropped_without_concepts == 0);
}

TEST_CASE("vocabulary is lexicographic with concept unions") {
    std::vector<InteractionRecord> recs{{"s", "e2", {"c1"}, 1, 0}, {"s", "e1", {"c1"}, 1, 1}, {"t", "e2", {"c2"}, 0, 0}};
    auto v = build_vocabulary(recs);
    REQUIRE(v.exercises == std::vector<std::string>{"e1", "e2"});
    CHECK(v.exercise_index("e1") == 0);
    CHECK(v.exercise_index("e2") == 1);
    CHECK(v.exercise_index("e3") == -1);
    CHECK(v.concepts == std::vector<std::string>{"c1", "c2"});
    CHECK(v.exercise_to_concepts[1] == std::vector<std::size_t>{0, 1});
    REQUIRE_THROWS_AS(build_vocabulary({}), Error);
}

TEST_CASE("chunking into blocks of max_len") {
    auto lens = [](std::size_t n) {
        auto recs = student_records("s", n);
        std::vector<std::size_t> out;
        for (const auto& s : make_sequences(recs, build_vocabulary(recs), 50)) out.push_back(s.steps.size());
        return out;
    };
    CHECK(lens(120) == std::vector<std::size_t>{50, 50, 20});
    CHECK(lens(50) == std::vector<std::size_t>{50});
    CHECK(lens(51) == std::vector<std::size_t>{50});
    CHECK(lens(1).empty());
    REQUIRE_THROWS_AS(make_sequences(student_records("s", 3), build_vocabulary(student_records("s", 3)), 1), Error);
}

TEST_CASE("sequences follow order keys and skip unknown exercises") {
    std::vector<InteractionRecord> recs{{"s", "b", {"c"}, 1, 9}, {"s", "a", {"c"}, 0, 2}, {"s", "z", {"c"}, 1, 5}};
    auto vocab = build_vocabulary({recs[0], recs[1]});
    auto seqs = make_sequences(recs, vocab, 50);
    REQUIRE(seqs.size() == 1);
    CHECK(seqs[0].steps == std::vector<Step>{{0, 0}, {1, 1}});
}

TEST_CASE("student split arithmetic") {
    Vocabulary v;
    auto s10 = split_students(students(10), v, 0.8, 0.0, 1);
    CHECK(s10.train.size() == 8);
    CHECK(s10.validation.empty());
    CHECK(s10.test.size() == 2);

    auto s100 = split_students(students(100), v, 0.8, 0.1, 1);
    CHECK(s100.train.size() == 72);
    CHECK(s100.validation.size() == 8);
    CHECK(s100.test.size() == 20);

    std::set<std::string> seen;
    for (const auto* part : {&s100.train, &s100.validation, &s100.test})
        for (const auto& s : *part) CHECK(seen.insert(s.student_id).second);
    CHECK(seen.size() == 100);

    auto again = split_students(students(100), v, 0.8, 0.1, 1);
    CHECK(again.train == s100.train);
    CHECK(again.test == s100.test);
    auto other = split_students(students(100), v, 0.8, 0.1, 2);
    CHECK_FALSE(other.train == s100.train);

    REQUIRE_THROWS_AS(split_students(students(2), v), Error);
}

TEST_CASE("all chunks of a student land in the same partition") {
    std::vector<InteractionRecord> recs;
    for (int s = 0; s < 12; ++s) {
        auto r = student_records("u" + std::to_string(s), 23);
        recs.insert(recs.end(), r.begin(), r.end());
    }
    auto vocab = build_vocabulary(recs);
    auto split = split_students(make_sequences(recs, vocab, 5), vocab, 0.75, 0.2, 3);
    std::set<std::string> train, test;
    for (const auto& s : split.train) train.insert(s.student_id);
    for (const auto& s : split.test) test.insert(s.student_id);
    for (const auto& id : test) CHECK_FALSE(train.count(id));
    CHECK(split.train.size() % 5 == 0);
}

TEST_CASE("node index scheme") {
    CHECK(node_index(3, 1) == 6);
    CHECK(node_index(3, 0) == 7);
    CHECK(node_exercise(11) == std::pair<std::size_t, int>{5, 0});
    std::set<std::size_t> seen;
    for (std::size_t i = 0; i < 50; ++i)
        for (int r : {0, 1}) {
            const auto v = node_index(i, r);
            CHECK(v < 100);
            CHECK(seen.insert(v).second);
            CHECK(node_exercise(v) == std::pair<std::size_t, int>{i, r});
        }
}
