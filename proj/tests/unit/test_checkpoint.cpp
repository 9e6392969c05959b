#include <catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "oracles.hpp"

using namespace dgekt;

namespace {

struct Trained {
    TrainConfig config;
    DatasetSplit split;
    GraphSet graphs;
    TrainOutcome<double> out;
};

Trained train_small(Variant v = Variant::DGEKT) {
    SyntheticOptions o;
    o.students = 12;
    o.interactions = 12;
    const auto recs = synthetic_mastery_corpus(o);
    const auto vocab = build_vocabulary(recs);
    TrainConfig cfg;
    cfg.embedding_dim = 6;
    cfg.gru_hidden = 4;
    cfg.batch_size = 4;
    cfg.max_epochs = 2;
    cfg.variant = v;
    cfg.seed = 3;
    auto split = split_students(make_sequences(recs, vocab, 50), vocab, 0.8, 0.0, 3);
    auto graphs = build_graph_set(vocab, split.train, apply_variant(v));
    auto out = train<double>(split, graphs, cfg);
    return {cfg, split, graphs, std::move(out)};
}

std::string serialized(const Trained& t) {
    return checkpoint_container(t.out.model, t.out.adam, t.out.rng_state, t.split.vocabulary, t.graphs).serialize();
}

}  // namespace

TEST_CASE("container round trip of every dtype") {
    Container c;
    c.put_bytes("b", std::string("a\0b", 3));
    c.put_array<float>("f", {2}, {1.5f, -0.0f});
    c.put_array<double>("d", {1, 2}, {3.25, 1e-300});
    c.put_array<std::int64_t>("i", {3}, {-1, 0, 1LL << 40});
    const auto back = Container::parse(c.serialize());
    CHECK(back.bytes("b") == std::string("a\0b", 3));
    CHECK(back.array<float>("f") == std::vector<float>{1.5f, -0.0f});
    CHECK(std::signbit(back.array<float>("f")[1]));
    CHECK(back.array<double>("d") == std::vector<double>{3.25, 1e-300});
    CHECK(back.array<std::int64_t>("i") == std::vector<std::int64_t>{-1, 0, 1LL << 40});
    CHECK(back.at("d").shape == std::vector<std::uint64_t>{1, 2});
    CHECK(back.serialize() == c.serialize());
    CHECK_THROWS_AS(back.array<double>("f"), Error);
    CHECK_THROWS_AS(back.at("missing"), Error);
    CHECK_THROWS_AS(c.put_array<double>("x", {2, 2}, {1.0}), ShapeError);
}

TEST_CASE("corrupt containers are rejected") {
    Container c;
    c.put_array<double>("d", {2}, {1.0, 2.0});
    const auto data = c.serialize();
    CHECK_THROWS_WITH(Container::parse("XGEKT1" + data.substr(6)), Catch::Matchers::ContainsSubstring("magic"));
    auto bumped = data;
    bumped[6] = 2;
    CHECK_THROWS_WITH(Container::parse(bumped), Catch::Matchers::ContainsSubstring("version 2"));
    for (std::size_t cut : {data.size() - 1, data.size() / 2, std::size_t{12}, std::size_t{3}})
        CHECK_THROWS_AS(Container::parse(data.substr(0, cut)), ParseError);
    auto flipped = data;
    flipped[data.size() - 12] ^= 0x10;
    CHECK_THROWS_WITH(Container::parse(flipped), Catch::Matchers::ContainsSubstring("corrupt"));
}

TEST_CASE("checkpoint round trip is bitwise") {
    for (auto v : {Variant::DGEKT, Variant::RmDTG, Variant::RmCAHG, Variant::TG, Variant::CAG, Variant::RmOKD}) {
        INFO(to_string(v));
        const auto t = train_small(v);
        const auto path = (std::filesystem::temp_directory_path() / ("dgekt_ckpt_" + to_string(v) + ".bin")).string();
        save_checkpoint(path, t.out.model, t.out.adam, t.out.rng_state, t.split.vocabulary, t.graphs);
        const auto loaded = load_checkpoint<double>(path, &t.config);
        std::filesystem::remove(path);

        const auto a = t.out.model.snapshot();
        const auto b = loaded.model.snapshot();
        REQUIRE(a.size() == b.size());
        for (std::size_t k = 0; k < a.size(); ++k) {
            REQUIRE(a[k].same_shape(b[k]));
            CHECK(std::memcmp(a[k].data(), b[k].data(), a[k].size() * sizeof(double)) == 0);
        }
        CHECK(loaded.adam.step_count == t.out.adam.step_count);
        CHECK(loaded.adam.first_moment == t.out.adam.first_moment);
        CHECK(loaded.adam.second_moment == t.out.adam.second_moment);
        CHECK(loaded.rng_state == t.out.rng_state);
        CHECK(loaded.vocabulary.exercises == t.split.vocabulary.exercises);
        CHECK(loaded.vocabulary.exercise_to_concepts == t.split.vocabulary.exercise_to_concepts);
        CHECK(nlohmann::json(loaded.config) == nlohmann::json(t.config));
        if (t.graphs.dtg) {
            REQUIRE(loaded.graphs.dtg);
            CHECK(loaded.graphs.dtg->counts.triplets() == t.graphs.dtg->counts.triplets());
        }
        CHECK(loaded.graphs.cahg.has_value() == t.graphs.cahg.has_value());

        // Same predictions from the reloaded model.
        const auto in_a = make_graph_inputs<double>(t.graphs, t.out.model.wiring());
        const auto in_b = make_graph_inputs<double>(loaded.graphs, loaded.model.wiring());
        const auto& hist = t.split.test[0].steps;
        CHECK(t.out.model.predict(in_a, hist, 2) == loaded.model.predict(in_b, hist, 2));
    }
}

TEST_CASE("reloaded rng resumes the same stream") {
    const auto t = train_small();
    const auto loaded = load_checkpoint<double>(Container::parse(serialized(t)));
    Rng a, b;
    std::istringstream(t.out.rng_state) >> a;
    std::istringstream(loaded.rng_state) >> b;
    CHECK(a() == b());
}

TEST_CASE("truncated checkpoint fails without returning state") {
    const auto t = train_small();
    const auto data = serialized(t);
    for (std::size_t cut : {data.size() - 1, data.size() - 9, data.size() / 2, std::size_t{100}})
        CHECK_THROWS_AS(load_checkpoint<double>(Container::parse(data.substr(0, cut))), ParseError);
}

TEST_CASE("config mismatch names both dimensions") {
    const auto t = train_small();
    auto other = t.config;
    other.embedding_dim = 64;
    const auto c = Container::parse(serialized(t));
    CHECK_THROWS_WITH(load_checkpoint<double>(c, &other),
                      Catch::Matchers::ContainsSubstring("embedding_dim") && Catch::Matchers::ContainsSubstring("6") &&
                          Catch::Matchers::ContainsSubstring("64"));
    other = t.config;
    other.variant = Variant::RmOKD;
    CHECK_THROWS_WITH(load_checkpoint<double>(c, &other), Catch::Matchers::ContainsSubstring("variant"));
    CHECK_THROWS_AS(load_checkpoint<float>(c), Error);
}

TEST_CASE("stored tensor shapes are validated") {
    const auto t = train_small();
    auto c = Container::parse(serialized(t));
    c.put_matrix("param/concept/x0", ad::Matrix<double>(3, 3));
    CHECK_THROWS_WITH(load_checkpoint<double>(c), Catch::Matchers::ContainsSubstring("concept/x0"));
    auto d = Container::parse(serialized(t));
    d.put_matrix("param/extra", ad::Matrix<double>(1, 1));
    CHECK_THROWS_WITH(load_checkpoint<double>(d), Catch::Matchers::ContainsSubstring("unexpected"));
}

TEST_CASE("identical training runs write identical checkpoints") {
    CHECK(serialized(train_small()) == serialized(train_small()));
}

TEST_CASE("graph container holds the transition matrices") {
    const auto t = train_small();
    const auto cahg = build_cahg(t.split.vocabulary);
    const auto c = Container::parse(graphs_container(t.split.vocabulary, cahg, *t.graphs.dtg).serialize());
    CHECK(c.at("graph/cahg_incidence").shape == std::vector<std::uint64_t>{cahg.incidence.size(), 2});
    CHECK(c.array<double>("graph/dtg_a_out/value").size() == t.graphs.dtg->a_out.nnz());
    const auto g = get_transition_graph(c, t.graphs.dtg->num_nodes);
    CHECK(g.d_out == t.graphs.dtg->d_out);
    CHECK(vocabulary_from_json(nlohmann::json::parse(c.bytes("meta/vocabulary"))).concepts ==
          t.split.vocabulary.concepts);
}
