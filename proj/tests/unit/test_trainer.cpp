#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"

using namespace dgekt;
using Catch::Approx;

namespace {

DatasetSplit synthetic_split(std::size_t students, std::uint64_t seed, double train_frac = 0.8) {
    SyntheticOptions o;
    o.students = students;
    o.seed = seed;
    const auto recs = synthetic_mastery_corpus(o);
    const auto vocab = build_vocabulary(recs);
    return split_students(make_sequences(recs, vocab, 50), vocab, train_frac, 0.1, seed);
}

TrainConfig small_config() {
    TrainConfig c;
    c.embedding_dim = 16;
    c.gru_hidden = 16;
    c.batch_size = 8;
    c.max_epochs = 3;
    c.seed = 5;
    return c;
}

}  // namespace

TEST_CASE("auc examples") {
    CHECK(evaluate_auc({{0.9, 1}, {0.1, 0}}) == 1.0);
    CHECK(evaluate_auc({{0.5, 1}, {0.5, 0}}) == 0.5);
    CHECK(evaluate_auc({{0.1, 1}, {0.9, 0}}) == 0.0);
    CHECK(evaluate_auc({{0.2, 1}, {0.8, 1}, {0.5, 0}, {0.8, 0}}) == 0.375);
}

TEST_CASE("auc needs both classes and binary labels") {
    CHECK_THROWS_WITH(evaluate_auc({{0.3, 1}, {0.4, 1}}), Catch::Matchers::ContainsSubstring("2 positive and 0 negative"));
    CHECK_THROWS_WITH(evaluate_auc({{0.3, 0}}), Catch::Matchers::ContainsSubstring("0 positive and 1 negative"));
    CHECK_THROWS_AS(evaluate_auc({{0.3, 0}, {0.2, 2}}), Error);
}

TEST_CASE("auc equals brute-force pair counting") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = trial == 0 ? 200 : 2 + rng() % 199;
        std::vector<ScoreLabel> s(n);
        for (auto& x : s) {
            // coarse scores give many ties
            x.score = trial % 2 ? std::round(u(rng) * 10) / 10 : u(rng);
            x.label = u(rng) < 0.4 ? 1 : 0;
        }
        s[0].label = 1;
        s[1].label = 0;
        CHECK(std::abs(evaluate_auc(s) - oracle::auc(s)) <= 1e-12);
    }
}

TEST_CASE("auc is invariant under a strictly increasing transform") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<ScoreLabel> s(300), t(300);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = {u(rng), u(rng) < 0.5 ? 1 : 0};
        t[i] = {2 * s[i].score - s[i].score * s[i].score, s[i].label};
    }
    CHECK(evaluate_auc(s) == evaluate_auc(t));
}

TEST_CASE("first-epoch cross-entropy sits near ln 2") {
    auto split = synthetic_split(20, 7, 0.8);
    TrainConfig cfg;
    cfg.batch_size = 5;
    cfg.max_epochs = 1;
    cfg.seed = 1;
    const auto graphs = build_graph_set(split.vocabulary, split.train, apply_variant(cfg.variant));
    const auto out = train<float>(split, graphs, cfg);
    REQUIRE(out.report.epochs.size() == 1);
    const auto& e = out.report.epochs[0];
    for (double ce : {e.ce_concept, e.ce_transition, e.ce_teacher}) CHECK(std::abs(ce - std::log(2.0)) < 0.15);
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto split = synthetic_split(30, 3);
    const auto cfg = small_config();
    const auto graphs = build_graph_set(split.vocabulary, split.train, apply_variant(cfg.variant));
    const auto a = train<double>(split, graphs, cfg);
    const auto b = train<double>(split, graphs, cfg);
    REQUIRE(a.report.epochs.size() == b.report.epochs.size());
    for (std::size_t i = 0; i < a.report.epochs.size(); ++i) {
        CHECK(a.report.epochs[i].train_loss == b.report.epochs[i].train_loss);
        CHECK(a.report.epochs[i].kd == b.report.epochs[i].kd);
    }
    CHECK(a.report.auc == b.report.auc);
    CHECK(a.model.snapshot() == b.model.snapshot());
    CHECK(a.rng_state == b.rng_state);
}

TEST_CASE("training reports test predictions and keeps the best validation epoch") {
    auto split = synthetic_split(40, 9);
    auto cfg = small_config();
    cfg.max_epochs = 6;
    const auto graphs = build_graph_set(split.vocabulary, split.train, apply_variant(cfg.variant));
    std::vector<double> seen;
    const auto out = train<double>(split, graphs, cfg, [&](const EpochStats& s, const Model<double>&, const GraphInputs<double>&) {
        seen.push_back(s.val_auc);
        return true;
    });
    CHECK(seen.size() == 6);
    std::size_t want = 0;
    for (const auto& s : split.test) want += s.steps.size() - 1;
    CHECK(out.report.predictions.size() == want);
    CHECK(out.report.auc == Approx(evaluate_auc(score_labels(out.report.predictions))));
    std::size_t best = 0;
    for (std::size_t i = 1; i < seen.size(); ++i)
        if (seen[i] > seen[best]) best = i;
    CHECK(out.report.best_epoch == best);
    CHECK(out.report.best_val_auc == seen[best]);

    // The restored model reproduces the best validation score.
    const auto inputs = make_graph_inputs<double>(graphs, out.model.wiring());
    const auto val = score_sequences(out.model, inputs, split.validation, cfg.batch_size);
    CHECK(evaluate_auc(score_labels(val.predictions)) == seen[best]);
}

TEST_CASE("callback can stop training and patience ends a stalled run") {
    auto split = synthetic_split(30, 4);
    auto cfg = small_config();
    cfg.max_epochs = 50;
    const auto graphs = build_graph_set(split.vocabulary, split.train, apply_variant(cfg.variant));
    const auto stopped = train<double>(split, graphs, cfg, [](const EpochStats& s, const Model<double>&, const GraphInputs<double>&) {
        return s.epoch < 1;
    });
    CHECK(stopped.report.epochs.size() == 2);

    cfg.learning_rate = 1e-12;
    cfg.early_stop_patience = 2;
    const auto stalled = train<double>(split, graphs, cfg);
    CHECK(stalled.report.epochs.size() < 50);
}

TEST_CASE("divergence names the epoch and batch") {
    auto split = synthetic_split(30, 4);
    auto cfg = small_config();
    cfg.learning_rate = 1e30;
    const auto graphs = build_graph_set(split.vocabulary, split.train, apply_variant(cfg.variant));
    CHECK_THROWS_WITH(train<float>(split, graphs, cfg),
                      Catch::Matchers::ContainsSubstring("epoch 0") && Catch::Matchers::ContainsSubstring("batch"));
}

TEST_CASE("transition graph uses training sequences only") {
    auto split = synthetic_split(30, 6);
    const auto graphs = build_graph_set(split.vocabulary, split.train, apply_variant(Variant::DGEKT));
    const auto want = build_dtg(split.train, split.vocabulary.num_exercises());
    CHECK(graphs.dtg->counts.triplets() == want.counts.triplets());
    std::int64_t total = 0;
    for (const auto& t : graphs.dtg->counts.triplets()) total += t.value;
    std::int64_t pairs = 0;
    for (const auto& s : split.train) pairs += static_cast<std::int64_t>(s.steps.size()) - 1;
    CHECK(total == pairs);
}

TEST_CASE("trained model ranks a mastered concept above an unmastered one") {
    SyntheticOptions o;
    o.students = 40;
    const auto recs = synthetic_mastery_corpus(o);
    const auto vocab = build_vocabulary(recs);
    DatasetSplit split;
    split.vocabulary = vocab;
    split.train = make_sequences(recs, vocab, 50);
    TrainConfig cfg;
    cfg.embedding_dim = 32;
    cfg.gru_hidden = 32;
    cfg.batch_size = 5;
    cfg.max_epochs = 40;
    cfg.seed = 2;
    const auto graphs = build_graph_set(vocab, split.train, apply_variant(cfg.variant));
    auto out = train<float>(split, graphs, cfg);
    const auto inputs = make_graph_inputs<float>(graphs, out.model.wiring());

    // Concept 0 answered correctly twice, concept 1 answered wrong twice.
    auto ex = [&](std::size_t e) { return static_cast<std::size_t>(vocab.exercise_index(synthetic_exercise_id(e))); };
    const std::vector<Step> history{{ex(0), 1}, {ex(4), 0}, {ex(3), 1}, {ex(1), 0}, {ex(5), 0}, {ex(2), 1}};
    std::size_t wins = 0, total = 0;
    for (std::size_t m : {0u, 3u, 6u, 9u})
        for (std::size_t u : {1u, 4u, 7u}) {
            ++total;
            wins += out.model.predict(inputs, history, ex(m)) > out.model.predict(inputs, history, ex(u));
        }
    CHECK(wins == total);
}
