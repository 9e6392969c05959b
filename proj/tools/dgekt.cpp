// dgekt command-line tool: build-graphs, train, eval, predict.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dgekt/dgekt.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dgekt;

namespace {

using Scalar = float;

std::vector<InteractionRecord> read_log(const std::string& path, ParseStats* stats = nullptr) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    return parse_log(in, LogFormat::Csv, stats);
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("'" + path + "': " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << text;
}

std::string dashed(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
}

/// Registers one --flag per TrainConfig field. Values are parsed as JSON
/// scalars where possible so that numbers and booleans keep their types.
struct ConfigFlags {
    std::map<std::string, std::string> values;

    void attach(CLI::App& app, const std::string& skip = {}) {
        const json defaults = TrainConfig{};
        for (const auto& [key, value] : defaults.items()) {
            if (key == skip) continue;
            std::string help = "override config field " + key + " (default " + value.dump() + ")";
            app.add_option("--" + dashed(key), values[key], help);
        }
    }

    [[nodiscard]] json patch() const {
        json p = json::object();
        for (const auto& [key, text] : values) {
            if (text.empty()) continue;
            try {
                p[key] = json::parse(text);
            } catch (const json::exception&) {
                p[key] = text;
            }
        }
        return p;
    }
};

std::string summary_table(const std::vector<std::pair<std::string, std::string>>& rows) {
    std::size_t w = 0;
    for (const auto& r : rows) w = std::max(w, r.first.size());
    std::ostringstream os;
    for (const auto& [k, v] : rows) os << k << std::string(w - k.size() + 2, ' ') << v << "\n";
    return os.str();
}

std::string num(double v, int precision = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

json histogram(const std::vector<std::size_t>& values) {
    std::map<std::size_t, std::size_t> h;
    for (auto v : values) h[v]++;
    json out = json::object();
    for (auto [k, c] : h) out[std::to_string(k)] = c;
    return out;
}

json graph_summary(const Vocabulary& vocab, const ConceptHypergraph& cahg, const TransitionGraph& dtg,
                   std::size_t train_sequences) {
    std::vector<std::size_t> out_deg(dtg.num_nodes, 0), in_deg(dtg.num_nodes, 0);
    std::size_t edges = 0;
    for (const auto& t : dtg.counts.triplets()) {
        ++edges;
        out_deg[t.row]++;
        in_deg[t.col]++;
    }
    return {{"exercises", vocab.num_exercises()},
            {"concepts", vocab.num_concepts()},
            {"cahg",
             {{"nodes", cahg.num_nodes},
              {"hyperedges", cahg.num_hyperedges},
              {"incidence_pairs", cahg.incidence.size()},
              {"node_degree_histogram", histogram(cahg.node_degree)},
              {"hyperedge_degree_histogram", histogram(cahg.hyperedge_degree)}}},
            {"dtg",
             {{"nodes", dtg.num_nodes},
              {"edges", edges},
              {"training_sequences", train_sequences},
              {"out_degree_histogram", histogram(out_deg)},
              {"in_degree_histogram", histogram(in_deg)}}}};
}

TrainConfig resolve_config(const std::string& config_path, const ConfigFlags& flags,
                           std::optional<std::uint64_t> seed) {
    TrainConfig cfg;
    if (!config_path.empty()) merge_json(read_json_file(config_path), cfg);
    merge_json(flags.patch(), cfg);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
}

int cmd_build_graphs(const std::string& data, const std::string& out_dir, const std::string& config_path,
                     const ConfigFlags& flags) {
    const auto cfg = resolve_config(config_path, flags, std::nullopt);
    ParseStats stats;
    const auto records = read_log(data, &stats);
    const auto vocab = build_vocabulary(records);
    const auto seqs = make_sequences(records, vocab, cfg.max_len);
    const auto split = split_students(seqs, vocab, cfg.train_frac, cfg.val_frac_of_train, cfg.seed);
    const auto cahg = build_cahg(vocab);
    const auto dtg = build_dtg(split.train, vocab.num_exercises());
    fs::create_directories(out_dir);
    graphs_container(vocab, cahg, dtg).write_file((fs::path(out_dir) / "graphs.bin").string());
    auto summary = graph_summary(vocab, cahg, dtg, split.train.size());
    summary["rows"] = stats.rows;
    summary["rows_dropped_without_concepts"] = stats.dropped_without_concepts;
    summary["split_seed"] = cfg.seed;
    write_text(fs::path(out_dir) / "graphs.json", summary.dump(2) + "\n");
    std::cout << summary_table({{"exercises", std::to_string(vocab.num_exercises())},
                                {"concepts", std::to_string(vocab.num_concepts())},
                                {"CAHG incidence pairs", std::to_string(cahg.incidence.size())},
                                {"DTG edges", std::to_string(dtg.counts.nnz())},
                                {"training sequences", std::to_string(split.train.size())},
                                {"output", (fs::path(out_dir) / "graphs.bin").string()}});
    return 0;
}

void write_predictions(const fs::path& path, const std::vector<PredictionRecord>& preds,
                       const std::vector<StudentSequence>& seqs, const Vocabulary& vocab) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << "sequence,student_id,step,exercise_id,y,r\n";
    char buf[32];
    for (const auto& p : preds) {
        std::snprintf(buf, sizeof buf, "%.6f", p.y);
        out << p.sequence << ',' << seqs[p.sequence].student_id << ',' << p.step << ','
            << vocab.exercises[p.exercise] << ',' << buf << ',' << p.r << '\n';
    }
}

int cmd_train(const std::string& data, const std::string& out_dir, const std::string& config_path,
              const ConfigFlags& flags, std::uint64_t seed, bool quiet) {
    const auto cfg = resolve_config(config_path, flags, seed);
    const auto records = read_log(data);
    const auto vocab = build_vocabulary(records);
    const auto seqs = make_sequences(records, vocab, cfg.max_len);
    const auto split = split_students(seqs, vocab, cfg.train_frac, cfg.val_frac_of_train, cfg.seed);
    const auto graphs = build_graph_set(vocab, split.train, apply_variant(cfg.variant));
    fs::create_directories(out_dir);

    auto out = train<Scalar>(split, graphs, cfg,
                             [&](const EpochStats& s, const Model<Scalar>&, const GraphInputs<Scalar>&) {
                                 if (!quiet)
                                     std::cerr << "epoch " << s.epoch << " loss " << num(s.train_loss)
                                               << " val_auc " << num(s.val_auc) << " (" << num(s.seconds, 2)
                                               << " s)\n";
                                 return true;
                             });
    const auto ckpt = fs::path(out_dir) / "model.ckpt";
    save_checkpoint(ckpt.string(), out.model, out.adam, out.rng_state, vocab, graphs);
    write_predictions(fs::path(out_dir) / "predictions.csv", out.report.predictions, split.test, vocab);

    json epochs = json::array();
    for (const auto& e : out.report.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"ce_concept", e.ce_concept},
                          {"ce_transition", e.ce_transition},
                          {"ce_teacher", e.ce_teacher},
                          {"ce_fusion", e.ce_fusion},
                          {"kd", e.kd},
                          {"val_auc", std::isfinite(e.val_auc) ? json(e.val_auc) : json(nullptr)},
                          {"val_ce", std::isfinite(e.val_ce) ? json(e.val_ce) : json(nullptr)},
                          {"seconds", e.seconds}});
    auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json report{{"config", cfg},
                {"split", {{"train", split.train.size()}, {"validation", split.validation.size()}, {"test", split.test.size()}}},
                {"test_auc", finite_or_null(out.report.auc)},
                {"best_epoch", out.report.best_epoch},
                {"best_val_auc", finite_or_null(out.report.best_val_auc)},
                {"test_predictions", out.report.predictions.size()},
                {"epochs", epochs}};
    write_text(fs::path(out_dir) / "report.json", report.dump(2) + "\n");
    const auto table = summary_table({{"variant", to_string(cfg.variant)},
                                      {"seed", std::to_string(cfg.seed)},
                                      {"epochs run", std::to_string(out.report.epochs.size())},
                                      {"best epoch", std::to_string(out.report.best_epoch)},
                                      {"best val AUC", num(out.report.best_val_auc)},
                                      {"test AUC", num(out.report.auc)},
                                      {"test predictions", std::to_string(out.report.predictions.size())},
                                      {"checkpoint", ckpt.string()}});
    write_text(fs::path(out_dir) / "summary.txt", table);
    std::cout << table;
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& out_path) {
    auto loaded = load_checkpoint<Scalar>(checkpoint);
    const auto records = read_log(data);
    const auto seqs = make_sequences(records, loaded.vocabulary, loaded.config.max_len);
    const auto inputs = make_graph_inputs<Scalar>(loaded.graphs, loaded.model.wiring());
    const auto scored = score_sequences(loaded.model, inputs, seqs, loaded.config.batch_size);
    std::size_t pos = 0;
    for (const auto& p : scored.predictions) pos += static_cast<std::size_t>(p.r);
    const std::size_t neg = scored.predictions.size() - pos;
    double auc = std::numeric_limits<double>::quiet_NaN();
    if (pos > 0 && neg > 0) auc = evaluate_auc(score_labels(scored.predictions));
    if (!out_path.empty()) write_predictions(out_path, scored.predictions, seqs, loaded.vocabulary);
    const double ce = scored.predictions.empty() ? 0.0 : scored.ce_sum / static_cast<double>(scored.predictions.size());
    json report{{"variant", to_string(loaded.config.variant)},
                {"sequences", seqs.size()},
                {"predictions", scored.predictions.size()},
                {"positives", pos},
                {"negatives", neg},
                {"auc", std::isfinite(auc) ? json(auc) : json(nullptr)},
                {"mean_ce", ce}};
    std::cout << summary_table({{"variant", to_string(loaded.config.variant)},
                                {"sequences", std::to_string(seqs.size())},
                                {"predictions", std::to_string(scored.predictions.size())},
                                {"AUC", std::isfinite(auc) ? num(auc) : "n/a (single class)"},
                                {"mean CE", num(ce)}})
              << report.dump() << "\n";
    return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& history_path, const std::string& exercise) {
    auto loaded = load_checkpoint<Scalar>(checkpoint);
    const auto ex = loaded.vocabulary.exercise_index(exercise);
    if (ex < 0) throw Error("unknown exercise id '" + exercise + "'");
    auto records = read_log(history_path);
    std::stable_sort(records.begin(), records.end(),
                     [](const auto& a, const auto& b) { return a.order_key < b.order_key; });
    std::vector<Step> history;
    for (const auto& r : records) {
        const auto idx = loaded.vocabulary.exercise_index(r.exercise_id);
        if (idx < 0) throw Error("history references unknown exercise id '" + r.exercise_id + "'");
        history.push_back({static_cast<std::size_t>(idx), r.correct});
    }
    const auto inputs = make_graph_inputs<Scalar>(loaded.graphs, loaded.model.wiring());
    const double y = loaded.model.predict(inputs, history, static_cast<std::size_t>(ex));
    std::cout << json{{"exercise", exercise}, {"history_length", history.size()}, {"probability", y}}.dump()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-graph ensemble knowledge tracing"};
    app.require_subcommand(1);

    std::string data, out_dir, config_path, checkpoint, history, exercise, pred_out;
    std::uint64_t seed = 0;
    bool quiet = false;

    auto* build = app.add_subcommand("build-graphs", "build CAHG and DTG from an interaction log");
    build->add_option("--data", data, "interaction CSV")->required();
    build->add_option("--out", out_dir, "output directory")->required();
    build->add_option("--config", config_path, "JSON config (split and max_len fields are used)");
    ConfigFlags build_flags;
    build_flags.attach(*build);

    auto* tr = app.add_subcommand("train", "train a model and write checkpoint and reports");
    tr->add_option("--data", data, "interaction CSV")->required();
    tr->add_option("--out", out_dir, "output directory")->required();
    tr->add_option("--config", config_path, "JSON config mirroring TrainConfig");
    tr->add_option("--seed", seed, "random seed")->required();
    tr->add_flag("--quiet", quiet, "no per-epoch progress");
    ConfigFlags train_flags;
    train_flags.attach(*tr, "seed");

    auto* ev = app.add_subcommand("eval", "score every sequence of a log with a checkpoint");
    ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    ev->add_option("--data", data, "interaction CSV")->required();
    ev->add_option("--predictions", pred_out, "optional CSV of per-step predictions");

    auto* pr = app.add_subcommand("predict", "probability of a correct answer after a history");
    pr->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    pr->add_option("--history", history, "CSV with the student's past interactions")->required();
    pr->add_option("--exercise", exercise, "exercise id to query")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*build) return cmd_build_graphs(data, out_dir, config_path, build_flags);
        if (*tr) return cmd_train(data, out_dir, config_path, train_flags, seed, quiet);
        if (*ev) return cmd_eval(checkpoint, data, pred_out);
        if (*pr) return cmd_predict(checkpoint, history, exercise);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
