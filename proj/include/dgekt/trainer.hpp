#pragma once

// Minibatch training with Adam, validation-based early stopping and AUC
// evaluation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dgekt/adam.hpp"
#include "dgekt/config.hpp"
#include "dgekt/interaction_store.hpp"
#include "dgekt/model.hpp"

namespace dgekt {

struct ScoreLabel {
    double score = 0.0;
    int label = 0;
};

/// Area under the ROC curve in the Mann-Whitney form: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
inline double evaluate_auc(std::vector<ScoreLabel> scores) {
    std::size_t pos = 0;
    std::size_t neg = 0;
    for (const auto& s : scores) {
        if (s.label == 1) ++pos;
        else if (s.label == 0) ++neg;
        else throw Error("evaluate_auc: labels must be 0 or 1, got " + std::to_string(s.label));
    }
    if (pos == 0 || neg == 0)
        throw Error("evaluate_auc: need both classes, got " + std::to_string(pos) + " positive and " +
                    std::to_string(neg) + " negative labels");
    std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
    // Sum over positives of (#negatives below + 0.5 * #negatives tied).
    double correct = 0.0;
    std::size_t neg_below = 0;
    for (std::size_t i = 0; i < scores.size();) {
        std::size_t j = i;
        std::size_t tie_pos = 0;
        std::size_t tie_neg = 0;
        while (j < scores.size() && scores[j].score == scores[i].score) {
            (scores[j].label == 1 ? tie_pos : tie_neg)++;
            ++j;
        }
        correct += static_cast<double>(tie_pos) *
                   (static_cast<double>(neg_below) + 0.5 * static_cast<double>(tie_neg));
        neg_below += tie_neg;
        i = j;
    }
    return correct / (static_cast<double>(pos) * static_cast<double>(neg));
}

struct PredictionRecord {
    std::size_t sequence = 0;
    std::size_t step = 0;
    std::size_t exercise = 0;
    double y = 0.0;
    int r = 0;
};

inline std::vector<ScoreLabel> score_labels(const std::vector<PredictionRecord>& preds) {
    std::vector<ScoreLabel> out;
    out.reserve(preds.size());
    for (const auto& p : preds) out.push_back({p.y, p.r});
    return out;
}

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean batch objective
    // Per-prediction mean cross-entropy of each head (zero when absent).
    double ce_concept = 0.0;
    double ce_transition = 0.0;
    double ce_teacher = 0.0;
    double ce_fusion = 0.0;
    double kd = 0.0;  // per-row mean distillation distance
    double val_auc = std::numeric_limits<double>::quiet_NaN();
    double val_ce = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0.0;
};

struct EvalReport {
    double auc = std::numeric_limits<double>::quiet_NaN();
    std::vector<EpochStats> epochs;
    std::vector<PredictionRecord> predictions;
    std::size_t best_epoch = 0;
    double best_val_auc = std::numeric_limits<double>::quiet_NaN();
};

template <class T>
struct TrainOutcome {
    Model<T> model;
    AdamState<T> adam;
    std::string rng_state;
    EvalReport report;
};

/// Called after every epoch with the current model; return false to stop
/// training.
template <class T>
using EpochCallback = std::function<bool(const EpochStats&, const Model<T>&, const GraphInputs<T>&)>;

template <class T>
struct ScoreResult {
    std::vector<PredictionRecord> predictions;
    double ce_sum = 0.0;  // deployed-head cross-entropy summed over predictions
};

/// Scores every next-step prediction of `sequences` with the deployed head.
template <class T>
ScoreResult<T> score_sequences(const Model<T>& model, const GraphInputs<T>& graphs,
                               const std::vector<StudentSequence>& sequences, std::size_t batch_size = 128) {
    ad::NoGradGuard guard;
    ScoreResult<T> out;
    for (std::size_t start = 0; start < sequences.size(); start += batch_size) {
        const std::size_t end = std::min(sequences.size(), start + batch_size);
        std::vector<const StudentSequence*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&sequences[i]);
        auto res = model.forward(batch, graphs, false);
        for (const auto& s : res.scores) {
            out.predictions.push_back({start + s.row, s.step, s.exercise, s.y, s.r});
            const double y = std::clamp(s.y, kProbabilityClamp, 1.0 - kProbabilityClamp);
            out.ce_sum -= s.r == 1 ? std::log(y) : std::log(1.0 - y);
        }
    }
    return out;
}

namespace detail {

inline bool has_both_classes(const std::vector<PredictionRecord>& p) {
    bool pos = false;
    bool neg = false;
    for (const auto& x : p) (x.r == 1 ? pos : neg) = true;
    return pos && neg;
}

}  // namespace detail

template <class T>
TrainOutcome<T> train(const DatasetSplit& split, const GraphSet& graphs, const TrainConfig& config,
                      const EpochCallback<T>& on_epoch = {}) {
    config.validate();
    if (split.train.empty()) throw Error("train: no training sequences");
    Rng rng(config.seed);
    TrainOutcome<T> out{Model<T>(config, split.vocabulary.num_exercises(), rng), {}, {}, {}};
    auto& model = out.model;
    const auto inputs = make_graph_inputs<T>(graphs, model.wiring());
    auto params = model.parameters();
    out.adam.options.learning_rate = config.learning_rate;

    std::vector<std::size_t> order(split.train.size());
    std::iota(order.begin(), order.end(), 0);

    double best_auc = -1.0;
    std::size_t since_best = 0;
    std::vector<ad::Matrix<T>> best_params;
    AdamState<T> best_adam;
    std::string best_rng;

    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        EpochStats stats;
        stats.epoch = epoch;
        std::size_t preds = 0;
        std::size_t kd_rows = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<const StudentSequence*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&split.train[order[i]]);
            zero_grads(params);
            auto res = model.forward(batch, inputs);
            const double loss = static_cast<double>(res.loss.item());
            if (!std::isfinite(loss))
                throw Error("training diverged: non-finite loss " + std::to_string(loss) + " at epoch " +
                            std::to_string(epoch) + ", batch " + std::to_string(batches));
            ad::backward(res.loss);
            adam_step(params, out.adam);
            stats.train_loss += loss;
            stats.ce_concept += res.ce_concept;
            stats.ce_transition += res.ce_transition;
            stats.ce_teacher += res.ce_teacher;
            stats.ce_fusion += res.ce_fusion;
            stats.kd += res.kd;
            preds += res.predictions;
            kd_rows += res.kd_rows;
            ++batches;
        }
        stats.train_loss /= static_cast<double>(std::max<std::size_t>(batches, 1));
        const double p = static_cast<double>(std::max<std::size_t>(preds, 1));
        stats.ce_concept /= p;
        stats.ce_transition /= p;
        stats.ce_teacher /= p;
        stats.ce_fusion /= p;
        stats.kd = kd_rows > 0 ? stats.kd / static_cast<double>(kd_rows) : 0.0;

        bool stop = false;
        if (!split.validation.empty()) {
            auto val = score_sequences(model, inputs, split.validation, config.batch_size);
            if (!val.predictions.empty())
                stats.val_ce = val.ce_sum / static_cast<double>(val.predictions.size());
            if (detail::has_both_classes(val.predictions)) {
                stats.val_auc = evaluate_auc(score_labels(val.predictions));
                if (stats.val_auc > best_auc) {
                    best_auc = stats.val_auc;
                    out.report.best_epoch = epoch;
                    best_params = model.snapshot();
                    best_adam = out.adam;
                    std::ostringstream os;
                    os << rng;
                    best_rng = os.str();
                    since_best = 0;
                } else if (++since_best >= config.early_stop_patience) {
                    stop = true;
                }
            }
        }
        stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.report.epochs.push_back(stats);
        if (on_epoch && !on_epoch(stats, model, inputs)) stop = true;
        if (stop) break;
    }

    if (!best_params.empty()) {
        model.restore(best_params);
        out.adam = std::move(best_adam);
        out.rng_state = std::move(best_rng);
        out.report.best_val_auc = best_auc;
    } else {
        std::ostringstream os;
        os << rng;
        out.rng_state = os.str();
        out.report.best_epoch = out.report.epochs.empty() ? 0 : out.report.epochs.back().epoch;
    }

    if (!split.test.empty()) {
        auto test = score_sequences(model, inputs, split.test, config.batch_size);
        out.report.predictions = std::move(test.predictions);
        if (detail::has_both_classes(out.report.predictions))
            out.report.auc = evaluate_auc(score_labels(out.report.predictions));
    }
    return out;
}

}  // namespace dgekt
