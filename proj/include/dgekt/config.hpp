#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "dgekt/error.hpp"

namespace dgekt {

enum class Variant { DGEKT, CAG, TG, RmCAHG, RmDTG, RmOKD };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::DGEKT: return "DGEKT";
        case Variant::CAG: return "CAG";
        case Variant::TG: return "TG";
        case Variant::RmCAHG: return "RmCAHG";
        case Variant::RmDTG: return "RmDTG";
        case Variant::RmOKD: return "RmOKD";
    }
    return "?";
}

inline Variant parse_variant(std::string_view s) {
    for (auto v : {Variant::DGEKT, Variant::CAG, Variant::TG, Variant::RmCAHG, Variant::RmDTG,
                   Variant::RmOKD})
        if (to_string(v) == s) return v;
    throw Error("unknown variant '" + std::string(s) +
                "' (expected DGEKT, CAG, TG, RmCAHG, RmDTG or RmOKD)");
}

struct TrainConfig {
    std::size_t embedding_dim = 256;
    std::size_t graph_layers = 2;
    std::size_t gru_hidden = 128;
    double gamma = 0.5;
    double lambda = 0.01;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    std::size_t max_epochs = 600;
    std::size_t early_stop_patience = 20;
    std::uint64_t seed = 0;
    Variant variant = Variant::DGEKT;

    // Data preparation.
    std::size_t max_len = 50;
    double train_frac = 0.8;
    double val_frac_of_train = 0.1;

    // Experiment switches.
    bool shared_embedding = true;
    bool share_gru = false;
    bool stop_teacher_grad = false;
    bool distill_last_step_only = false;
    double leaky_slope = 0.01;

    /// Width of a branch knowledge state [h, x_plus, x_minus].
    [[nodiscard]] std::size_t state_dim() const { return gru_hidden + 2 * embedding_dim; }

    void validate() const {
        auto positive = [](const char* name, double v) {
            if (!(v > 0.0)) throw Error(std::string("config: ") + name + " must be positive");
        };
        positive("embedding_dim", static_cast<double>(embedding_dim));
        positive("graph_layers", static_cast<double>(graph_layers));
        positive("gru_hidden", static_cast<double>(gru_hidden));
        positive("gamma", gamma);
        positive("batch_size", static_cast<double>(batch_size));
        positive("learning_rate", learning_rate);
        positive("max_epochs", static_cast<double>(max_epochs));
        positive("early_stop_patience", static_cast<double>(early_stop_patience));
        if (lambda < 0.0) throw Error("config: lambda must be non-negative");
        if (max_len < 2) throw Error("config: max_len must be at least 2");
        if (!(train_frac > 0.0 && train_frac < 1.0)) throw Error("config: train_frac must lie in (0,1)");
        if (!(val_frac_of_train >= 0.0 && val_frac_of_train < 1.0))
            throw Error("config: val_frac_of_train must lie in [0,1)");
        if (leaky_slope < 0.0) throw Error("config: leaky_slope must be non-negative");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"embedding_dim", c.embedding_dim},
                       {"graph_layers", c.graph_layers},
                       {"gru_hidden", c.gru_hidden},
                       {"gamma", c.gamma},
                       {"lambda", c.lambda},
                       {"batch_size", c.batch_size},
                       {"learning_rate", c.learning_rate},
                       {"max_epochs", c.max_epochs},
                       {"early_stop_patience", c.early_stop_patience},
                       {"seed", c.seed},
                       {"variant", to_string(c.variant)},
                       {"max_len", c.max_len},
                       {"train_frac", c.train_frac},
                       {"val_frac_of_train", c.val_frac_of_train},
                       {"shared_embedding", c.shared_embedding},
                       {"share_gru", c.share_gru},
                       {"stop_teacher_grad", c.stop_teacher_grad},
                       {"distill_last_step_only", c.distill_last_step_only},
                       {"leaky_slope", c.leaky_slope}};
}

/// Reads the keys present in `j` over the current values of `c`. Unknown keys
/// are rejected.
inline void merge_json(const nlohmann::json& j, TrainConfig& c) {
    if (!j.is_object()) throw ParseError("config: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "embedding_dim") c.embedding_dim = value.get<std::size_t>();
            else if (key == "graph_layers") c.graph_layers = value.get<std::size_t>();
            else if (key == "gru_hidden") c.gru_hidden = value.get<std::size_t>();
            else if (key == "gamma") c.gamma = value.get<double>();
            else if (key == "lambda") c.lambda = value.get<double>();
            else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
            else if (key == "learning_rate") c.learning_rate = value.get<double>();
            else if (key == "max_epochs") c.max_epochs = value.get<std::size_t>();
            else if (key == "early_stop_patience") c.early_stop_patience = value.get<std::size_t>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "variant") c.variant = parse_variant(value.get<std::string>());
            else if (key == "max_len") c.max_len = value.get<std::size_t>();
            else if (key == "train_frac") c.train_frac = value.get<double>();
            else if (key == "val_frac_of_train") c.val_frac_of_train = value.get<double>();
            else if (key == "shared_embedding") c.shared_embedding = value.get<bool>();
            else if (key == "share_gru") c.share_gru = value.get<bool>();
            else if (key == "stop_teacher_grad") c.stop_teacher_grad = value.get<bool>();
            else if (key == "distill_last_step_only") c.distill_last_step_only = value.get<bool>();
            else if (key == "leaky_slope") c.leaky_slope = value.get<double>();
            else throw ParseError("config: unknown key '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("config: bad value for '" + key + "': " + e.what());
        }
    }
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    merge_json(j, c);
}

}  // namespace dgekt
