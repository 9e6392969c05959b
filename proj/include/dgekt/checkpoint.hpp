#pragma once

// Binary container for model state and graphs.
//
// Layout (little-endian):
//   "DGEKT1" | u32 version | u64 entry count
//   per entry: u32 name length, name, u8 dtype, u32 rank, u64 dims[rank],
//              u64 payload bytes, payload
//   u64 FNV-1a hash of every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dgekt/adam.hpp"
#include "dgekt/config.hpp"
#include "dgekt/dual_graph.hpp"
#include "dgekt/interaction_store.hpp"
#include "dgekt/model.hpp"

namespace dgekt {

inline constexpr std::string_view kContainerMagic = "DGEKT1";
inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType : std::uint8_t { F32 = 1, F64 = 2, I64 = 3, Bytes = 4 };

struct ContainerEntry {
    DType dtype = DType::Bytes;
    std::vector<std::uint64_t> shape;
    std::string payload;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

template <class U>
void put_le(std::string& out, U v) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}

    template <class U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }

    std::string_view bytes(std::uint64_t n, const char* what) {
        need(n, what);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    [[nodiscard]] std::size_t position() const { return pos_; }

private:
    void need(std::uint64_t n, const char* what) const {
        if (n > data_.size() - pos_)
            throw ParseError(std::string("checkpoint: truncated while reading ") + what);
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

template <class T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, float>) return DType::F32;
    else if constexpr (std::is_same_v<T, double>) return DType::F64;
    else {
        static_assert(std::is_same_v<T, std::int64_t>);
        return DType::I64;
    }
}

}  // namespace detail

/// Ordered map of named entries.
class Container {
public:
    void put_bytes(const std::string& name, std::string bytes) {
        entries_[name] = {DType::Bytes, {static_cast<std::uint64_t>(bytes.size())}, std::move(bytes)};
    }

    template <class T>
    void put_array(const std::string& name, std::vector<std::uint64_t> shape, const std::vector<T>& values) {
        std::uint64_t count = 1;
        for (auto d : shape) count *= d;
        if (count != values.size())
            throw ShapeError("checkpoint: entry '" + name + "' has " + std::to_string(values.size()) +
                             " values for its shape");
        std::string payload;
        payload.reserve(values.size() * sizeof(T));
        for (T v : values) {
            if constexpr (std::is_same_v<T, float>) detail::put_le(payload, std::bit_cast<std::uint32_t>(v));
            else if constexpr (std::is_same_v<T, double>) detail::put_le(payload, std::bit_cast<std::uint64_t>(v));
            else detail::put_le(payload, static_cast<std::uint64_t>(v));
        }
        entries_[name] = {detail::dtype_of<T>(), std::move(shape), std::move(payload)};
    }

    template <class T>
    void put_matrix(const std::string& name, const ad::Matrix<T>& m) {
        put_array<T>(name, {m.rows(), m.cols()}, std::vector<T>(m.span().begin(), m.span().end()));
    }

    [[nodiscard]] bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    [[nodiscard]] const ContainerEntry& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ParseError("checkpoint: missing entry '" + name + "'");
        return it->second;
    }

    [[nodiscard]] std::string bytes(const std::string& name) const {
        const auto& e = at(name);
        if (e.dtype != DType::Bytes) throw ParseError("checkpoint: entry '" + name + "' is not a byte string");
        return e.payload;
    }

    template <class T>
    [[nodiscard]] std::vector<T> array(const std::string& name) const {
        const auto& e = at(name);
        if (e.dtype != detail::dtype_of<T>())
            throw ParseError("checkpoint: entry '" + name + "' has dtype " +
                             std::to_string(static_cast<int>(e.dtype)) + ", expected " +
                             std::to_string(static_cast<int>(detail::dtype_of<T>())));
        detail::Reader r(e.payload);
        std::vector<T> out(e.payload.size() / sizeof(T));
        for (auto& v : out) {
            if constexpr (std::is_same_v<T, float>) v = std::bit_cast<float>(r.get<std::uint32_t>(name.c_str()));
            else if constexpr (std::is_same_v<T, double>) v = std::bit_cast<double>(r.get<std::uint64_t>(name.c_str()));
            else v = static_cast<std::int64_t>(r.get<std::uint64_t>(name.c_str()));
        }
        return out;
    }

    template <class T>
    [[nodiscard]] ad::Matrix<T> matrix(const std::string& name) const {
        const auto& e = at(name);
        if (e.shape.size() != 2) throw ParseError("checkpoint: entry '" + name + "' is not a matrix");
        return ad::Matrix<T>(e.shape[0], e.shape[1], array<T>(name));
    }

    [[nodiscard]] const std::map<std::string, ContainerEntry>& entries() const { return entries_; }

    [[nodiscard]] std::string serialize() const {
        std::string out(kContainerMagic);
        detail::put_le(out, kContainerVersion);
        detail::put_le(out, static_cast<std::uint64_t>(entries_.size()));
        for (const auto& [name, e] : entries_) {
            detail::put_le(out, static_cast<std::uint32_t>(name.size()));
            out += name;
            out.push_back(static_cast<char>(e.dtype));
            detail::put_le(out, static_cast<std::uint32_t>(e.shape.size()));
            for (auto d : e.shape) detail::put_le(out, d);
            detail::put_le(out, static_cast<std::uint64_t>(e.payload.size()));
            out += e.payload;
        }
        detail::put_le(out, detail::fnv1a(out));
        return out;
    }

    static Container parse(std::string_view data) {
        if (data.size() < kContainerMagic.size() || data.substr(0, kContainerMagic.size()) != kContainerMagic)
            throw ParseError("checkpoint: bad magic (not a DGEKT1 container)");
        if (data.size() < kContainerMagic.size() + 4 + 8 + 8)
            throw ParseError("checkpoint: truncated header");
        detail::Reader head(data.substr(kContainerMagic.size()));
        const auto version = head.get<std::uint32_t>("version");
        if (version != kContainerVersion)
            throw ParseError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                             std::to_string(kContainerVersion) + ")");
        const auto body = data.substr(0, data.size() - 8);
        detail::Reader foot(data.substr(data.size() - 8));
        if (foot.get<std::uint64_t>("checksum") != detail::fnv1a(body))
            throw ParseError("checkpoint: checksum mismatch (file truncated or corrupt)");

        detail::Reader r(body.substr(kContainerMagic.size() + 4));
        Container c;
        const auto count = r.get<std::uint64_t>("entry count");
        for (std::uint64_t k = 0; k < count; ++k) {
            const auto name_len = r.get<std::uint32_t>("entry name");
            std::string name(r.bytes(name_len, "entry name"));
            ContainerEntry e;
            const auto tag = r.get<std::uint8_t>("dtype");
            if (tag < 1 || tag > 4) throw ParseError("checkpoint: entry '" + name + "' has unknown dtype");
            e.dtype = static_cast<DType>(tag);
            const auto rank = r.get<std::uint32_t>("rank");
            std::uint64_t count_values = 1;
            for (std::uint32_t i = 0; i < rank; ++i) {
                e.shape.push_back(r.get<std::uint64_t>("shape"));
                count_values *= e.shape.back();
            }
            const auto len = r.get<std::uint64_t>("payload size");
            e.payload = std::string(r.bytes(len, "payload"));
            const std::uint64_t width = e.dtype == DType::F32 ? 4 : (e.dtype == DType::Bytes ? 1 : 8);
            if (e.dtype != DType::Bytes && len != count_values * width)
                throw ParseError("checkpoint: entry '" + name + "' payload does not match its shape");
            c.entries_[std::move(name)] = std::move(e);
        }
        if (r.position() != body.size() - kContainerMagic.size() - 4)
            throw ParseError("checkpoint: trailing bytes after last entry");
        return c;
    }

    void write_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open '" + path + "' for writing");
        const auto data = serialize();
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) throw Error("failed writing '" + path + "'");
    }

    static Container read_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open '" + path + "'");
        std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return parse(data);
    }

private:
    std::map<std::string, ContainerEntry> entries_;
};

inline nlohmann::json vocabulary_to_json(const Vocabulary& v) {
    return {{"exercises", v.exercises}, {"concepts", v.concepts}, {"exercise_concepts", v.exercise_to_concepts}};
}

inline Vocabulary vocabulary_from_json(const nlohmann::json& j) {
    Vocabulary v;
    try {
        v.exercises = j.at("exercises").get<std::vector<std::string>>();
        v.concepts = j.at("concepts").get<std::vector<std::string>>();
        v.exercise_to_concepts = j.at("exercise_concepts").get<std::vector<std::vector<std::size_t>>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: bad vocabulary: ") + e.what());
    }
    if (v.exercise_to_concepts.size() != v.exercises.size())
        throw ParseError("checkpoint: vocabulary has mismatched exercise/concept tables");
    for (const auto& cs : v.exercise_to_concepts)
        for (auto c : cs)
            if (c >= v.concepts.size()) throw ParseError("checkpoint: vocabulary concept index out of range");
    return v;
}

/// Raw transition counts as an [nnz x 3] table of (from, to, count).
inline void put_transition_counts(Container& c, const TransitionGraph& g) {
    std::vector<std::int64_t> rows;
    for (const auto& t : g.counts.triplets()) {
        rows.push_back(static_cast<std::int64_t>(t.row));
        rows.push_back(static_cast<std::int64_t>(t.col));
        rows.push_back(t.value);
    }
    c.put_array<std::int64_t>("graph/dtg_counts", {rows.size() / 3, 3}, rows);
}

inline TransitionGraph get_transition_graph(const Container& c, std::size_t num_nodes) {
    const auto& e = c.at("graph/dtg_counts");
    if (e.shape.size() != 2 || e.shape[1] != 3) throw ParseError("checkpoint: graph/dtg_counts must be [k x 3]");
    const auto rows = c.array<std::int64_t>("graph/dtg_counts");
    std::vector<Triplet<std::int64_t>> t;
    for (std::size_t k = 0; k + 2 < rows.size(); k += 3) {
        if (rows[k] < 0 || rows[k + 1] < 0 || static_cast<std::size_t>(rows[k]) >= num_nodes ||
            static_cast<std::size_t>(rows[k + 1]) >= num_nodes || rows[k + 2] <= 0)
            throw ParseError("checkpoint: invalid transition count entry");
        t.push_back({static_cast<std::size_t>(rows[k]), static_cast<std::size_t>(rows[k + 1]), rows[k + 2]});
    }
    return transition_graph_from_counts(num_nodes, t);
}

/// Graph container written by the build-graphs command: vocabulary, CAHG
/// incidence, DTG counts and the normalized transition matrices.
inline Container graphs_container(const Vocabulary& vocab, const ConceptHypergraph& cahg,
                                  const TransitionGraph& dtg) {
    Container c;
    c.put_bytes("meta/vocabulary", vocabulary_to_json(vocab).dump());
    std::vector<std::int64_t> inc;
    for (auto [node, edge] : cahg.incidence) {
        inc.push_back(static_cast<std::int64_t>(node));
        inc.push_back(static_cast<std::int64_t>(edge));
    }
    c.put_array<std::int64_t>("graph/cahg_incidence", {inc.size() / 2, 2}, inc);
    put_transition_counts(c, dtg);
    auto put_sparse = [&](const std::string& name, const CsrMatrix<double>& m) {
        std::vector<std::int64_t> idx;
        std::vector<double> val;
        for (const auto& t : m.triplets()) {
            idx.push_back(static_cast<std::int64_t>(t.row));
            idx.push_back(static_cast<std::int64_t>(t.col));
            val.push_back(t.value);
        }
        c.put_array<std::int64_t>(name + "/index", {val.size(), 2}, idx);
        c.put_array<double>(name + "/value", {val.size()}, val);
    };
    put_sparse("graph/dtg_a_in", dtg.a_in);
    put_sparse("graph/dtg_a_out", dtg.a_out);
    return c;
}

template <class T>
struct LoadedCheckpoint {
    TrainConfig config;
    Vocabulary vocabulary;
    GraphSet graphs;
    Model<T> model;
    AdamState<T> adam;
    std::string rng_state;
};

template <class T>
Container checkpoint_container(const Model<T>& model, const AdamState<T>& adam, const std::string& rng_state,
                               const Vocabulary& vocab, const GraphSet& graphs) {
    Container c;
    c.put_bytes("meta/config", nlohmann::json(model.config()).dump());
    c.put_bytes("meta/vocabulary", vocabulary_to_json(vocab).dump());
    c.put_bytes("meta/rng", rng_state);
    if (graphs.dtg) put_transition_counts(c, *graphs.dtg);
    const auto params = model.named_parameters();
    for (const auto& [name, v] : params) c.put_matrix("param/" + name, v.value());
    c.put_array<std::int64_t>("adam/step", {1}, {adam.step_count});
    if (!adam.first_moment.empty()) {
        if (adam.first_moment.size() != params.size() || adam.second_moment.size() != params.size())
            throw Error("save_checkpoint: optimizer state does not match the parameter list");
        for (std::size_t k = 0; k < params.size(); ++k) {
            c.put_matrix("adam/m/" + params[k].first, adam.first_moment[k]);
            c.put_matrix("adam/v/" + params[k].first, adam.second_moment[k]);
        }
    }
    return c;
}

template <class T>
void save_checkpoint(const std::string& path, const Model<T>& model, const AdamState<T>& adam,
                     const std::string& rng_state, const Vocabulary& vocab, const GraphSet& graphs) {
    checkpoint_container(model, adam, rng_state, vocab, graphs).write_file(path);
}

/// Rebuilds the model from a container. With `expected` set, the stored
/// configuration must agree with it on every shape-determining field.
template <class T>
LoadedCheckpoint<T> load_checkpoint(const Container& c, const TrainConfig* expected = nullptr) {
    TrainConfig config;
    try {
        from_json(nlohmann::json::parse(c.bytes("meta/config")), config);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: bad config: ") + e.what());
    }
    if (expected) {
        auto check = [](const char* field, std::size_t stored, std::size_t wanted) {
            if (stored != wanted)
                throw ShapeError(std::string("checkpoint: ") + field + " mismatch: checkpoint has " +
                                 std::to_string(stored) + ", config expects " + std::to_string(wanted));
        };
        check("embedding_dim", config.embedding_dim, expected->embedding_dim);
        check("gru_hidden", config.gru_hidden, expected->gru_hidden);
        check("graph_layers", config.graph_layers, expected->graph_layers);
        if (config.variant != expected->variant)
            throw ShapeError("checkpoint: variant mismatch: checkpoint has " + to_string(config.variant) +
                             ", config expects " + to_string(expected->variant));
    }
    auto vocab = vocabulary_from_json(nlohmann::json::parse(c.bytes("meta/vocabulary")));
    const auto wiring = apply_variant(config.variant);

    GraphSet graphs;
    graphs.num_exercises = vocab.num_exercises();
    if (wiring.has_concept_branch()) graphs.cahg = build_cahg(vocab);
    if (wiring.has_transition_branch()) graphs.dtg = get_transition_graph(c, 2 * vocab.num_exercises());

    Rng scratch(0);
    Model<T> model(config, vocab.num_exercises(), scratch);
    const auto params = model.named_parameters();
    std::vector<ad::Matrix<T>> values;
    AdamState<T> adam;
    adam.options.learning_rate = config.learning_rate;
    adam.step_count = c.array<std::int64_t>("adam/step").at(0);
    const bool has_moments = c.contains("adam/m/" + params.front().first);
    for (const auto& [name, v] : params) {
        auto m = c.matrix<T>("param/" + name);
        if (!m.same_shape(v.value()))
            throw ShapeError("checkpoint: parameter '" + name + "' has shape " + m.shape_string() +
                             ", model expects " + v.shape_string());
        values.push_back(std::move(m));
        if (has_moments) {
            adam.first_moment.push_back(c.matrix<T>("adam/m/" + name));
            adam.second_moment.push_back(c.matrix<T>("adam/v/" + name));
            if (!adam.first_moment.back().same_shape(v.value()) || !adam.second_moment.back().same_shape(v.value()))
                throw ShapeError("checkpoint: optimizer moment for '" + name + "' has the wrong shape");
        }
    }
    for (const auto& [name, e] : c.entries())
        if (name.rfind("param/", 0) == 0) {
            bool known = false;
            for (const auto& p : params) known = known || name == "param/" + p.first;
            if (!known) throw ParseError("checkpoint: unexpected parameter '" + name + "'");
        }
    model.restore(values);
    return {config, std::move(vocab), std::move(graphs), std::move(model), std::move(adam), c.bytes("meta/rng")};
}

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path, const TrainConfig* expected = nullptr) {
    return load_checkpoint<T>(Container::read_file(path), expected);
}

}  // namespace dgekt
