#pragma once

// Interaction logs: parsing, vocabularies, per-student sequences and splits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dgekt/error.hpp"

namespace dgekt {

struct InteractionRecord {
    std::string student_id;
    std::string exercise_id;
    std::vector<std::string> concept_ids;
    int correct = 0;
    std::int64_t order_key = 0;

    friend bool operator==(const InteractionRecord&, const InteractionRecord&) = default;
};

enum class LogFormat { Csv };

struct ParseStats {
    std::size_t rows = 0;
    std::size_t dropped_without_concepts = 0;
};

struct Vocabulary {
    std::vector<std::string> exercises;
    std::vector<std::string> concepts;
    std::vector<std::vector<std::size_t>> exercise_to_concepts;  // sorted, unique

    [[nodiscard]] std::size_t num_exercises() const noexcept { return exercises.size(); }
    [[nodiscard]] std::size_t num_concepts() const noexcept { return concepts.size(); }

    /// Dense index of an exercise id, or -1 when unknown.
    [[nodiscard]] std::int64_t exercise_index(std::string_view id) const {
        auto it = std::lower_bound(exercises.begin(), exercises.end(), id);
        if (it == exercises.end() || *it != id) return -1;
        return it - exercises.begin();
    }
};

struct Step {
    std::size_t exercise = 0;
    int correct = 0;

    friend bool operator==(const Step&, const Step&) = default;
};

struct StudentSequence {
    std::string student_id;
    std::vector<Step> steps;

    friend bool operator==(const StudentSequence&, const StudentSequence&) = default;
};

struct DatasetSplit {
    std::vector<StudentSequence> train;
    std::vector<StudentSequence> validation;
    std::vector<StudentSequence> test;
    Vocabulary vocabulary;
};

inline constexpr const char* kCsvHeader = "student_id,exercise_id,concept_ids,correct,order";
inline constexpr std::size_t kDefaultMaxLen = 50;

namespace detail {

/// Splits one CSV line into fields. Supports double-quoted fields with ""
/// escapes. Returns false on an unterminated quote.
inline bool split_csv_line(std::string_view line, std::vector<std::string>& fields) {
    fields.clear();
    std::string cur;
    bool quoted = false;
    bool field_started_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(ch);
            }
        } else if (ch == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
            field_started_quoted = false;
        } else if (ch == '"' && cur.empty() && !field_started_quoted) {
            quoted = true;
            field_started_quoted = true;
        } else {
            cur.push_back(ch);
        }
    }
    if (quoted) return false;
    fields.push_back(std::move(cur));
    return true;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline bool parse_int64(std::string_view s, std::int64_t& out) {
    if (s.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stoll(std::string(s), &pos);
    } catch (const std::exception&) {
        return false;
    }
    return pos == s.size();
}

}  // namespace detail

/// Parses a CSV interaction log with header
/// `student_id,exercise_id,concept_ids,correct,order`. Rows with an empty
/// concept list are dropped and counted in `stats`.
inline std::vector<InteractionRecord> parse_log(std::istream& in, LogFormat format = LogFormat::Csv,
                                                ParseStats* stats = nullptr) {
    if (format != LogFormat::Csv) throw ParseError("parse_log: unsupported format");
    ParseStats local;
    std::vector<InteractionRecord> records;
    std::string line;
    std::vector<std::string> fields;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!header_seen) {
            if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
                static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
                line.erase(0, 3);
            if (detail::trim(line) != kCsvHeader)
                throw ParseError("line " + std::to_string(line_no) + ": expected header '" +
                                 kCsvHeader + "'");
            header_seen = true;
            continue;
        }
        if (detail::trim(line).empty()) continue;
        ++local.rows;
        if (!detail::split_csv_line(line, fields))
            throw ParseError("line " + std::to_string(line_no) + ": unterminated quote");
        if (fields.size() != 5)
            throw ParseError("line " + std::to_string(line_no) + ": expected 5 fields, got " +
                             std::to_string(fields.size()));
        InteractionRecord rec;
        rec.student_id = detail::trim(fields[0]);
        rec.exercise_id = detail::trim(fields[1]);
        if (rec.student_id.empty() || rec.exercise_id.empty())
            throw ParseError("line " + std::to_string(line_no) + ": empty student or exercise id");
        const std::string correct = detail::trim(fields[3]);
        if (correct == "0") {
            rec.correct = 0;
        } else if (correct == "1") {
            rec.correct = 1;
        } else {
            throw ParseError("line " + std::to_string(line_no) + ": correct must be 0 or 1, got '" +
                             correct + "'");
        }
        if (!detail::parse_int64(detail::trim(fields[4]), rec.order_key))
            throw ParseError("line " + std::to_string(line_no) + ": order is not an integer: '" +
                             fields[4] + "'");
        std::set<std::string> concepts;
        std::string_view cs = fields[2];
        std::size_t start = 0;
        while (start <= cs.size()) {
            const auto end = cs.find(';', start);
            const auto piece = detail::trim(cs.substr(start, end == std::string_view::npos ? cs.npos : end - start));
            if (!piece.empty()) concepts.insert(piece);
            if (end == std::string_view::npos) break;
            start = end + 1;
        }
        if (concepts.empty()) {
            ++local.dropped_without_concepts;
            continue;
        }
        rec.concept_ids.assign(concepts.begin(), concepts.end());
        records.push_back(std::move(rec));
    }
    if (!header_seen) throw ParseError("line 1: missing header");
    if (stats) *stats = local;
    return records;
}

/// Lexicographic index assignment; each exercise maps to the union of the
/// concepts seen on its records.
inline Vocabulary build_vocabulary(const std::vector<InteractionRecord>& records) {
    if (records.empty()) throw Error("build_vocabulary: no records");
    std::map<std::string, std::set<std::string>> ex_concepts;
    std::set<std::string> concepts;
    for (const auto& r : records) {
        auto& s = ex_concepts[r.exercise_id];
        for (const auto& c : r.concept_ids) {
            s.insert(c);
            concepts.insert(c);
        }
    }
    Vocabulary v;
    v.concepts.assign(concepts.begin(), concepts.end());
    std::unordered_map<std::string, std::size_t> concept_index;
    for (std::size_t j = 0; j < v.concepts.size(); ++j) concept_index[v.concepts[j]] = j;
    for (const auto& [ex, cs] : ex_concepts) {
        if (cs.empty()) continue;
        v.exercises.push_back(ex);
        std::vector<std::size_t> idx;
        for (const auto& c : cs) idx.push_back(concept_index.at(c));
        std::sort(idx.begin(), idx.end());
        v.exercise_to_concepts.push_back(std::move(idx));
    }
    return v;
}

/// Orders each student's records by order_key (stable) and cuts them into
/// consecutive blocks of at most `max_len`. A trailing block of length 1 is
/// dropped. Records whose exercise is missing from `vocab` are skipped.
inline std::vector<StudentSequence> make_sequences(const std::vector<InteractionRecord>& records,
                                                   const Vocabulary& vocab,
                                                   std::size_t max_len = kDefaultMaxLen) {
    if (max_len < 2) throw Error("make_sequences: max_len must be >= 2, got " + std::to_string(max_len));
    std::map<std::string, std::vector<const InteractionRecord*>> by_student;
    for (const auto& r : records) by_student[r.student_id].push_back(&r);
    std::vector<StudentSequence> out;
    for (auto& [student, recs] : by_student) {
        std::stable_sort(recs.begin(), recs.end(), [](const auto* a, const auto* b) {
            return a->order_key < b->order_key;
        });
        std::vector<Step> steps;
        steps.reserve(recs.size());
        for (const auto* r : recs) {
            const auto idx = vocab.exercise_index(r->exercise_id);
            if (idx < 0) continue;
            steps.push_back({static_cast<std::size_t>(idx), r->correct});
        }
        for (std::size_t begin = 0; begin < steps.size(); begin += max_len) {
            const std::size_t end = std::min(begin + max_len, steps.size());
            if (end - begin < 2) continue;
            out.push_back({student, std::vector<Step>(steps.begin() + static_cast<std::ptrdiff_t>(begin),
                                                      steps.begin() + static_cast<std::ptrdiff_t>(end))});
        }
    }
    return out;
}

/// Partitions sequences by student id. Students are sorted, shuffled with
/// `seed`, and the first round(train_frac * S) form the training population,
/// of which round(val_frac_of_train * count) move to validation.
inline DatasetSplit split_students(const std::vector<StudentSequence>& sequences, const Vocabulary& vocab,
                                   double train_frac = 0.8, double val_frac_of_train = 0.1,
                                   std::uint64_t seed = 0) {
    if (!(train_frac > 0.0 && train_frac < 1.0))
        throw Error("split_students: train_frac must lie in (0,1), got " + std::to_string(train_frac));
    if (!(val_frac_of_train >= 0.0 && val_frac_of_train < 1.0))
        throw Error("split_students: val_frac_of_train must lie in [0,1), got " +
                    std::to_string(val_frac_of_train));
    std::set<std::string> ids;
    for (const auto& s : sequences) ids.insert(s.student_id);
    if (ids.size() < 3)
        throw Error("split_students: need at least 3 students, got " + std::to_string(ids.size()));
    std::vector<std::string> students(ids.begin(), ids.end());
    std::mt19937_64 rng(seed);
    std::shuffle(students.begin(), students.end(), rng);

    const auto S = static_cast<std::int64_t>(students.size());
    auto n_train = std::clamp<std::int64_t>(std::llround(train_frac * static_cast<double>(S)), 1, S - 1);
    auto n_val = std::llround(val_frac_of_train * static_cast<double>(n_train));
    n_val = std::clamp<std::int64_t>(n_val, 0, n_train - 1);

    std::unordered_map<std::string, int> bucket;  // 0 train, 1 validation, 2 test
    for (std::int64_t k = 0; k < S; ++k) {
        const auto& id = students[static_cast<std::size_t>(k)];
        bucket[id] = k < n_train - n_val ? 0 : (k < n_train ? 1 : 2);
    }
    DatasetSplit split;
    split.vocabulary = vocab;
    for (const auto& s : sequences) {
        switch (bucket.at(s.student_id)) {
            case 0: split.train.push_back(s); break;
            case 1: split.validation.push_back(s); break;
            default: split.test.push_back(s); break;
        }
    }
    return split;
}

/// Interaction node of (exercise, response): 2i for correct, 2i+1 for incorrect.
constexpr std::size_t node_index(std::size_t exercise_index, int correct) noexcept {
    return 2 * exercise_index + (correct == 1 ? 0 : 1);
}

constexpr std::pair<std::size_t, int> node_exercise(std::size_t node) noexcept {
    return {node / 2, node % 2 == 0 ? 1 : 0};
}

}  // namespace dgekt
