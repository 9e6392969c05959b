#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "dgekt/error.hpp"

namespace dgekt {

/// Coordinate-format entry.
template <class T>
struct Triplet {
    std::size_t row = 0;
    std::size_t col = 0;
    T value{};

    friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Compressed sparse row matrix. Column indices are sorted within each row
/// and duplicates are summed at construction.
template <class T>
class CsrMatrix {
public:
    CsrMatrix() = default;

    CsrMatrix(std::size_t rows, std::size_t cols, std::vector<Triplet<T>> entries)
        : rows_(rows), cols_(cols), row_ptr_(rows + 1, 0) {
        for (const auto& e : entries) {
            if (e.row >= rows || e.col >= cols) {
                throw ShapeError("CsrMatrix: entry (" + std::to_string(e.row) + "," +
                                 std::to_string(e.col) + ") outside " + std::to_string(rows) +
                                 "x" + std::to_string(cols));
            }
        }
        std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            return std::tie(a.row, a.col) < std::tie(b.row, b.col);
        });
        for (std::size_t k = 0; k < entries.size(); ++k) {
            if (!col_idx_.empty() && k > 0 && entries[k].row == entries[k - 1].row &&
                entries[k].col == entries[k - 1].col) {
                values_.back() += entries[k].value;
                continue;
            }
            col_idx_.push_back(entries[k].col);
            values_.push_back(entries[k].value);
            ++row_ptr_[entries[k].row + 1];
        }
        for (std::size_t r = 0; r < rows; ++r) row_ptr_[r + 1] += row_ptr_[r];
    }

    static CsrMatrix identity(std::size_t n) {
        std::vector<Triplet<T>> e;
        e.reserve(n);
        for (std::size_t i = 0; i < n; ++i) e.push_back({i, i, T(1)});
        return CsrMatrix(n, n, std::move(e));
    }

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t nnz() const noexcept { return values_.size(); }

    [[nodiscard]] std::span<const std::size_t> row_ptr() const noexcept { return row_ptr_; }
    [[nodiscard]] std::span<const std::size_t> col_idx() const noexcept { return col_idx_; }
    [[nodiscard]] std::span<const T> values() const noexcept { return values_; }

    /// Value at (r, c); zero when the entry is not stored.
    [[nodiscard]] T at(std::size_t r, std::size_t c) const {
        const auto begin = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r]);
        const auto end = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r + 1]);
        auto it = std::lower_bound(begin, end, c);
        if (it == end || *it != c) return T(0);
        return values_[static_cast<std::size_t>(it - col_idx_.begin())];
    }

    [[nodiscard]] T row_sum(std::size_t r) const {
        T s{};
        for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s += values_[k];
        return s;
    }

    [[nodiscard]] std::vector<Triplet<T>> triplets() const {
        std::vector<Triplet<T>> out;
        out.reserve(nnz());
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
                out.push_back({r, col_idx_[k], values_[k]});
        return out;
    }

    template <class U>
    [[nodiscard]] CsrMatrix<U> cast() const {
        std::vector<Triplet<U>> e;
        e.reserve(nnz());
        for (const auto& t : triplets()) e.push_back({t.row, t.col, static_cast<U>(t.value)});
        return CsrMatrix<U>(rows_, cols_, std::move(e));
    }

    [[nodiscard]] CsrMatrix transpose() const {
        std::vector<Triplet<T>> e;
        e.reserve(nnz());
        for (const auto& t : triplets()) e.push_back({t.col, t.row, t.value});
        return CsrMatrix(cols_, rows_, std::move(e));
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::size_t> row_ptr_{0};
    std::vector<std::size_t> col_idx_;
    std::vector<T> values_;
};

}  // namespace dgekt
