#pragma once

// Dataset ingestion, masking mechanisms, whitening and attribute doubling.
// Missing cells are tracked by an explicit bit-mask, never by sentinel floats.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "plmcmc/matrix.hpp"
#include "plmcmc/rng.hpp"

namespace plmcmc {

struct Table {
    std::vector<std::string> columns;
    int rows = 0, cols = 0;
    std::vector<double> values;  // row-major
    std::optional<std::pair<int, int>> grid;  // (h, w) for image-like data

    double& at(int r, int c) { return values[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }
};

/// Table plus missing-cell mask (1 = missing) and, when the mask was applied
/// to complete data, the original values for scoring.
struct MaskedTable {
    Table table;
    std::vector<std::uint8_t> missing;
    std::optional<std::vector<double>> truth;

    bool is_missing(int r, int c) const {
        return missing[static_cast<size_t>(r) * table.cols + c] != 0;
    }
    long n_missing() const {
        long n = 0;
        for (auto b : missing) n += b ? 1 : 0;
        return n;
    }
};

struct WhiteningStats {
    std::vector<double> mean;
    std::vector<double> std;
};

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
    return out;
}

inline bool is_missing_token(const std::string& s) {
    return s.empty() || s == "NaN" || s == "nan" || s == "NA";
}
}  // namespace detail

/// First row is the header; an empty cell or a NaN token marks a missing
/// entry. Parse failures report file line and 1-based column.
inline MaskedTable load_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("load_csv: empty file " + path);
    MaskedTable mt;
    mt.table.columns = detail::split_csv_line(line);
    mt.table.cols = static_cast<int>(mt.table.columns.size());

    long file_line = 1;
    while (std::getline(f, line)) {
        ++file_line;
        if (line.empty() && f.eof()) break;
        auto cells = detail::split_csv_line(line);
        if (static_cast<int>(cells.size()) != mt.table.cols)
            throw std::runtime_error("load_csv: ragged row at line " + std::to_string(file_line) +
                                     " (" + std::to_string(cells.size()) + " cells, expected " +
                                     std::to_string(mt.table.cols) + ")");
        for (int c = 0; c < mt.table.cols; ++c) {
            if (detail::is_missing_token(cells[c])) {
                mt.table.values.push_back(0.0);
                mt.missing.push_back(1);
                continue;
            }
            double v = 0.0;
            const char* b = cells[c].data();
            const char* e = b + cells[c].size();
            auto [ptr, ec] = std::from_chars(b, e, v);
            if (ec != std::errc() || ptr != e)
                throw std::runtime_error("load_csv: non-numeric cell '" + cells[c] + "' at line " +
                                         std::to_string(file_line) + ", column " +
                                         std::to_string(c + 1));
            mt.table.values.push_back(v);
            mt.missing.push_back(0);
        }
        mt.table.rows += 1;
    }
    return mt;
}

namespace detail {
inline void write_cell(std::ofstream& f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    f << buf;
}
}  // namespace detail

/// Writes the current values; missing cells become empty fields.
inline void save_csv(const std::string& path, const MaskedTable& mt, bool holes_for_missing = true) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_csv: cannot open " + path);
    for (int c = 0; c < mt.table.cols; ++c) f << (c ? "," : "") << mt.table.columns[c];
    f << "\n";
    for (int r = 0; r < mt.table.rows; ++r) {
        for (int c = 0; c < mt.table.cols; ++c) {
            if (c) f << ",";
            if (holes_for_missing && mt.is_missing(r, c)) continue;
            detail::write_cell(f, mt.table.at(r, c));
        }
        f << "\n";
    }
}

/// Parallel {0,1} mask export; 1 marks a missing cell.
inline void save_mask_csv(const std::string& path, const MaskedTable& mt) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_mask_csv: cannot open " + path);
    for (int c = 0; c < mt.table.cols; ++c) f << (c ? "," : "") << mt.table.columns[c];
    f << "\n";
    for (int r = 0; r < mt.table.rows; ++r) {
        for (int c = 0; c < mt.table.cols; ++c) f << (c ? "," : "") << (mt.is_missing(r, c) ? 1 : 0);
        f << "\n";
    }
}

// ---------------------------------------------------------------------------
// Missingness mechanisms
// ---------------------------------------------------------------------------

enum class MaskMechanism { Independent, Patch, SquareObservation };

struct MaskSpec {
    MaskMechanism mechanism = MaskMechanism::Independent;
    double rate = 0.5;
    std::uint64_t seed = 0;

    void validate(const Table& t) const {
        if (!(rate >= 0.0 && rate < 1.0))
            throw std::invalid_argument("mask: rate must be in [0, 1)");
        if (mechanism != MaskMechanism::Independent && !t.grid)
            throw std::invalid_argument("mask: grid mechanisms need a grid-shaped table");
        if (t.grid && t.grid->first * t.grid->second != t.cols)
            throw std::invalid_argument("mask: grid shape inconsistent with column count");
    }
};

/// Masks are a pure function of (table shape, spec, seed); the original
/// values are retained as ground truth.
inline MaskedTable apply_mask(const Table& t, const MaskSpec& spec) {
    spec.validate(t);
    MaskedTable mt;
    mt.table = t;
    mt.missing.assign(t.values.size(), 0);
    mt.truth = t.values;
    Rng rng(stream_seed(spec.seed, 0x6d61736bULL));

    if (spec.mechanism == MaskMechanism::Independent) {
        for (auto& b : mt.missing) b = rng.uniform01() < spec.rate ? 1 : 0;
        return mt;
    }

    const int h = t.grid->first, w = t.grid->second;
    for (int r = 0; r < t.rows; ++r) {
        auto* row_mask = mt.missing.data() + static_cast<size_t>(r) * t.cols;
        if (spec.mechanism == MaskMechanism::Patch) {
            // One uniformly located rectangle of area ~ rate*h*w per row.
            const double area = spec.rate * h * w;
            if (area < 0.5) continue;
            const double side = std::sqrt(area);
            const int lo = std::max(1, static_cast<int>(std::lround(0.5 * side)));
            const int hi = std::min(w, std::max(lo, static_cast<int>(std::lround(2.0 * side))));
            const int pw = lo + rng.uniform_int(hi - lo + 1);
            const int ph = std::min(h, std::max(1, static_cast<int>(std::lround(area / pw))));
            const int top = rng.uniform_int(h - ph + 1);
            const int left = rng.uniform_int(w - pw + 1);
            for (int i = top; i < top + ph; ++i)
                for (int j = left; j < left + pw; ++j) row_mask[i * w + j] = 1;
        } else {
            // Only a uniformly located square of area ~ (1-rate)*h*w observed.
            const int side = std::min(std::min(h, w),
                                      std::max(1, static_cast<int>(std::lround(
                                                      std::sqrt((1.0 - spec.rate) * h * w)))));
            const int top = rng.uniform_int(h - side + 1);
            const int left = rng.uniform_int(w - side + 1);
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j)
                    row_mask[i * w + j] =
                        (i >= top && i < top + side && j >= left && j < left + side) ? 0 : 1;
        }
    }
    return mt;
}

// ---------------------------------------------------------------------------
// Whitening
// ---------------------------------------------------------------------------

/// Per-attribute mean/std over observed entries only; the stats never read
/// missing payloads. Constant observed columns are rejected.
inline WhiteningStats observed_stats(const MaskedTable& mt) {
    WhiteningStats st;
    st.mean.assign(mt.table.cols, 0.0);
    st.std.assign(mt.table.cols, 0.0);
    for (int c = 0; c < mt.table.cols; ++c) {
        double sum = 0.0;
        long n = 0;
        for (int r = 0; r < mt.table.rows; ++r) {
            if (mt.is_missing(r, c)) continue;
            sum += mt.table.at(r, c);
            ++n;
        }
        if (n == 0)
            throw std::invalid_argument("whiten: column " + std::to_string(c) +
                                        " has no observed entries");
        const double mu = sum / n;
        double sq = 0.0;
        for (int r = 0; r < mt.table.rows; ++r) {
            if (mt.is_missing(r, c)) continue;
            sq += (mt.table.at(r, c) - mu) * (mt.table.at(r, c) - mu);
        }
        const double sd = std::sqrt(sq / n);
        if (!(sd > 1e-12 * (1.0 + std::abs(mu))))
            throw std::invalid_argument("whiten: column " + std::to_string(c) +
                                        " is constant over observed entries");
        st.mean[c] = mu;
        st.std[c] = sd;
    }
    return st;
}

/// In-place whitening of the table values (truth stays in the original
/// representation). Returns the observed-entry stats used.
inline WhiteningStats whiten(MaskedTable& mt) {
    const WhiteningStats st = observed_stats(mt);
    for (int r = 0; r < mt.table.rows; ++r)
        for (int c = 0; c < mt.table.cols; ++c)
            mt.table.at(r, c) = (mt.table.at(r, c) - st.mean[c]) / st.std[c];
    return st;
}

inline void unwhiten(MaskedTable& mt, const WhiteningStats& st) {
    for (int r = 0; r < mt.table.rows; ++r)
        for (int c = 0; c < mt.table.cols; ++c)
            mt.table.at(r, c) = mt.table.at(r, c) * st.std[c] + st.mean[c];
}

inline void unwhiten_values(std::span<double> values, int cols, const WhiteningStats& st) {
    for (size_t i = 0; i < values.size(); ++i) {
        const int c = static_cast<int>(i % cols);
        values[i] = values[i] * st.std[c] + st.mean[c];
    }
}

/// Observed per-attribute [min, max], used by the training-time clamp.
struct ColumnRange {
    std::vector<double> lo, hi;
};

inline ColumnRange observed_range(const MaskedTable& mt) {
    ColumnRange r;
    r.lo.assign(mt.table.cols, std::numeric_limits<double>::infinity());
    r.hi.assign(mt.table.cols, -std::numeric_limits<double>::infinity());
    for (int row = 0; row < mt.table.rows; ++row)
        for (int c = 0; c < mt.table.cols; ++c) {
            if (mt.is_missing(row, c)) continue;
            r.lo[c] = std::min(r.lo[c], mt.table.at(row, c));
            r.hi[c] = std::max(r.hi[c], mt.table.at(row, c));
        }
    return r;
}

// ---------------------------------------------------------------------------
// Attribute doubling
// ---------------------------------------------------------------------------

/// Duplicates columns, masks and truth so odd-width tables become even without
/// adding information. Runs after masking; the copies share missingness.
inline MaskedTable double_attributes(const MaskedTable& mt) {
    MaskedTable out;
    out.table.rows = mt.table.rows;
    out.table.cols = 2 * mt.table.cols;
    out.table.columns = mt.table.columns;
    for (const auto& name : mt.table.columns) out.table.columns.push_back(name + "_dup");
    out.table.values.resize(static_cast<size_t>(out.table.rows) * out.table.cols);
    out.missing.resize(out.table.values.size());
    if (mt.truth) out.truth = std::vector<double>(out.table.values.size());
    for (int r = 0; r < mt.table.rows; ++r)
        for (int c = 0; c < mt.table.cols; ++c) {
            const size_t src = static_cast<size_t>(r) * mt.table.cols + c;
            for (int copy = 0; copy < 2; ++copy) {
                const size_t dst = static_cast<size_t>(r) * out.table.cols + copy * mt.table.cols + c;
                out.table.values[dst] = mt.table.values[src];
                out.missing[dst] = mt.missing[src];
                if (mt.truth) (*out.truth)[dst] = (*mt.truth)[src];
            }
        }
    return out;
}

}  // namespace plmcmc
