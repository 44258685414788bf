#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "kupbi/core.hpp"

namespace kupbi {

/**
 * @brief A multivariate series as loaded from disk: [total_length x C].
 *
 * The first CSV column (timestamps) is dropped on load by default; remaining
 * columns become channels in file order.
 */
struct RawSeries {
    Matrix values;
    std::vector<std::string> column_names;

    int length() const { return values.rows; }
    int channels() const { return values.cols; }
};

namespace detail {

inline bool parse_double(const std::string& tok, double& out) {
    const char* b = tok.c_str();
    char* end = nullptr;
    out = std::strtod(b, &end);
    if (end == b) return false;
    while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
    return *end == '\0';
}

inline std::vector<std::string> split_line(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

/**
 * @brief Load a CSV with a header row into a RawSeries.
 *
 * Strict by design: a missing file, a ragged row, or a non-numeric/empty cell
 * is an error that names the offending row and column.  @p drop_first_column
 * discards the leading timestamp column (the usual layout).
 */
inline RawSeries load_csv(const std::string& path, bool drop_first_column = true) {
    std::ifstream in(path);
    if (!in.is_open()) throw std::runtime_error("load_csv: cannot open file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header = detail::split_line(line, ',');
    const int first_col = drop_first_column ? 1 : 0;
    if (static_cast<int>(header.size()) <= first_col)
        throw std::runtime_error("load_csv: no data columns in header of " + path);

    RawSeries series;
    for (size_t i = first_col; i < header.size(); ++i) series.column_names.push_back(header[i]);
    const int C = static_cast<int>(series.column_names.size());

    std::vector<double> buf;
    int row = 1;  // 1-based, header is row 1
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> toks = detail::split_line(line, ',');
        if (static_cast<int>(toks.size()) != static_cast<int>(header.size()))
            throw std::runtime_error("load_csv: row " + std::to_string(row) + " has " + std::to_string(toks.size()) +
                                     " fields, expected " + std::to_string(header.size()) + " (" + path + ")");
        for (int c = 0; c < C; ++c) {
            double v;
            if (!detail::parse_double(toks[first_col + c], v))
                throw std::runtime_error("load_csv: parse error at row " + std::to_string(row) + ", column " +
                                         std::to_string(first_col + c + 1) + " ('" + toks[first_col + c] + "') in " +
                                         path);
            buf.push_back(v);
        }
    }
    if (buf.empty()) throw std::runtime_error("load_csv: no data rows in " + path);

    series.values.rows = static_cast<int>(buf.size()) / C;
    series.values.cols = C;
    series.values.data = std::move(buf);
    return series;
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/**
 * @brief Per-channel mean/std fitted on one row range (the training rows).
 *
 * Population standard deviation.  A constant channel gets std forced to 1 so
 * standardization maps it to zero instead of dividing by zero; the condition
 * is recorded and a warning is printed once at fit time.
 */
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::vector<bool> constant;
};

inline ChannelStats compute_stats(const Matrix& values, int row_begin, int row_end) {
    if (row_begin < 0 || row_end > values.rows || row_begin >= row_end)
        throw std::invalid_argument("compute_stats: bad row range");
    const int C = values.cols;
    const int n = row_end - row_begin;
    ChannelStats st;
    st.mean.assign(C, 0.0);
    st.stddev.assign(C, 0.0);
    st.constant.assign(C, false);
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int t = row_begin; t < row_end; ++t) s += values(t, c);
        st.mean[c] = s / n;
        double ss = 0.0;
        for (int t = row_begin; t < row_end; ++t) {
            const double d = values(t, c) - st.mean[c];
            ss += d * d;
        }
        st.stddev[c] = std::sqrt(ss / n);
        if (st.stddev[c] == 0.0) {
            st.constant[c] = true;
            st.stddev[c] = 1.0;
            std::cerr << "warning: channel " << c << " is constant over the fitted rows; std forced to 1\n";
        }
    }
    return st;
}

/// Apply (x - mean) / std channel-wise to the whole series.
inline RawSeries standardize(const RawSeries& series, const ChannelStats& stats) {
    if (static_cast<int>(stats.mean.size()) != series.channels())
        throw std::invalid_argument("standardize: stats fitted for different channel count");
    RawSeries out = series;
    for (int c = 0; c < out.channels(); ++c) {
        const double mu = stats.mean[c];
        const double sd = stats.stddev[c];
        for (int t = 0; t < out.length(); ++t) out.values(t, c) = (series.values(t, c) - mu) / sd;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/**
 * @brief Split protocol.
 *
 * kRatio cuts train/val/test by floor(ratio * N) row boundaries with full
 * coverage of the series.  kEttHour / kEttMinute reproduce the fixed
 * 12/4/4-month borders (months of 30 days) that the standard long-horizon
 * benchmarks use for the ETT files; reference metrics for those datasets were
 * produced under these borders, which discard rows beyond month 20.
 * In every mode val and test are extended back by L rows so each partition
 * can form a query window for its first forecastable position.
 */
enum class SplitMode { kRatio, kEttHour, kEttMinute };

struct SplitSpec {
    double train_ratio = 0.7;
    double val_ratio = 0.1;
    double test_ratio = 0.2;
    SplitMode mode = SplitMode::kRatio;
};

inline SplitSpec ratio_split(double tr, double va, double te) { return SplitSpec{tr, va, te, SplitMode::kRatio}; }

struct SplitResult {
    Matrix train, val, test;
    // Global row index of each partition's first row (val/test include the
    // L-row overlap, so val_offset == train_rows - L in ratio mode).
    long train_offset = 0;
    long val_offset = 0;
    long test_offset = 0;
};

namespace detail {

inline Matrix slice_rows(const Matrix& m, long begin, long end) {
    Matrix out(static_cast<int>(end - begin), m.cols);
    std::copy(m.row(static_cast<int>(begin)), m.row(static_cast<int>(begin)) + out.size(), out.data.begin());
    return out;
}

}  // namespace detail

/**
 * @brief Partition a series for train/val/test.
 *
 * @param L  history window length; val/test carry L preceding rows so their
 *           first L-window ends where the partition begins.
 * @param T  forecast horizon, used only to validate partition lengths.
 */
inline SplitResult split(const RawSeries& series, const SplitSpec& spec, int L, int T = 0) {
    if (L <= 0) throw std::invalid_argument("split: L must be positive");
    const long n = series.length();
    long train_end, val_end, test_end;

    if (spec.mode == SplitMode::kRatio) {
        const double sum = spec.train_ratio + spec.val_ratio + spec.test_ratio;
        if (std::fabs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("split: ratios must sum to 1 (got " + std::to_string(sum) + ")");
        if (spec.train_ratio <= 0 || spec.val_ratio < 0 || spec.test_ratio < 0)
            throw std::invalid_argument("split: ratios must be non-negative with positive train share");
        train_end = static_cast<long>(std::floor(spec.train_ratio * n));
        val_end = static_cast<long>(std::floor((spec.train_ratio + spec.val_ratio) * n));
        test_end = n;
    } else {
        const long unit = (spec.mode == SplitMode::kEttHour) ? 24 * 30 : 24 * 30 * 4;
        train_end = 12 * unit;
        val_end = 16 * unit;
        test_end = 20 * unit;
        if (n < test_end)
            throw std::invalid_argument("split: series has " + std::to_string(n) + " rows, ETT borders need " +
                                        std::to_string(test_end));
    }

    if (train_end <= L || val_end <= train_end || test_end <= val_end)
        throw std::invalid_argument("split: degenerate partition boundaries");

    SplitResult r;
    r.train = detail::slice_rows(series.values, 0, train_end);
    r.val = detail::slice_rows(series.values, train_end - L, val_end);
    r.test = detail::slice_rows(series.values, val_end - L, test_end);
    r.train_offset = 0;
    r.val_offset = train_end - L;
    r.test_offset = val_end - L;

    const int need = L + T;
    if (r.train.rows < need || r.val.rows < need || r.test.rows < need)
        throw std::invalid_argument("split: partition shorter than L+T=" + std::to_string(need));
    return r;
}

// ---------------------------------------------------------------------------
// Chains and query windows
// ---------------------------------------------------------------------------

/// Rows a full chain occupies: L history + T target + L continuation.
inline long chain_span(int L, int T) { return 2l * L + T; }

/**
 * @brief One library chain: history H [LxC], target Y [TxC], and the
 * post-target continuation F [LxC], cut from consecutive rows.
 */
struct Chain {
    Matrix H, Y, F;
    long start_index = 0;  // global row index of H's first row
};

/**
 * @brief Cut every chain the partition supports at the given stride.
 *
 * A chain needs 2L+T consecutive rows; count = floor((len-(2L+T))/stride)+1.
 * start_index is global (partition offset + local position).
 */
inline std::vector<Chain> extract_chains(const Matrix& partition, long global_offset, int L, int T, int stride = 1) {
    if (L <= 0 || T <= 0) throw std::invalid_argument("extract_chains: L and T must be positive");
    if (stride <= 0) throw std::invalid_argument("extract_chains: stride must be positive");
    const long span = chain_span(L, T);
    std::vector<Chain> chains;
    if (partition.rows < span) return chains;
    const long last = partition.rows - span;
    chains.reserve(static_cast<size_t>(last / stride) + 1);
    for (long s = 0; s <= last; s += stride) {
        Chain ch;
        ch.H = detail::slice_rows(partition, s, s + L);
        ch.Y = detail::slice_rows(partition, s + L, s + L + T);
        ch.F = detail::slice_rows(partition, s + L + T, s + chain_span(L, T));
        ch.start_index = global_offset + s;
        chains.push_back(std::move(ch));
    }
    return chains;
}

/**
 * @brief One forecasting example: input X [LxC], ground truth Y_true [TxC],
 * and, when the partition extends far enough, the true continuation
 * F_true [LxC] used by retrieval-quality diagnostics.
 */
struct QueryWindow {
    Matrix X, Y_true;
    std::optional<Matrix> F_true;
    long start_index = 0;  // global row index of X's first row
};

inline std::vector<QueryWindow> make_query_windows(const Matrix& partition, long global_offset, int L, int T) {
    if (L <= 0 || T <= 0) throw std::invalid_argument("make_query_windows: L and T must be positive");
    std::vector<QueryWindow> out;
    if (partition.rows < L + T) return out;
    const long last = partition.rows - (L + T);
    out.reserve(static_cast<size_t>(last) + 1);
    for (long s = 0; s <= last; ++s) {
        QueryWindow w;
        w.X = detail::slice_rows(partition, s, s + L);
        w.Y_true = detail::slice_rows(partition, s + L, s + L + T);
        if (s + chain_span(L, T) <= partition.rows) w.F_true = detail::slice_rows(partition, s + L + T, s + chain_span(L, T));
        w.start_index = global_offset + s;
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace kupbi
