#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace dpt {

/// T x N panel of per-period simple returns.
///
/// Rows are time periods (strictly increasing ISO-date labels), columns are
/// assets. Values are dimensionless per-period simple returns. Instances are
/// immutable by convention once validated and safe to share across threads.
struct ReturnsMatrix {
    Eigen::MatrixXd values;              ///< T x N
    std::vector<std::string> tickers;    ///< N distinct identifiers
    std::vector<std::string> timestamps; ///< T strictly increasing labels

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }

    /// Checks all type invariants: finite entries, distinct tickers,
    /// strictly increasing timestamps, consistent dimensions, T >= 1, N >= 1.
    /// Throws DataError/SchemaError/ShapeError on violation.
    ///
    /// Loaders and the synthetic generator additionally require T >= 2 at the
    /// point of data entry; derived panels (e.g. returns computed from a
    /// two-row price panel) may have a single row.
    void validate() const;

    /// Column index of a ticker, or SchemaError if absent.
    Eigen::Index ticker_index(const std::string& ticker) const;

    /// Sub-panel restricted to the given tickers, in the given order.
    ReturnsMatrix select_tickers(const std::vector<std::string>& subset) const;
};

/// Half-open timestamp intervals [begin, end) for the calibration and
/// validation windows. Labels compare lexicographically, which orders ISO
/// dates correctly. An empty end string means "unbounded above".
struct SplitSpec {
    std::string calibration_begin;
    std::string calibration_end;
    std::string validation_begin;
    std::string validation_end; ///< empty = unbounded

    /// Throws SplitError unless the ranges are disjoint and calibration
    /// precedes validation.
    void validate() const;
};

enum class CsvLayout { Wide, Long };

/// Loads a returns CSV.
///
/// Wide layout: header `date,TICKER1,...,TICKERN`, one row per period.
/// Long layout: header `date,ticker,value`; every (date, ticker) cell must be
/// present exactly once and missing cells are an error. Rows are sorted by
/// timestamp; in long layout columns are ordered by ticker.
///
/// Errors: ParseError (malformed row, with line number), SchemaError
/// (duplicate ticker, bad header), DataError (non-finite value, duplicate or
/// missing cell), IoError (unreadable file).
ReturnsMatrix load_returns_csv(const std::string& path, CsvLayout layout);

/// Writes the wide CSV format with floats at 10 significant digits.
/// The file is written atomically (temp file + rename).
void write_returns_csv(const ReturnsMatrix& data, const std::string& path);

/// Converts a panel of price levels to simple returns r_t = P_t/P_{t-1} - 1.
/// Requires all prices > 0 and T >= 2; output has T-1 rows.
ReturnsMatrix prices_to_returns(const ReturnsMatrix& prices);

/// Sub-panel holding the given rows, in the given order (bounds-checked).
ReturnsMatrix select_rows(const ReturnsMatrix& data,
                          const std::vector<Eigen::Index>& idx);

/// Row indices selected by each window of the split, in time order.
/// Each range must select at least 2 rows (SplitError otherwise). Useful for
/// slicing a series that is aligned with the panel rows (e.g. a target).
std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> split_rows(
    const ReturnsMatrix& data, const SplitSpec& spec);

/// Splits a panel into row-disjoint calibration and validation sub-panels.
/// Each range must select at least 2 rows (SplitError otherwise).
std::pair<ReturnsMatrix, ReturnsMatrix> split(const ReturnsMatrix& data,
                                              const SplitSpec& spec);

/// Additive shock injected into one (period, asset) cell.
struct DrawdownSpec {
    Eigen::Index asset = 0;
    Eigen::Index period = 0;
    double magnitude = 0.0;
};

/// Generates a synthetic market r = Lambda f + eps from a seeded source.
///
/// Lambda is N x n_latent with standard normal entries, factors are i.i.d.
/// normal with per-period volatility factor_vol, and eps is i.i.d. normal
/// noise with volatility noise_vol. The optional drawdown is added to the
/// specified cell after generation, so two calls with the same seed differ
/// only in that cell. Timestamps are weekly ISO dates starting 2012-01-06;
/// tickers are A000, A001, ... Deterministic in all arguments.
ReturnsMatrix synth_market(int n_assets, int n_periods, int n_latent,
                           const std::optional<DrawdownSpec>& drawdown,
                           std::uint64_t seed, double factor_vol = 0.02,
                           double noise_vol = 0.005);

/// A (date, value) series loaded from a two-column CSV `date,value`.
struct SeriesCsv {
    std::vector<std::string> timestamps;
    std::vector<double> values;
};

/// Loads a `date,value` CSV (used for externally supplied target series).
SeriesCsv load_series_csv(const std::string& path);

/// Writes text to a file atomically (temp file + rename). Throws IoError.
void atomic_write_text(const std::string& path, const std::string& text);

/// Formats a double with 10 significant digits (the CSV writer convention).
std::string format_value(double v);

} // namespace dpt
