#include "dpt/data_ingest.hpp"

#include "dpt/errors.hpp"
#include "dpt/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace dpt {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(trim(cur));
    return fields;
}

double parse_double(const std::string& field, std::size_t line_no) {
    if (field.empty()) {
        throw ParseError("line " + std::to_string(line_no) + ": empty numeric field");
    }
    const char* begin = field.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end != begin + field.size()) {
        throw ParseError("line " + std::to_string(line_no) + ": cannot parse value '" +
                         field + "'");
    }
    if (!std::isfinite(v)) {
        throw DataError("line " + std::to_string(line_no) + ": non-finite value '" +
                        field + "'");
    }
    return v;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

// Proleptic Gregorian day count (days since 1970-01-01).
std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const int yoe = y - era * 400;
    const int doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const int doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return static_cast<std::int64_t>(era) * 146097 + doe - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const int doe = static_cast<int>(z - era * 146097);
    const int yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int yr = yoe + static_cast<int>(era) * 400;
    const int doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const int mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y = yr + (m <= 2);
}

std::string iso_date(std::int64_t day_number) {
    int y = 0, m = 0, d = 0;
    civil_from_days(day_number, y, m, d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
    return buf;
}

void require_min_rows(const ReturnsMatrix& m, const std::string& path) {
    if (m.rows() < 2) {
        throw DataError("'" + path + "': need at least 2 rows, got " +
                        std::to_string(m.rows()));
    }
}

} // namespace

void ReturnsMatrix::validate() const {
    if (values.rows() < 1 || values.cols() < 1) {
        throw ShapeError("returns matrix must be at least 1x1, got " +
                         std::to_string(values.rows()) + "x" +
                         std::to_string(values.cols()));
    }
    if (static_cast<Eigen::Index>(tickers.size()) != values.cols()) {
        throw ShapeError("ticker count " + std::to_string(tickers.size()) +
                         " != column count " + std::to_string(values.cols()));
    }
    if (static_cast<Eigen::Index>(timestamps.size()) != values.rows()) {
        throw ShapeError("timestamp count " + std::to_string(timestamps.size()) +
                         " != row count " + std::to_string(values.rows()));
    }
    if (!values.allFinite()) throw DataError("returns matrix has non-finite entries");
    std::set<std::string> seen;
    for (const auto& t : tickers) {
        if (!seen.insert(t).second) throw SchemaError("duplicate ticker '" + t + "'");
    }
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
        if (!(timestamps[i - 1] < timestamps[i])) {
            throw DataError("timestamps not strictly increasing at row " +
                            std::to_string(i) + " ('" + timestamps[i - 1] +
                            "' then '" + timestamps[i] + "')");
        }
    }
}

Eigen::Index ReturnsMatrix::ticker_index(const std::string& ticker) const {
    const auto it = std::find(tickers.begin(), tickers.end(), ticker);
    if (it == tickers.end()) throw SchemaError("unknown ticker '" + ticker + "'");
    return static_cast<Eigen::Index>(it - tickers.begin());
}

ReturnsMatrix ReturnsMatrix::select_tickers(const std::vector<std::string>& subset) const {
    ReturnsMatrix out;
    out.timestamps = timestamps;
    out.tickers = subset;
    out.values.resize(values.rows(), static_cast<Eigen::Index>(subset.size()));
    for (std::size_t j = 0; j < subset.size(); ++j) {
        out.values.col(static_cast<Eigen::Index>(j)) = values.col(ticker_index(subset[j]));
    }
    out.validate();
    return out;
}

void SplitSpec::validate() const {
    if (calibration_begin.empty() || validation_begin.empty() || calibration_end.empty()) {
        throw SplitError("split ranges must have explicit begins and a calibration end");
    }
    if (!(calibration_begin < calibration_end)) {
        throw SplitError("calibration range is empty: [" + calibration_begin + ", " +
                         calibration_end + ")");
    }
    if (!validation_end.empty() && !(validation_begin < validation_end)) {
        throw SplitError("validation range is empty: [" + validation_begin + ", " +
                         validation_end + ")");
    }
    if (calibration_end > validation_begin) {
        throw SplitError("calibration and validation ranges overlap or are out of order");
    }
}

ReturnsMatrix load_returns_csv(const std::string& path, CsvLayout layout) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw ParseError("'" + path + "': empty file");

    ReturnsMatrix out;
    if (layout == CsvLayout::Wide) {
        const auto header = split_fields(lines[0]);
        if (header.size() < 2 || header[0] != "date") {
            throw SchemaError("'" + path + "': wide header must be 'date,TICKER,...'");
        }
        out.tickers.assign(header.begin() + 1, header.end());
        {
            std::set<std::string> seen;
            for (const auto& t : out.tickers) {
                if (t.empty()) throw SchemaError("'" + path + "': empty ticker in header");
                if (!seen.insert(t).second) {
                    throw SchemaError("'" + path + "': duplicate ticker '" + t + "'");
                }
            }
        }
        const std::size_t n_cols = out.tickers.size();
        std::vector<std::pair<std::string, std::vector<double>>> rows;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (trim(lines[i]).empty()) continue;
            const auto fields = split_fields(lines[i]);
            if (fields.size() != n_cols + 1) {
                throw ParseError("line " + std::to_string(i + 1) + ": expected " +
                                 std::to_string(n_cols + 1) + " fields, got " +
                                 std::to_string(fields.size()));
            }
            if (fields[0].empty()) {
                throw ParseError("line " + std::to_string(i + 1) + ": empty timestamp");
            }
            std::vector<double> vals(n_cols);
            for (std::size_t j = 0; j < n_cols; ++j) {
                vals[j] = parse_double(fields[j + 1], i + 1);
            }
            rows.emplace_back(fields[0], std::move(vals));
        }
        std::stable_sort(rows.begin(), rows.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        out.values.resize(static_cast<Eigen::Index>(rows.size()),
                          static_cast<Eigen::Index>(n_cols));
        out.timestamps.reserve(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.timestamps.push_back(rows[i].first);
            for (std::size_t j = 0; j < n_cols; ++j) {
                out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    rows[i].second[j];
            }
        }
    } else {
        const auto header = split_fields(lines[0]);
        if (header.size() != 3 || header[0] != "date" || header[1] != "ticker" ||
            header[2] != "value") {
            throw SchemaError("'" + path + "': long header must be 'date,ticker,value'");
        }
        std::map<std::pair<std::string, std::string>, double> cells;
        std::set<std::string> dates;
        std::set<std::string> tickers;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (trim(lines[i]).empty()) continue;
            const auto fields = split_fields(lines[i]);
            if (fields.size() != 3) {
                throw ParseError("line " + std::to_string(i + 1) +
                                 ": expected 3 fields, got " +
                                 std::to_string(fields.size()));
            }
            if (fields[0].empty() || fields[1].empty()) {
                throw ParseError("line " + std::to_string(i + 1) +
                                 ": empty date or ticker");
            }
            const double v = parse_double(fields[2], i + 1);
            const auto key = std::make_pair(fields[0], fields[1]);
            if (!cells.emplace(key, v).second) {
                throw DataError("duplicate cell (" + fields[0] + ", " + fields[1] + ")");
            }
            dates.insert(fields[0]);
            tickers.insert(fields[1]);
        }
        out.timestamps.assign(dates.begin(), dates.end());
        out.tickers.assign(tickers.begin(), tickers.end());
        out.values.resize(static_cast<Eigen::Index>(out.timestamps.size()),
                          static_cast<Eigen::Index>(out.tickers.size()));
        for (std::size_t t = 0; t < out.timestamps.size(); ++t) {
            for (std::size_t j = 0; j < out.tickers.size(); ++j) {
                const auto it =
                    cells.find(std::make_pair(out.timestamps[t], out.tickers[j]));
                if (it == cells.end()) {
                    throw DataError("missing cell (" + out.timestamps[t] + ", " +
                                    out.tickers[j] + ")");
                }
                out.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) =
                    it->second;
            }
        }
    }
    require_min_rows(out, path);
    out.validate();
    return out;
}

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

void atomic_write_text(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp + "' for writing");
        out << text;
        if (!out) throw IoError("write failed for '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

void write_returns_csv(const ReturnsMatrix& data, const std::string& path) {
    data.validate();
    std::string text = "date";
    for (const auto& t : data.tickers) text += "," + t;
    text += "\n";
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        text += data.timestamps[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < data.cols(); ++j) {
            text += ",";
            text += format_value(data.values(i, j));
        }
        text += "\n";
    }
    atomic_write_text(path, text);
}

ReturnsMatrix prices_to_returns(const ReturnsMatrix& prices) {
    prices.validate();
    if (prices.rows() < 2) {
        throw DomainError("price panel needs at least 2 rows, got " +
                          std::to_string(prices.rows()));
    }
    if ((prices.values.array() <= 0.0).any()) {
        throw DomainError("price panel has nonpositive entries");
    }
    ReturnsMatrix out;
    out.tickers = prices.tickers;
    out.timestamps.assign(prices.timestamps.begin() + 1, prices.timestamps.end());
    out.values = prices.values.bottomRows(prices.rows() - 1).array() /
                     prices.values.topRows(prices.rows() - 1).array() -
                 1.0;
    out.validate();
    return out;
}

namespace {

std::vector<Eigen::Index> rows_in_range(const ReturnsMatrix& data,
                                        const std::string& begin,
                                        const std::string& end) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        const auto& ts = data.timestamps[static_cast<std::size_t>(i)];
        if (ts >= begin && (end.empty() || ts < end)) idx.push_back(i);
    }
    return idx;
}

} // namespace

ReturnsMatrix select_rows(const ReturnsMatrix& data,
                          const std::vector<Eigen::Index>& idx) {
    ReturnsMatrix out;
    out.tickers = data.tickers;
    out.values.resize(static_cast<Eigen::Index>(idx.size()), data.cols());
    out.timestamps.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= data.rows()) {
            throw ShapeError("row index " + std::to_string(idx[i]) +
                             " out of range for " + std::to_string(data.rows()) +
                             " rows");
        }
        out.values.row(static_cast<Eigen::Index>(i)) = data.values.row(idx[i]);
        out.timestamps.push_back(data.timestamps[static_cast<std::size_t>(idx[i])]);
    }
    return out;
}

std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> split_rows(
    const ReturnsMatrix& data, const SplitSpec& spec) {
    data.validate();
    spec.validate();
    auto calib_idx = rows_in_range(data, spec.calibration_begin, spec.calibration_end);
    auto valid_idx = rows_in_range(data, spec.validation_begin, spec.validation_end);
    if (calib_idx.size() < 2) {
        throw SplitError("calibration range selects " +
                         std::to_string(calib_idx.size()) + " rows; need at least 2");
    }
    if (valid_idx.size() < 2) {
        throw SplitError("validation range selects " +
                         std::to_string(valid_idx.size()) + " rows; need at least 2");
    }
    return {std::move(calib_idx), std::move(valid_idx)};
}

std::pair<ReturnsMatrix, ReturnsMatrix> split(const ReturnsMatrix& data,
                                              const SplitSpec& spec) {
    const auto [calib_idx, valid_idx] = split_rows(data, spec);
    auto calib = select_rows(data, calib_idx);
    auto valid = select_rows(data, valid_idx);
    calib.validate();
    valid.validate();
    return {std::move(calib), std::move(valid)};
}

ReturnsMatrix synth_market(int n_assets, int n_periods, int n_latent,
                           const std::optional<DrawdownSpec>& drawdown,
                           std::uint64_t seed, double factor_vol, double noise_vol) {
    if (n_assets < 1) throw DomainError("n_assets must be >= 1");
    if (n_periods < 2) throw DomainError("n_periods must be >= 2");
    if (n_latent < 0 || n_latent > n_assets) {
        throw DomainError("n_latent must be in [0, n_assets]");
    }
    if (factor_vol < 0.0 || noise_vol < 0.0) {
        throw DomainError("volatilities must be >= 0");
    }
    if (drawdown) {
        if (drawdown->asset < 0 || drawdown->asset >= n_assets ||
            drawdown->period < 0 || drawdown->period >= n_periods) {
            throw DomainError("drawdown index (" + std::to_string(drawdown->asset) +
                              ", " + std::to_string(drawdown->period) +
                              ") out of range");
        }
    }

    Rng rng(seed);
    Eigen::MatrixXd loadings(n_assets, n_latent);
    for (Eigen::Index i = 0; i < loadings.rows(); ++i) {
        for (Eigen::Index k = 0; k < loadings.cols(); ++k) {
            loadings(i, k) = rng.normal();
        }
    }
    Eigen::MatrixXd factors(n_periods, n_latent);
    for (Eigen::Index t = 0; t < factors.rows(); ++t) {
        for (Eigen::Index k = 0; k < factors.cols(); ++k) {
            factors(t, k) = rng.normal(0.0, factor_vol);
        }
    }
    ReturnsMatrix out;
    out.values = factors * loadings.transpose();
    for (Eigen::Index t = 0; t < n_periods; ++t) {
        for (Eigen::Index i = 0; i < n_assets; ++i) {
            out.values(t, i) += rng.normal(0.0, noise_vol);
        }
    }
    if (drawdown) {
        out.values(drawdown->period, drawdown->asset) += drawdown->magnitude;
    }

    std::size_t width = 3;
    for (int v = n_assets - 1; v >= 1000; v /= 10) ++width;
    out.tickers.reserve(static_cast<std::size_t>(n_assets));
    for (int i = 0; i < n_assets; ++i) {
        std::string digits = std::to_string(i);
        if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
        out.tickers.emplace_back("A" + digits);
    }
    const std::int64_t start = days_from_civil(2012, 1, 6);
    out.timestamps.reserve(static_cast<std::size_t>(n_periods));
    for (int t = 0; t < n_periods; ++t) {
        out.timestamps.push_back(iso_date(start + 7 * static_cast<std::int64_t>(t)));
    }
    out.validate();
    return out;
}

SeriesCsv load_series_csv(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw ParseError("'" + path + "': empty file");
    const auto header = split_fields(lines[0]);
    if (header.size() != 2 || header[0] != "date") {
        throw SchemaError("'" + path + "': series header must be 'date,<label>'");
    }
    std::vector<std::pair<std::string, double>> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        const auto fields = split_fields(lines[i]);
        if (fields.size() != 2) {
            throw ParseError("line " + std::to_string(i + 1) +
                             ": expected 2 fields, got " + std::to_string(fields.size()));
        }
        rows.emplace_back(fields[0], parse_double(fields[1], i + 1));
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    SeriesCsv out;
    for (auto& [ts, v] : rows) {
        if (!out.timestamps.empty() && !(out.timestamps.back() < ts)) {
            throw DataError("'" + path + "': duplicate or unordered date '" + ts + "'");
        }
        out.timestamps.push_back(ts);
        out.values.push_back(v);
    }
    return out;
}

} // namespace dpt
