#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "dflab/common.hpp"
#include "dflab/csv.hpp"

namespace dflab::dataio {

// ---------------------------------------------------------------------------
// Monthly timestamps
// ---------------------------------------------------------------------------

struct YearMonth {
    int year = 0;
    int month = 1;   // 1..12

    int index() const { return year * 12 + month - 1; }
    bool operator==(const YearMonth&) const = default;
    bool operator<(const YearMonth& o) const { return index() < o.index(); }

    std::string str() const {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%04d-%02d", year, month);
        return buf;
    }
};

/// Accepts YYYY-MM and YYYY-MM-DD; the day is dropped.
inline YearMonth parse_month(const std::string& s, const std::string& context) {
    int y = 0, m = 0, d = 1;
    const int fields = std::sscanf(s.c_str(), "%d-%d-%d", &y, &m, &d);
    if (fields < 2 || y < 1 || m < 1 || m > 12)
        throw DataError("bad ISO date '" + s + "' in " + context);
    return {y, m};
}

struct MacroSeries {
    std::string name;
    std::vector<YearMonth> dates;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
};

/// Two-column `date,value` CSV with strictly increasing ISO dates.
inline MacroSeries load_csv(const std::filesystem::path& path) {
    const auto table = csv::read_file(path);
    if (table.header.size() < 2)
        throw DataError("expected columns date,value in " + path.string());
    MacroSeries s;
    s.name = path.stem().string();
    for (const auto& row : table.rows) {
        if (row.size() < 2) throw DataError("short row in " + path.string());
        const YearMonth ym = parse_month(row[0], path.string());
        if (!s.dates.empty()) {
            if (ym == s.dates.back())
                throw DataError("duplicate date " + ym.str() + " in " + path.string());
            if (ym < s.dates.back())
                throw DataError("dates not increasing at " + ym.str() + " in " + path.string());
        }
        s.dates.push_back(ym);
        s.values.push_back(csv::parse_double(row[1], path.string()));
    }
    if (s.values.empty()) throw DataError("no rows in " + path.string());
    return s;
}

// ---------------------------------------------------------------------------
// Transform: align, log-difference, standardize
// ---------------------------------------------------------------------------

struct TransformedData {
    Eigen::MatrixXd y;                  // N x k, standardized log-differences
    std::vector<YearMonth> dates;       // date of each row (the later month)
    std::vector<std::string> names;
    Eigen::VectorXd col_mean, col_sd;   // of the raw log-differences
};

/// Inner join on month, then y = diff(log(levels)) standardized column-wise
/// with the population sd. Gaps in the joined index are an error rather
/// than imputed.
inline TransformedData transform(const std::vector<MacroSeries>& series) {
    if (series.empty()) throw DataError("transform: no series");
    // Months present in every series.
    std::vector<YearMonth> common = series.front().dates;
    for (std::size_t si = 1; si < series.size(); ++si) {
        std::vector<YearMonth> next;
        const auto& d = series[si].dates;
        std::size_t j = 0;
        for (const auto& ym : common) {
            while (j < d.size() && d[j] < ym) ++j;
            if (j < d.size() && d[j] == ym) next.push_back(ym);
        }
        common = std::move(next);
    }
    if (common.size() < 2) throw DataError("transform: fewer than two common months after alignment");
    for (std::size_t i = 1; i < common.size(); ++i)
        if (common[i].index() != common[i - 1].index() + 1)
            throw DataError("transform: month gap between " + common[i - 1].str() + " and " +
                            common[i].str() + " after alignment");

    const int k = static_cast<int>(series.size());
    const long n = static_cast<long>(common.size()) - 1;
    TransformedData out;
    out.y.resize(n, k);
    out.col_mean.resize(k);
    out.col_sd.resize(k);
    out.dates.assign(common.begin() + 1, common.end());

    for (int i = 0; i < k; ++i) {
        out.names.push_back(series[i].name);
        // Index the series rows by month.
        std::vector<double> levels(common.size());
        std::size_t j = 0;
        for (std::size_t c = 0; c < common.size(); ++c) {
            while (series[i].dates[j] < common[c]) ++j;
            levels[c] = series[i].values[j];
        }
        for (long t = 0; t < n + 1; ++t)
            if (levels[t] <= 0.0)
                throw DataError("nonpositive level in series '" + series[i].name + "' at " +
                                common[t].str());
        for (long t = 0; t < n; ++t) out.y(t, i) = std::log(levels[t + 1]) - std::log(levels[t]);

        const double m = out.y.col(i).mean();
        const double sd = std::sqrt((out.y.col(i).array() - m).square().sum() / static_cast<double>(n));
        if (sd <= 0.0)
            throw DataError("series '" + series[i].name + "' is degenerate after log-differencing");
        out.col_mean(i) = m;
        out.col_sd(i) = sd;
        out.y.col(i) = (out.y.col(i).array() - m) / sd;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hand-specified train/validation segmentation
// ---------------------------------------------------------------------------

enum class SplitLabel { Train, Validation };

struct SplitInterval {
    SplitLabel label;
    YearMonth start, end;   // inclusive months
};

struct SplitSpec {
    std::vector<SplitInterval> intervals;
};

/// `label,start,end` CSV; labels are `train` or `val`.
inline SplitSpec load_split(const std::filesystem::path& path) {
    const auto table = csv::read_file(path);
    SplitSpec spec;
    for (const auto& row : table.rows) {
        if (row.size() < 3) throw DataError("short row in " + path.string());
        SplitInterval iv;
        if (row[0] == "train") iv.label = SplitLabel::Train;
        else if (row[0] == "val" || row[0] == "validation") iv.label = SplitLabel::Validation;
        else throw DataError("unknown split label '" + row[0] + "' in " + path.string());
        iv.start = parse_month(row[1], path.string());
        iv.end = parse_month(row[2], path.string());
        if (iv.end < iv.start)
            throw DataError("interval ends before it starts at " + iv.start.str() + " in " + path.string());
        spec.intervals.push_back(iv);
    }
    if (spec.intervals.empty()) throw DataError("empty split file " + path.string());
    return spec;
}

struct Segment {
    long begin = 0, end = 0;   // [begin, end) row indices
    SplitLabel label = SplitLabel::Train;
};

struct SplitMasks {
    std::vector<int> label;        // per row: 0 train, 1 validation, -1 unassigned
    std::vector<Segment> segments; // maximal contiguous runs of one label
};

/// Index masks for the transformed rows. Later windowing is segment-local,
/// so no window crosses a train/validation boundary.
inline SplitMasks apply_split(const std::vector<YearMonth>& dates, const SplitSpec& spec) {
    SplitMasks masks;
    masks.label.assign(dates.size(), -1);
    const int lo = dates.front().index(), hi = dates.back().index();
    for (const auto& iv : spec.intervals) {
        if (iv.start.index() < lo || iv.end.index() > hi)
            throw ConfigError("split interval " + iv.start.str() + ".." + iv.end.str() +
                              " lies outside the data range");
        for (std::size_t t = 0; t < dates.size(); ++t) {
            const int idx = dates[t].index();
            if (idx >= iv.start.index() && idx <= iv.end.index()) {
                if (masks.label[t] != -1)
                    throw ConfigError("overlapping split intervals at " + dates[t].str());
                masks.label[t] = iv.label == SplitLabel::Train ? 0 : 1;
            }
        }
    }
    bool has_train = false, has_val = false;
    for (std::size_t t = 0; t < dates.size(); ++t) {
        if (masks.label[t] == 0) has_train = true;
        if (masks.label[t] == 1) has_val = true;
    }
    if (!has_train || !has_val)
        throw ConfigError("split must assign both training and validation periods");

    for (std::size_t t = 0; t < dates.size();) {
        if (masks.label[t] == -1) {
            ++t;
            continue;
        }
        std::size_t e = t;
        while (e < dates.size() && masks.label[e] == masks.label[t]) ++e;
        masks.segments.push_back({static_cast<long>(t), static_cast<long>(e),
                                  masks.label[t] == 0 ? SplitLabel::Train : SplitLabel::Validation});
        t = e;
    }
    return masks;
}

// ---------------------------------------------------------------------------
// Recession bands
// ---------------------------------------------------------------------------

struct Recession {
    YearMonth start, end;   // inclusive
};

inline std::vector<Recession> load_recessions(const std::filesystem::path& path) {
    const auto table = csv::read_file(path);
    std::vector<Recession> out;
    for (const auto& row : table.rows) {
        if (row.size() < 2) throw DataError("short row in " + path.string());
        Recession r{parse_month(row[0], path.string()), parse_month(row[1], path.string())};
        if (r.end < r.start)
            throw DataError("recession ends before it starts at " + r.start.str() + " in " +
                            path.string());
        out.push_back(r);
    }
    return out;
}

inline bool in_recession(const std::vector<Recession>& bands, const YearMonth& ym) {
    for (const auto& r : bands)
        if (r.start.index() <= ym.index() && ym.index() <= r.end.index()) return true;
    return false;
}

} // namespace dflab::dataio
