#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autohedge/cheb_tensor.hpp"
#include "autohedge/errors.hpp"

namespace autohedge {

/// p-quantile with linear interpolation between order statistics at (n-1)p.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
    require(!sorted.empty(), "quantile: empty sample");
    require(p >= 0.0 && p <= 1.0, "quantile: probability must lie in [0, 1]");
    const double h = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline void check_level(double c) { require(c > 0.0 && c < 1.0, "risk level must lie in (0, 1)"); }

/// VaR reported as a PnL value: the (1 - c)-quantile, so the 99% level sits in the loss tail
/// and the 5% level in the favourable tail.
inline double var_pnl(std::vector<double> samples, double c) {
    check_level(c);
    std::sort(samples.begin(), samples.end());
    return quantile_sorted(samples, 1.0 - c);
}

/// Tail mean beyond var_pnl. Levels >= 50% average the left tail (samples <= VaR);
/// levels below 50% average the right tail (samples >= VaR).
inline double cvar_pnl(std::vector<double> samples, double c) {
    check_level(c);
    std::sort(samples.begin(), samples.end());
    const double v = quantile_sorted(samples, 1.0 - c);
    double sum = 0.0;
    std::size_t n = 0;
    for (double x : samples) {
        if (c >= 0.5 ? x <= v : x >= v) {
            sum += x;
            ++n;
        }
    }
    return sum / static_cast<double>(n);
}

inline constexpr std::array<double, 4> kReportLevels = {0.99, 0.95, 0.05, 0.01};

inline constexpr const char* kRiskConvention =
    "VaR_c is the (1-c) quantile of PnL (linear interpolation); CVaR_c is the mean of PnL at or "
    "below VaR_c for c >= 50% and at or above it for c < 50%";

struct PnLReport {
    std::string label;
    std::vector<double> samples;
    double mean = std::numeric_limits<double>::quiet_NaN();
    double std = std::numeric_limits<double>::quiet_NaN();
    std::array<double, 4> var{};   ///< at kReportLevels
    std::array<double, 4> cvar{};  ///< at kReportLevels

    std::size_t n() const { return samples.size(); }
};

inline PnLReport make_report(std::string label, std::vector<double> samples) {
    PnLReport r;
    r.label = std::move(label);
    r.samples = std::move(samples);
    r.var.fill(std::numeric_limits<double>::quiet_NaN());
    r.cvar.fill(std::numeric_limits<double>::quiet_NaN());
    if (r.samples.empty()) return r;
    double s = 0.0;
    for (double x : r.samples) s += x;
    r.mean = s / static_cast<double>(r.n());
    double ss = 0.0;
    for (double x : r.samples) ss += (x - r.mean) * (x - r.mean);
    r.std = r.n() > 1 ? std::sqrt(ss / static_cast<double>(r.n() - 1)) : 0.0;
    for (std::size_t k = 0; k < kReportLevels.size(); ++k) {
        r.var[k] = var_pnl(r.samples, kReportLevels[k]);
        r.cvar[k] = cvar_pnl(r.samples, kReportLevels[k]);
    }
    return r;
}

/// Shortest representation that round-trips; keeps CSV output byte-stable.
inline std::string fmt_num(double x) {
    if (std::isnan(x)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    for (int prec = 6; prec < 17; ++prec) {
        char shorter[40];
        std::snprintf(shorter, sizeof shorter, "%.*g", prec, x);
        if (std::strtod(shorter, nullptr) == x) return shorter;
    }
    return buf;
}

inline void write_report_csv(std::ostream& os, const std::vector<PnLReport>& rows) {
    os << "# " << kRiskConvention << '\n';
    os << "strategy,n,mean,std,var99,var95,var5,var1,cvar99,cvar95,cvar5,cvar1\n";
    for (const auto& r : rows) {
        os << r.label << ',' << r.n() << ',' << fmt_num(r.mean) << ',' << fmt_num(r.std);
        for (double v : r.var) os << ',' << fmt_num(v);
        for (double v : r.cvar) os << ',' << fmt_num(v);
        os << '\n';
    }
}

struct Histogram {
    std::vector<double> edges;  ///< n_bins + 1
    std::vector<std::size_t> counts;
};

/// Equal-width bins on [lo, hi]; samples outside are clamped into the end bins.
inline Histogram make_histogram(const std::vector<double>& samples, std::size_t n_bins, double lo, double hi) {
    require(n_bins >= 1, "histogram: need at least one bin");
    if (!(hi > lo)) hi = lo + 1.0;
    Histogram h;
    h.edges.resize(n_bins + 1);
    for (std::size_t i = 0; i <= n_bins; ++i)
        h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_bins);
    h.counts.assign(n_bins, 0);
    for (double x : samples) {
        auto b = static_cast<long long>(std::floor((x - lo) / (hi - lo) * static_cast<double>(n_bins)));
        b = std::clamp<long long>(b, 0, static_cast<long long>(n_bins) - 1);
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

/// One JSON object per strategy, all sharing bins spanning the pooled sample range.
inline void write_histograms_jsonl(std::ostream& os, const std::vector<PnLReport>& rows, std::size_t n_bins) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& r : rows)
        for (double x : r.samples) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
    if (!std::isfinite(lo)) return;
    for (const auto& r : rows) {
        const auto h = make_histogram(r.samples, n_bins, lo, hi);
        nlohmann::json j;
        j["strategy"] = r.label;
        j["edges"] = h.edges;
        j["counts"] = h.counts;
        os << j.dump() << '\n';
    }
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchResult>& rows) {
    os << "instrument,mc_seconds,tensor_seconds,mc_paths,n_queries,efficiency_gain\n";
    for (const auto& r : rows)
        os << '"' << r.instrument << "\"," << fmt_num(r.mc_seconds) << ',' << fmt_num(r.tensor_seconds) << ','
           << r.mc_paths << ',' << r.n_queries << ',' << fmt_num(r.ratio()) << '\n';
}

inline void write_bench_text(std::ostream& os, const std::vector<BenchResult>& rows) {
    char line[256];
    std::snprintf(line, sizeof line, "%-24s %14s %16s %10s\n", "instrument", "MC time (s)", "tensor time (s)",
                  "gain");
    os << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-24s %14.4g %16.4g %9.1fx\n", r.instrument.c_str(), r.mc_seconds,
                      r.tensor_seconds, r.ratio());
        os << line;
    }
}

}  // namespace autohedge
