#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "autohedge/errors.hpp"
#include "autohedge/instruments.hpp"
#include "autohedge/market_sim.hpp"
#include "autohedge/mc_pricer.hpp"
#include "autohedge/parallel.hpp"
#include "autohedge/rng.hpp"

namespace autohedge {

/// Barycentric weight convention.
///  first_kind: w_i = (-1)^i sin((2i-1)pi/(2n)), exact for Chebyshev points of the first kind.
///  literal:    w_i = (-1)^i halved at both ends (the second-kind weights), kept for comparison;
///              on first-kind nodes it is a rational interpolant, not the polynomial one.
enum class BaryWeights : std::uint32_t { first_kind = 0, literal = 1 };

inline std::string to_string(BaryWeights w) { return w == BaryWeights::first_kind ? "first-kind" : "literal"; }

inline BaryWeights parse_bary_weights(const std::string& s) {
    if (s == "first-kind") return BaryWeights::first_kind;
    if (s == "literal") return BaryWeights::literal;
    throw ValidationError("unknown barycentric weights '" + s + "'");
}

/// cos((2i-1)pi/(2n)), i = 1..n, mapped affinely from [-1, 1] onto [lo, hi].
/// Returned in formula order, i.e. descending; endpoints are never included.
inline std::vector<double> cheb_points(std::size_t n, double lo, double hi) {
    require(n >= 1, "cheb_points: n must be >= 1");
    require(lo < hi, "cheb_points: need lo < hi");
    std::vector<double> x(n);
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
    for (std::size_t i = 1; i <= n; ++i) {
        const double c = std::cos((2.0 * static_cast<double>(i) - 1.0) * std::numbers::pi / (2.0 * static_cast<double>(n)));
        x[i - 1] = mid + half * c;
    }
    return x;
}

inline std::vector<double> barycentric_weights(std::size_t n, BaryWeights scheme = BaryWeights::first_kind) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double sign = (i % 2 == 0) ? 1.0 : -1.0;
        if (scheme == BaryWeights::first_kind) {
            w[i] = sign * std::sin((2.0 * static_cast<double>(i) + 1.0) * std::numbers::pi / (2.0 * static_cast<double>(n)));
        } else {
            w[i] = sign * ((i == 0 || i + 1 == n) ? 0.5 : 1.0);
        }
    }
    return w;
}

/// Normalised barycentric coefficients c with P(x) = sum_k c_k f_k. An exact node hit
/// yields the unit vector, so the stored value is returned exactly.
inline void barycentric_coefficients(std::span<const double> nodes, std::span<const double> weights, double x,
                                     std::span<double> out) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (x == nodes[k]) {
            std::fill(out.begin(), out.end(), 0.0);
            out[k] = 1.0;
            return;
        }
    }
    double denom = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        out[k] = weights[k] / (x - nodes[k]);
        denom += out[k];
    }
    for (auto& c : out) c /= denom;
}

inline double barycentric_eval_1d(std::span<const double> nodes, std::span<const double> values, double x,
                                  std::span<const double> weights) {
    require(nodes.size() == values.size() && nodes.size() == weights.size(),
            "barycentric_eval_1d: nodes, values and weights must have equal length");
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (x == nodes[k]) return values[k];
        const double c = weights[k] / (x - nodes[k]);
        num += c * values[k];
        den += c;
    }
    return num / den;
}

/// First-kind weights for n Chebyshev points.
inline double barycentric_eval_1d(std::span<const double> nodes, std::span<const double> values, double x) {
    const auto w = barycentric_weights(nodes.size());
    return barycentric_eval_1d(nodes, values, x, w);
}

struct ChebGrid1D {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> nodes;
    std::vector<double> weights;

    ChebGrid1D() = default;
    ChebGrid1D(std::size_t n, double lo_, double hi_, BaryWeights scheme)
        : lo(lo_), hi(hi_), nodes(cheb_points(n, lo_, hi_)), weights(barycentric_weights(n, scheme)) {}

    std::size_t size() const { return nodes.size(); }
    bool contains(double x) const { return x >= lo && x <= hi; }
};

/// Interpolant of the note price over spot space on one valuation date.
/// values are row-major over the axes (last axis fastest).
struct ChebTensorDay {
    double day = 0.0;
    /// True on observation dates: values are the continuation value of a note that
    /// survived that day's observation (today's coupon already paid).
    bool continuation = false;
    std::vector<ChebGrid1D> grids;
    std::vector<double> values;

    std::size_t n_axes() const { return grids.size(); }
    std::size_t n_values() const {
        std::size_t n = 1;
        for (const auto& g : grids) n *= g.size();
        return n;
    }
};

/// Evaluates the tensor interpolant by contracting the last axis first, then the one
/// before it, down to axis 0. Spots outside any grid domain raise ExtrapolationError.
inline double eval_tensor(const ChebTensorDay& day, std::span<const double> spots) {
    const std::size_t d = day.n_axes();
    require(spots.size() == d, "eval_tensor: spot vector has wrong length");
    for (std::size_t a = 0; a < d; ++a) {
        if (!day.grids[a].contains(spots[a]))
            throw ExtrapolationError("eval_tensor: spot " + std::to_string(spots[a]) + " on axis " +
                                     std::to_string(a) + " outside [" + std::to_string(day.grids[a].lo) + ", " +
                                     std::to_string(day.grids[a].hi) + "]");
    }
    std::vector<double> buf(day.values);
    std::vector<double> coef;
    std::size_t len = buf.size();
    for (std::size_t a = d; a-- > 0;) {
        const auto& g = day.grids[a];
        const std::size_t n = g.size();
        coef.resize(n);
        barycentric_coefficients(g.nodes, g.weights, spots[a], coef);
        const std::size_t outer = len / n;
        for (std::size_t p = 0; p < outer; ++p) {
            const double* src = buf.data() + p * n;
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) acc += coef[k] * src[k];
            buf[p] = acc;
        }
        len = outer;
    }
    return buf[0];
}

struct GridConfig {
    std::vector<std::size_t> nodes_per_axis{8, 8, 8};
    double lo_rel = 0.4;  ///< domain lower edge as a multiple of the initial price
    double hi_rel = 2.0;
    BaryWeights weights = BaryWeights::first_kind;
};

struct BankMeta {
    std::uint64_t n_paths = 0;
    std::uint64_t seed = 0;
    std::uint64_t model_hash = 0;
    BaryWeights weights = BaryWeights::first_kind;
};

namespace detail {
inline void fnv1a(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
}
inline void fnv1a(std::uint64_t& h, double v) { fnv1a(h, &v, sizeof v); }
}  // namespace detail

/// Hash of everything the risk-neutral note price depends on (note terms, vols,
/// correlations, rate). Real-world drift and the simulation start spots are excluded.
inline std::uint64_t pricing_hash(const NoteSpec& spec, const MarketModel& model) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    using detail::fnv1a;
    fnv1a(h, spec.notional);
    for (double p : spec.initial_prices) fnv1a(h, p);
    for (double v : {spec.maturity, spec.coupon_freq, spec.coupon_rate, spec.coupon_barrier, spec.call_freq,
                     spec.call_barrier, spec.protection_barrier})
        fnv1a(h, v);
    for (double v : model.vol) fnv1a(h, v);
    for (const auto& row : model.corr)
        for (double v : row) fnv1a(h, v);
    fnv1a(h, model.rate);
    return h;
}

class ChebTensorBank {
public:
    ChebTensorBank() = default;
    ChebTensorBank(std::vector<ChebTensorDay> days, BankMeta meta) : days_(std::move(days)), meta_(meta) {
        for (std::size_t i = 1; i < days_.size(); ++i)
            require(days_[i].day > days_[i - 1].day + kTimeTol, "bank days must be strictly increasing");
    }

    const std::vector<ChebTensorDay>& days() const { return days_; }
    const BankMeta& meta() const { return meta_; }

    /// Exact-date lookup; there is no interpolation in time.
    const ChebTensorDay* find(double day) const {
        auto it = std::lower_bound(days_.begin(), days_.end(), day - kTimeTol,
                                   [](const ChebTensorDay& d, double t) { return d.day < t; });
        if (it != days_.end() && same_time(it->day, day)) return &*it;
        return nullptr;
    }

    const ChebTensorDay& at(double day) const {
        const auto* d = find(day);
        if (!d) throw ValidationError("no tensor for day " + std::to_string(day) + " in bank");
        return *d;
    }

    double eval(double day, std::span<const double> spots) const { return eval_tensor(at(day), spots); }

    bool in_domain(double day, std::span<const double> spots) const {
        const auto& d = at(day);
        for (std::size_t a = 0; a < d.n_axes(); ++a)
            if (!d.grids[a].contains(spots[a])) return false;
        return true;
    }

private:
    std::vector<ChebTensorDay> days_;
    BankMeta meta_;
};

/// Multi-index of flat tensor position `flat` (last axis fastest).
inline std::vector<std::size_t> unravel(std::size_t flat, const std::vector<ChebGrid1D>& grids) {
    std::vector<std::size_t> idx(grids.size());
    for (std::size_t a = grids.size(); a-- > 0;) {
        idx[a] = flat % grids[a].size();
        flat /= grids[a].size();
    }
    return idx;
}

inline std::vector<ChebGrid1D> make_grids(const NoteSpec& spec, const GridConfig& grid) {
    require(grid.nodes_per_axis.size() == spec.n_assets(), "grid config needs one node count per asset");
    require(grid.lo_rel > 0.0 && grid.lo_rel < grid.hi_rel, "grid domain must satisfy 0 < lo_rel < hi_rel");
    std::vector<ChebGrid1D> grids;
    for (std::size_t a = 0; a < spec.n_assets(); ++a)
        grids.emplace_back(grid.nodes_per_axis[a], grid.lo_rel * spec.initial_prices[a],
                           grid.hi_rel * spec.initial_prices[a], grid.weights);
    return grids;
}

/// Prices the note with the MC oracle at every node of every day. All nodes share the
/// same seed (common random numbers across the grid). Observation days hold
/// continuation values.
inline ChebTensorBank build_bank(const NoteSpec& spec, const MarketModel& model, std::vector<double> days,
                                 const GridConfig& grid, std::size_t n_paths, std::uint64_t seed,
                                 const std::function<void(std::size_t, double)>& on_day_done = {}) {
    spec.validate();
    model.validate();
    std::sort(days.begin(), days.end());
    for (double d : days) {
        require(d >= 0.0 && d < spec.maturity - kTimeTol, "bank days must lie within the note's life");
        require(on_daily_grid(d), "bank days must lie on the daily grid");
    }
    const auto grids = make_grids(spec, grid);
    std::vector<ChebTensorDay> out;
    for (std::size_t di = 0; di < days.size(); ++di) {
        const auto t0 = std::chrono::steady_clock::now();
        ChebTensorDay day;
        day.day = days[di];
        day.continuation = spec.observation_index(days[di]).has_value();
        day.grids = grids;
        day.values.resize(day.n_values());
        const auto today = day.continuation ? TodayObservation::excluded : TodayObservation::included;
        parallel_for(day.values.size(), [&](std::size_t flat) {
            const auto idx = unravel(flat, grids);
            std::vector<double> s(idx.size());
            for (std::size_t a = 0; a < idx.size(); ++a) s[a] = grids[a].nodes[idx[a]];
            day.values[flat] = price_note_mc(spec, model, day.day, s, n_paths, seed, today).price;
        });
        out.push_back(std::move(day));
        if (on_day_done)
            on_day_done(di, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return ChebTensorBank(std::move(out), {n_paths, seed, pricing_hash(spec, model), grid.weights});
}

/// Cum value (as price_note_mc with today's observation included) from a continuation
/// value on an observation date.
inline double note_value_with_today(const NoteSpec& spec, double t, std::span<const double> spots,
                                    double continuation) {
    const auto k = spec.observation_index(t);
    if (!k) return continuation;
    const auto o = observe(spec, *k, reference_return(spec, spots));
    return o.terminates ? o.coupon + o.redemption : o.coupon + continuation;
}

// ---------------------------------------------------------------------------------------
// Binary persistence. Layout (little-endian host order):
//   char[8] "ACNBANK1" | u32 version | u32 n_axes | u64 model_hash | u64 n_paths | u64 seed
//   | u32 weights | u32 n_days | per day: f64 day, u8 continuation,
//     per axis: u32 n, f64 lo, f64 hi; then prod(n) f64 values.

inline constexpr char kBankMagic[8] = {'A', 'C', 'N', 'B', 'A', 'N', 'K', '1'};
inline constexpr std::uint32_t kBankVersion = 1;

namespace detail {
template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw ValidationError("truncated binary file");
    return v;
}
}  // namespace detail

inline void save_bank(const ChebTensorBank& bank, const std::string& path) {
    using detail::put;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open '" + path + "' for writing");
    os.write(kBankMagic, sizeof kBankMagic);
    put<std::uint32_t>(os, kBankVersion);
    const auto n_axes = bank.days().empty() ? 0u : static_cast<std::uint32_t>(bank.days().front().n_axes());
    put<std::uint32_t>(os, n_axes);
    put<std::uint64_t>(os, bank.meta().model_hash);
    put<std::uint64_t>(os, bank.meta().n_paths);
    put<std::uint64_t>(os, bank.meta().seed);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(bank.meta().weights));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(bank.days().size()));
    for (const auto& d : bank.days()) {
        put<double>(os, d.day);
        put<std::uint8_t>(os, d.continuation ? 1 : 0);
        for (const auto& g : d.grids) {
            put<std::uint32_t>(os, static_cast<std::uint32_t>(g.size()));
            put<double>(os, g.lo);
            put<double>(os, g.hi);
        }
        os.write(reinterpret_cast<const char*>(d.values.data()),
                 static_cast<std::streamsize>(d.values.size() * sizeof(double)));
    }
    if (!os) throw ValidationError("failed writing bank file '" + path + "'");
}

inline ChebTensorBank load_bank(const std::string& path) {
    using detail::get;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open bank file '" + path + "'");
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kBankMagic, sizeof magic) != 0)
        throw ValidationError("'" + path + "' is not a tensor bank file");
    const auto version = get<std::uint32_t>(is);
    if (version != kBankVersion)
        throw ValidationError("unsupported bank version " + std::to_string(version));
    const auto n_axes = get<std::uint32_t>(is);
    BankMeta meta;
    meta.model_hash = get<std::uint64_t>(is);
    meta.n_paths = get<std::uint64_t>(is);
    meta.seed = get<std::uint64_t>(is);
    meta.weights = static_cast<BaryWeights>(get<std::uint32_t>(is));
    const auto n_days = get<std::uint32_t>(is);
    std::vector<ChebTensorDay> days(n_days);
    for (auto& d : days) {
        d.day = get<double>(is);
        d.continuation = get<std::uint8_t>(is) != 0;
        for (std::uint32_t a = 0; a < n_axes; ++a) {
            const auto n = get<std::uint32_t>(is);
            const double lo = get<double>(is), hi = get<double>(is);
            d.grids.emplace_back(n, lo, hi, meta.weights);
        }
        d.values.resize(d.n_values());
        is.read(reinterpret_cast<char*>(d.values.data()), static_cast<std::streamsize>(d.values.size() * sizeof(double)));
        if (!is) throw ValidationError("truncated bank file '" + path + "'");
    }
    return ChebTensorBank(std::move(days), meta);
}

struct BenchResult {
    std::string instrument;
    double mc_seconds = 0.0;      ///< median per MC pricing
    double tensor_seconds = 0.0;  ///< median per tensor evaluation
    std::size_t mc_paths = 0;
    std::size_t n_queries = 0;
    double ratio() const { return mc_seconds / tensor_seconds; }
};

inline double median(std::vector<double> v) {
    require(!v.empty(), "median of empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Wall-clock comparison on random in-domain queries over the bank's days. Each tensor
/// timing averages `tensor_repeats` evaluations of the same query to beat clock resolution.
inline BenchResult bench_speedup(const ChebTensorBank& bank, const NoteSpec& spec, const MarketModel& model,
                                 std::size_t n_queries, std::size_t mc_queries = 5, std::size_t mc_paths = 100000,
                                 std::uint64_t seed = 7, std::size_t tensor_repeats = 2000) {
    require(!bank.days().empty(), "bench_speedup: empty bank");
    require(n_queries >= 1 && mc_queries >= 1, "bench_speedup: need at least one query");
    using clock = std::chrono::steady_clock;
    Rng rng = make_rng(seed, 0, 0xBE4C);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto random_query = [&](double& day, std::vector<double>& s) {
        const auto& d = bank.days()[static_cast<std::size_t>(unif(rng) * bank.days().size()) % bank.days().size()];
        day = d.day;
        s.resize(d.n_axes());
        for (std::size_t a = 0; a < d.n_axes(); ++a) s[a] = d.grids[a].lo + unif(rng) * (d.grids[a].hi - d.grids[a].lo);
        return &d;
    };
    volatile double sink = 0.0;
    std::vector<double> tensor_t, mc_t;
    std::vector<double> s;
    double day = 0.0;
    for (std::size_t q = 0; q < n_queries; ++q) {
        const auto* d = random_query(day, s);
        const auto t0 = clock::now();
        for (std::size_t r = 0; r < tensor_repeats; ++r) sink = sink + eval_tensor(*d, s);
        tensor_t.push_back(std::chrono::duration<double>(clock::now() - t0).count() / tensor_repeats);
    }
    for (std::size_t q = 0; q < mc_queries; ++q) {
        const auto* d = random_query(day, s);
        const auto today = d->continuation ? TodayObservation::excluded : TodayObservation::included;
        const auto t0 = clock::now();
        sink = sink + price_note_mc(spec, model, day, s, mc_paths, seed + q, today).price;
        mc_t.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    }
    (void)sink;
    BenchResult r;
    r.instrument = "Autocall note (" + std::to_string(spec.maturity).substr(0, 4) + " years, " +
                   std::to_string(spec.n_assets()) + " underlying assets)";
    r.mc_seconds = median(mc_t);
    r.tensor_seconds = median(tensor_t);
    r.mc_paths = mc_paths;
    r.n_queries = n_queries;
    return r;
}

}  // namespace autohedge
