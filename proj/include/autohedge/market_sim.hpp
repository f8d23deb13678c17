#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "autohedge/errors.hpp"
#include "autohedge/parallel.hpp"
#include "autohedge/rng.hpp"

namespace autohedge {

enum class Measure { risk_neutral, real_world };

inline std::string to_string(Measure m) {
    return m == Measure::risk_neutral ? "risk-neutral" : "real-world";
}

inline Measure parse_measure(const std::string& s) {
    if (s == "risk-neutral") return Measure::risk_neutral;
    if (s == "real-world") return Measure::real_world;
    throw ValidationError("unknown measure '" + s + "' (expected risk-neutral or real-world)");
}

/// Correlated geometric Brownian motion with a flat continuously-compounded rate.
struct MarketModel {
    std::vector<double> spot0;
    std::vector<double> drift;  ///< real-world drift, 1/yr
    std::vector<double> vol;    ///< 1/yr, > 0
    std::vector<std::vector<double>> corr;
    double rate = 0.0;

    std::size_t n_assets() const { return spot0.size(); }

    /// Convenience: n assets with equal vol and pairwise correlation, drift = rate.
    static MarketModel flat(std::vector<double> spots, double vol, double pairwise_corr, double rate) {
        MarketModel m;
        const std::size_t n = spots.size();
        m.spot0 = std::move(spots);
        m.drift.assign(n, rate);
        m.vol.assign(n, vol);
        m.corr.assign(n, std::vector<double>(n, pairwise_corr));
        for (std::size_t i = 0; i < n; ++i) m.corr[i][i] = 1.0;
        m.rate = rate;
        return m;
    }

    double mu(std::size_t asset, Measure measure) const {
        return measure == Measure::risk_neutral ? rate : drift[asset];
    }

    /// Lower Cholesky factor of corr. Throws ValidationError if corr is not a
    /// symmetric unit-diagonal positive-definite matrix.
    Eigen::MatrixXd cholesky() const {
        const std::size_t n = n_assets();
        Eigen::MatrixXd c(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) c(i, j) = corr[i][j];
        for (std::size_t i = 0; i < n; ++i) {
            require(std::abs(c(i, i) - 1.0) < 1e-12, "correlation diagonal must be 1");
            for (std::size_t j = 0; j < i; ++j) {
                require(std::abs(c(i, j) - c(j, i)) < 1e-12, "correlation matrix must be symmetric");
                require(std::abs(c(i, j)) <= 1.0, "correlation entries must lie in [-1, 1]");
            }
        }
        Eigen::LLT<Eigen::MatrixXd> llt(c);
        require(llt.info() == Eigen::Success, "correlation matrix is not positive definite");
        return llt.matrixL();
    }

    void validate() const {
        const std::size_t n = n_assets();
        require(n >= 1, "market model needs at least one asset");
        require(drift.size() == n && vol.size() == n, "drift/vol length must equal number of assets");
        require(corr.size() == n, "correlation matrix has wrong shape");
        for (const auto& row : corr) require(row.size() == n, "correlation matrix has wrong shape");
        for (std::size_t i = 0; i < n; ++i) {
            require(spot0[i] > 0.0 && std::isfinite(spot0[i]), "initial spots must be positive");
            require(vol[i] >= 0.0 && std::isfinite(vol[i]), "volatilities must be non-negative");
            require(std::isfinite(drift[i]), "drift must be finite");
        }
        require(std::isfinite(rate), "rate must be finite");
        (void)cholesky();
    }
};

inline double discount_factor(const MarketModel& model, double t) {
    require(t >= 0.0, "discount_factor: negative time");
    return std::exp(-model.rate * t);
}

/// Exact log-space transition of correlated GBM over a fixed interval.
class GbmStep {
public:
    GbmStep() = default;
    GbmStep(const MarketModel& model, const Eigen::MatrixXd& chol, double dt, Measure measure)
        : n_(model.n_assets()), drift_(n_), shock_(n_ * n_, 0.0) {
        const double sq = std::sqrt(dt);
        for (std::size_t i = 0; i < n_; ++i) {
            const double s = model.vol[i];
            drift_[i] = (model.mu(i, measure) - 0.5 * s * s) * dt;
            for (std::size_t j = 0; j <= i; ++j) shock_[i * n_ + j] = s * sq * chol(i, j);
        }
    }

    /// log_s[i] += drift_i + sum_j shock_ij z_j, with `sign` = -1 for the antithetic leg.
    void apply(double* log_s, const double* z, double sign = 1.0) const {
        for (std::size_t i = 0; i < n_; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j <= i; ++j) acc += shock_[i * n_ + j] * z[j];
            log_s[i] += drift_[i] + sign * acc;
        }
    }

private:
    std::size_t n_ = 0;
    std::vector<double> drift_;
    std::vector<double> shock_;
};

inline void validate_time_grid(const std::vector<double>& times) {
    require(!times.empty() && times.front() == 0.0, "time grid must start at 0");
    for (std::size_t k = 1; k < times.size(); ++k)
        require(times[k] > times[k - 1], "time grid must be strictly increasing");
}

/// Simulated prices, layout [path][step][asset].
struct PathSet {
    std::vector<double> times;
    std::size_t n_paths = 0;
    std::size_t n_assets = 0;
    std::vector<double> prices;
    std::uint64_t seed = 0;
    Measure measure = Measure::risk_neutral;

    std::size_t n_steps() const { return times.size(); }
    double at(std::size_t path, std::size_t step, std::size_t asset) const {
        return prices[(path * n_steps() + step) * n_assets + asset];
    }
    const double* row(std::size_t path, std::size_t step) const {
        return prices.data() + (path * n_steps() + step) * n_assets;
    }
};

inline constexpr std::size_t kPathBlock = 1024;

/// Paths are generated in blocks of kPathBlock; block b draws from substream (seed, b),
/// so the output does not depend on the worker count.
inline PathSet simulate_paths(const MarketModel& model, const std::vector<double>& times,
                              std::size_t n_paths, std::uint64_t seed, Measure measure) {
    model.validate();
    validate_time_grid(times);
    require(n_paths >= 1, "simulate_paths: n_paths must be >= 1");
    const auto chol = model.cholesky();
    const std::size_t na = model.n_assets();
    const std::size_t ns = times.size();

    std::vector<GbmStep> steps;
    steps.reserve(ns);
    steps.emplace_back();
    for (std::size_t k = 1; k < ns; ++k) steps.emplace_back(model, chol, times[k] - times[k - 1], measure);

    PathSet out{times, n_paths, na, std::vector<double>(n_paths * ns * na), seed, measure};
    const std::size_t n_blocks = (n_paths + kPathBlock - 1) / kPathBlock;
    parallel_for(n_blocks, [&](std::size_t b) {
        Rng rng = make_rng(seed, b, stream_tag::path_block);
        std::normal_distribution<double> normal;
        std::vector<double> log_s(na), z(na);
        const std::size_t end = std::min(n_paths, (b + 1) * kPathBlock);
        for (std::size_t p = b * kPathBlock; p < end; ++p) {
            double* dst = out.prices.data() + p * ns * na;
            for (std::size_t i = 0; i < na; ++i) {
                log_s[i] = std::log(model.spot0[i]);
                dst[i] = model.spot0[i];
            }
            for (std::size_t k = 1; k < ns; ++k) {
                for (auto& v : z) v = normal(rng);
                steps[k].apply(log_s.data(), z.data());
                for (std::size_t i = 0; i < na; ++i) dst[k * na + i] = std::exp(log_s[i]);
            }
        }
    });
    return out;
}

/// Debug export: one row per (path, step, asset).
inline void write_paths_csv(std::ostream& os, const PathSet& ps) {
    os << "path,step,time,asset,price\n";
    os.precision(17);
    for (std::size_t p = 0; p < ps.n_paths; ++p)
        for (std::size_t k = 0; k < ps.n_steps(); ++k)
            for (std::size_t i = 0; i < ps.n_assets; ++i)
                os << p << ',' << k << ',' << ps.times[k] << ',' << i << ',' << ps.at(p, k, i) << '\n';
}

}  // namespace autohedge
