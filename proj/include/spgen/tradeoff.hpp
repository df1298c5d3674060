#pragma once

// Mean squared error of a pooled estimator mixing n real and k synthetic
// samples: closed form, Monte Carlo simulation and the optimal synthetic
// fraction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "spgen/common.hpp"

namespace spgen {

struct TradeoffSetting {
  std::int64_t n = 1;
  std::int64_t k = 0;
  double sigma2 = 1.0;
  double sigma2_tilde = 1.0;
  double delta2 = 0.0;
  double beta = 1.0;
  std::int64_t d = 4;
};

inline void validate(const TradeoffSetting& s) {
  if (s.n < 1) throw ConfigError("n must be >= 1");
  if (s.k < 0) throw ConfigError("k must be >= 0");
  if (!(s.sigma2 > 0) || !(s.sigma2_tilde > 0)) throw ConfigError("noise variances must be > 0");
  if (!(s.delta2 >= 0)) throw ConfigError("delta2 must be >= 0");
  if (!(s.beta >= 0 && s.beta <= 1)) throw ConfigError("beta must lie in [0, 1]");
  if (s.d < 1) throw ConfigError("d must be >= 1");
}

inline double mse_closed_form(const TradeoffSetting& s) {
  validate(s);
  const double n = static_cast<double>(s.n), k = static_cast<double>(s.k);
  const double variance = (n * s.sigma2 + k * s.sigma2_tilde) / ((n + k) * (n + k));
  const double w = k / (n + k);
  return variance + w * w * s.beta * s.beta * s.delta2;
}

/// MSE as a function of the synthetic fraction t = k/(n+k), equal noise.
inline double mse_of_fraction(const TradeoffSetting& s, double t) {
  return s.sigma2 / static_cast<double>(s.n) * (1.0 - t) + s.beta * s.beta * s.delta2 * t * t;
}

/// min(1, sigma2 / (2 n beta^2 delta2)); 1 when the bias term vanishes.
inline double optimal_fraction(const TradeoffSetting& s) {
  validate(s);
  if (s.sigma2_tilde != s.sigma2)
    throw ImpossibleRequestError("optimal fraction is only defined for equal real and synthetic noise variance");
  const double bias = s.beta * s.beta * s.delta2;
  if (bias == 0.0) return 1.0;
  return std::min(1.0, s.sigma2 / (2.0 * static_cast<double>(s.n) * bias));
}

/// The two integer k values nearest to the continuous optimum
/// k = n t / (1 - t). Absent when t* = 1 (no finite optimum).
struct IntegerOptimum {
  std::int64_t k_floor = 0;
  std::int64_t k_ceil = 0;
  double mse_floor = 0.0;
  double mse_ceil = 0.0;
};

inline std::optional<IntegerOptimum> integer_optimum(const TradeoffSetting& s) {
  const double t = optimal_fraction(s);
  if (t >= 1.0) return std::nullopt;
  const double k = static_cast<double>(s.n) * t / (1.0 - t);
  IntegerOptimum o;
  o.k_floor = static_cast<std::int64_t>(std::floor(k));
  o.k_ceil = static_cast<std::int64_t>(std::ceil(k));
  auto at = [&](std::int64_t kk) {
    auto c = s;
    c.k = kk;
    return mse_closed_form(c);
  };
  o.mse_floor = at(o.k_floor);
  o.mse_ceil = at(o.k_ceil);
  return o;
}

enum class NoiseKind { gaussian, uniform };

struct TradeoffReport {
  double closed_form = 0.0;
  double monte_carlo = 0.0;
  double stderr_ = 0.0;
  std::int64_t trials = 0;
};

namespace detail {

inline constexpr std::int64_t kTrialChunk = 8192;

struct ChunkSums {
  double sum = 0.0;
  double sum_sq = 0.0;
};

template <class Draw>
ChunkSums simulate_chunk(const TradeoffSetting& s, std::int64_t trials, std::mt19937_64& rng, Draw&& draw) {
  // Isotropic noise with total variance sigma2 (sigma2 / d per coordinate).
  const double dd = static_cast<double>(s.d);
  const double sd = std::sqrt(s.sigma2 / dd), sd_tilde = std::sqrt(s.sigma2_tilde / dd);
  const double shift = s.beta * std::sqrt(s.delta2);  // bias along the first coordinate
  const double total = static_cast<double>(s.n + s.k);
  std::vector<double> acc(static_cast<std::size_t>(s.d));
  ChunkSums out;
  for (std::int64_t t = 0; t < trials; ++t) {
    std::fill(acc.begin(), acc.end(), 0.0);
    // theta = 0 without loss of generality; the estimator error is the pooled mean.
    for (std::int64_t j = 0; j < s.n; ++j)
      for (auto& a : acc) a += sd * draw(rng);
    for (std::int64_t l = 0; l < s.k; ++l) {
      acc[0] += shift;
      for (auto& a : acc) a += sd_tilde * draw(rng);
    }
    double se = 0.0;
    for (double a : acc) se += (a / total) * (a / total);
    out.sum += se;
    out.sum_sq += se * se;
  }
  return out;
}

}  // namespace detail

/// Simulates x = theta + eps and x~ = theta + beta Delta + eps~ in d
/// dimensions and reports the squared error norm of the pooled mean, with
/// E|eps|^2 = sigma2 and Delta along the first axis. For d = 1 this is the
/// plain scalar estimator. Trials are split into fixed chunks seeded from
/// (seed, chunk index), so the estimate does not depend on the number of
/// workers.
inline TradeoffReport mse_monte_carlo(const TradeoffSetting& s, std::int64_t trials, std::uint64_t seed,
                                      NoiseKind noise = NoiseKind::gaussian, unsigned workers = 1) {
  validate(s);
  if (trials < 2) throw ConfigError("Monte Carlo needs at least 2 trials");
  const std::int64_t chunks = (trials + detail::kTrialChunk - 1) / detail::kTrialChunk;
  std::vector<detail::ChunkSums> sums(static_cast<std::size_t>(chunks));
  auto run_chunk = [&](std::int64_t c) {
    std::seed_seq sseq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
    std::mt19937_64 rng(sseq);
    const std::int64_t count = std::min(detail::kTrialChunk, trials - c * detail::kTrialChunk);
    if (noise == NoiseKind::gaussian) {
      std::normal_distribution<double> nd(0.0, 1.0);
      sums[static_cast<std::size_t>(c)] = detail::simulate_chunk(s, count, rng, [&](std::mt19937_64& g) { return nd(g); });
    } else {
      std::uniform_real_distribution<double> ud(-std::sqrt(3.0), std::sqrt(3.0));  // unit variance
      sums[static_cast<std::size_t>(c)] = detail::simulate_chunk(s, count, rng, [&](std::mt19937_64& g) { return ud(g); });
    }
  };
  workers = std::max(1u, workers);
  if (workers == 1) {
    for (std::int64_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::int64_t c = w; c < chunks; c += workers) run_chunk(c);
      });
    for (auto& t : pool) t.join();
  }
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& c : sums) {
    sum += c.sum;
    sum_sq += c.sum_sq;
  }
  const double m = static_cast<double>(trials);
  TradeoffReport r;
  r.trials = trials;
  r.closed_form = mse_closed_form(s);
  r.monte_carlo = sum / m;
  const double var = std::max(0.0, (sum_sq - m * r.monte_carlo * r.monte_carlo) / (m - 1.0));
  r.stderr_ = std::sqrt(var / m);
  return r;
}

struct TradeoffRow {
  TradeoffSetting setting;
  TradeoffReport report;
  std::optional<double> t_star;
  std::optional<IntegerOptimum> k_opt;
};

struct SweepOptions {
  std::int64_t trials = 100000;
  std::uint64_t seed = 0;
  NoiseKind noise = NoiseKind::gaussian;
  unsigned workers = 1;
};

/// One row per setting. Each setting gets its own seed derived from the
/// master seed and its position.
inline std::vector<TradeoffRow> sweep(const std::vector<TradeoffSetting>& grid, const SweepOptions& opt = {}) {
  if (grid.empty()) throw ConfigError("trade-off grid is empty");
  std::vector<TradeoffRow> rows;
  for (std::size_t p = 0; p < grid.size(); ++p) {
    TradeoffRow row;
    row.setting = grid[p];
    row.report = mse_monte_carlo(grid[p], opt.trials, opt.seed + 0x9E3779B97F4A7C15ull * (p + 1), opt.noise, opt.workers);
    if (grid[p].sigma2 == grid[p].sigma2_tilde) {
      row.t_star = optimal_fraction(grid[p]);
      row.k_opt = integer_optimum(grid[p]);
    }
    rows.push_back(row);
  }
  return rows;
}

/// Cartesian product of the listed values. Every key accepts a number or a
/// list of numbers; missing keys take the defaults of TradeoffSetting.
inline std::vector<TradeoffSetting> grid_from_json(const nlohmann::json& j) {
  auto values = [&](const char* key, double dflt) {
    std::vector<double> out;
    if (!j.contains(key)) return std::vector<double>{dflt};
    const auto& v = j.at(key);
    if (v.is_number()) return std::vector<double>{v.get<double>()};
    if (!v.is_array()) throw ConfigError(std::string("grid key '") + key + "' must be a number or a list");
    for (const auto& x : v) {
      if (!x.is_number()) throw ConfigError(std::string("grid key '") + key + "' has a non-numeric entry");
      out.push_back(x.get<double>());
    }
    if (out.empty()) throw ConfigError(std::string("grid key '") + key + "' is an empty range");
    return out;
  };
  TradeoffSetting base;
  auto ns = values("n", 1), ks = values("k", 0), s2 = values("sigma2", 1.0), st2 = values("sigma2_tilde", -1.0),
       d2 = values("delta2", 0.0), bs = values("beta", 1.0), ds = values("d", static_cast<double>(base.d));
  std::vector<TradeoffSetting> grid;
  for (double n : ns)
    for (double k : ks)
      for (double sigma2 : s2)
        for (double st : st2)
          for (double delta2 : d2)
            for (double beta : bs)
              for (double d : ds) {
                TradeoffSetting s{static_cast<std::int64_t>(n), static_cast<std::int64_t>(k), sigma2,
                                  st < 0 ? sigma2 : st, delta2, beta, static_cast<std::int64_t>(d)};
                validate(s);
                grid.push_back(s);
              }
  return grid;
}

/// n in {2,5,20} x k in {0,2,10} x delta2 in {0,0.1,0.4}, sigma2 = 1, beta = 1.
inline std::vector<TradeoffSetting> default_grid() {
  return grid_from_json({{"n", {2, 5, 20}}, {"k", {0, 2, 10}}, {"delta2", {0.0, 0.1, 0.4}}});
}

inline const char* kTradeoffColumns =
    "n,k,sigma2,sigma2_tilde,delta2,beta,d,closed_form,monte_carlo,stderr,z,t_star,k_floor,k_ceil";

inline std::string format_double(double x) {
  std::ostringstream os;
  os.precision(10);
  os << x;
  return os.str();
}

inline double z_score(const TradeoffReport& r) {
  if (r.stderr_ == 0.0) return r.monte_carlo == r.closed_form ? 0.0 : INFINITY;
  return (r.monte_carlo - r.closed_form) / r.stderr_;
}

inline void write_tradeoff_csv(std::ostream& out, const std::vector<TradeoffRow>& rows) {
  out << kTradeoffColumns << '\n';
  for (const auto& r : rows) {
    const auto& s = r.setting;
    out << s.n << ',' << s.k << ',' << format_double(s.sigma2) << ',' << format_double(s.sigma2_tilde) << ','
        << format_double(s.delta2) << ',' << format_double(s.beta) << ',' << s.d << ','
        << format_double(r.report.closed_form) << ',' << format_double(r.report.monte_carlo) << ','
        << format_double(r.report.stderr_) << ',' << format_double(z_score(r.report)) << ','
        << (r.t_star ? format_double(*r.t_star) : "") << ',' << (r.k_opt ? std::to_string(r.k_opt->k_floor) : "")
        << ',' << (r.k_opt ? std::to_string(r.k_opt->k_ceil) : "") << '\n';
  }
}

inline nlohmann::json to_json(const TradeoffRow& r) {
  const auto& s = r.setting;
  nlohmann::json j{{"n", s.n},
                   {"k", s.k},
                   {"sigma2", s.sigma2},
                   {"sigma2_tilde", s.sigma2_tilde},
                   {"delta2", s.delta2},
                   {"beta", s.beta},
                   {"d", s.d},
                   {"closed_form", r.report.closed_form},
                   {"monte_carlo", r.report.monte_carlo},
                   {"stderr", r.report.stderr_},
                   {"trials", r.report.trials},
                   {"t_star", r.t_star ? nlohmann::json(*r.t_star) : nlohmann::json()},
                   {"k_floor", r.k_opt ? nlohmann::json(r.k_opt->k_floor) : nlohmann::json()},
                   {"k_ceil", r.k_opt ? nlohmann::json(r.k_opt->k_ceil) : nlohmann::json()}};
  return j;
}

}  // namespace spgen
