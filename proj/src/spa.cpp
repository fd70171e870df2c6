#include "rulespa/spa.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>

#include "rulespa/error.hpp"
#include "rulespa/parallel.hpp"

namespace rulespa {

std::string_view to_string(Recentering r) noexcept {
  switch (r) {
    case Recentering::Lower: return "lower";
    case Recentering::Consistent: return "consistent";
    case Recentering::Upper: return "upper";
  }
  return "unknown";
}

void BootstrapParams::validate() const {
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidArgument, "q must lie in (0, 1]");
  if (replicates < 1) throw Error(ErrorCode::InvalidArgument, "need at least one bootstrap replicate");
}

std::vector<std::size_t> stationary_bootstrap_indices(std::size_t first, std::size_t last, double q, Rng& rng) {
  if (first > last) throw Error(ErrorCode::InvalidArgument, "bootstrap range has first > last");
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidArgument, "q must lie in (0, 1]");
  const std::size_t n = last - first + 1;
  std::vector<std::size_t> idx(n);
  std::size_t i = uniform_index(rng, first, last);
  idx[0] = i;
  for (std::size_t t = 1; t < n; ++t) {
    if (uniform01(rng) < q) {
      i = uniform_index(rng, first, last);
    } else {
      i = (i + 1 > last) ? first : i + 1;
    }
    idx[t] = i;
  }
  return idx;
}

double kernel_weight(std::size_t n, std::size_t lag, double q) {
  if (n == 0 || lag > n) throw Error(ErrorCode::InvalidArgument, "kernel lag outside [0, n]");
  const double nd = static_cast<double>(n);
  const double t = static_cast<double>(lag);
  return (nd - t) / nd * std::pow(1.0 - q, t) + t / nd * std::pow(1.0 - q, nd - t);
}

// ---------------------------------------------------------------------------
// Autocovariances

namespace {

struct FftPlans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
};

// FFTW planning is not thread-safe; execution with the new-array interface is.
class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [size, p] : plans_) {
      fftw_destroy_plan(p.forward);
      fftw_destroy_plan(p.backward);
    }
  }

  FftPlans get(std::size_t m) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find(m);
    if (it != plans_.end()) return it->second;
    double* in = fftw_alloc_real(m);
    fftw_complex* out = fftw_alloc_complex(m / 2 + 1);
    const int size = static_cast<int>(m);
    FftPlans p{fftw_plan_dft_r2c_1d(size, in, out, FFTW_ESTIMATE),
               fftw_plan_dft_c2r_1d(size, out, in, FFTW_ESTIMATE)};
    fftw_free(in);
    fftw_free(out);
    plans_.emplace(m, p);
    return p;
  }

 private:
  std::mutex mutex_;
  std::map<std::size_t, FftPlans> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

struct FftwDeleter {
  void operator()(void* p) const noexcept { fftw_free(p); }
};

}  // namespace

std::vector<double> autocovariances(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "autocovariances of an empty series");
  const double nd = static_cast<double>(n);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / nd;
  std::vector<double> gamma(n, 0.0);
  double g0 = 0.0;
  for (double v : x) g0 += (v - mean) * (v - mean);
  gamma[0] = g0 / nd;
  if (n == 1) return gamma;

  std::size_t m = 1;
  while (m < 2 * n) m <<= 1;
  const auto plans = plan_cache().get(m);
  std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(m));
  std::unique_ptr<fftw_complex, FftwDeleter> spec(fftw_alloc_complex(m / 2 + 1));
  double* buf = in.get();
  for (std::size_t j = 0; j < n; ++j) buf[j] = x[j] - mean;
  std::fill(buf + n, buf + m, 0.0);
  fftw_execute_dft_r2c(plans.forward, buf, spec.get());
  for (std::size_t j = 0; j < m / 2 + 1; ++j) {
    auto& c = spec.get()[j];
    c[0] = c[0] * c[0] + c[1] * c[1];
    c[1] = 0.0;
  }
  fftw_execute_dft_c2r(plans.backward, spec.get(), buf);
  const double scale = 1.0 / (static_cast<double>(m) * nd);
  for (std::size_t t = 1; t < n; ++t) gamma[t] = buf[t] * scale;
  return gamma;
}

namespace {

std::vector<double> kernel_weights(std::size_t n, double q) {
  std::vector<double> w(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) w[t] = kernel_weight(n, t, q);
  return w;
}

double weighted_variance(std::span<const double> gamma, std::span<const double> weights, double floor) {
  double s = 0.0;
  for (std::size_t t = 1; t < gamma.size(); ++t) s += weights[t] * gamma[t];
  const double omega2 = gamma[0] + 2.0 * s;
  const double minimum = floor * gamma[0];
  return omega2 > minimum ? omega2 : minimum;
}

}  // namespace

std::vector<double> long_run_variances(std::span<const double> column, std::span<const double> qs, double floor) {
  if (column.size() < 2) throw Error(ErrorCode::InvalidArgument, "long-run variance needs n >= 2");
  for (double q : qs) {
    if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidArgument, "q must lie in (0, 1]");
  }
  const auto gamma = autocovariances(column);
  std::vector<double> out(qs.size(), 0.0);
  if (!(gamma[0] > 0.0)) return out;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    out[i] = weighted_variance(gamma, kernel_weights(column.size(), qs[i]), floor);
  }
  return out;
}

double long_run_variance(std::span<const double> column, double q, double floor) {
  const double qs[] = {q};
  return long_run_variances(column, qs, floor).front();
}

// ---------------------------------------------------------------------------
// Statistics

namespace {

double log_log_threshold(std::size_t n) {
  if (n < 3) throw Error(ErrorCode::InvalidArgument, "recentering needs n >= 3");
  return std::sqrt(2.0 * std::log(std::log(static_cast<double>(n))));
}

std::vector<std::uint8_t> active_mask(std::size_t l, std::span<const double> omegas,
                                      std::span<const std::size_t> excluded) {
  std::vector<std::uint8_t> active(l, 1);
  for (std::size_t k = 0; k < l; ++k) {
    if (!(omegas[k] > 0.0)) active[k] = 0;
  }
  for (std::size_t k : excluded) {
    if (k >= l) throw Error(ErrorCode::OutOfRange, "excluded column index outside matrix");
    active[k] = 0;
  }
  return active;
}

inline double recenter_with(double mean, double omega, double sqrt_n, double threshold, Recentering v) {
  switch (v) {
    case Recentering::Lower: return mean > 0.0 ? mean : 0.0;
    case Recentering::Upper: return mean;
    case Recentering::Consistent: return sqrt_n * mean >= -omega * threshold ? mean : 0.0;
  }
  return mean;
}

}  // namespace

double spa_statistic(std::span<const double> means, std::span<const double> omegas, std::size_t n,
                     std::span<const std::size_t> excluded) {
  if (means.size() != omegas.size()) throw Error(ErrorCode::InvalidArgument, "means and omegas differ in length");
  const auto active = active_mask(means.size(), omegas, excluded);
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  double best = 0.0;
  for (std::size_t k = 0; k < means.size(); ++k) {
    if (active[k]) best = std::max(best, sqrt_n * means[k] / omegas[k]);
  }
  return best;
}

double recenter(double mean, double omega, std::size_t n, Recentering variant) {
  const double threshold = log_log_threshold(n);
  return recenter_with(mean, omega, std::sqrt(static_cast<double>(n)), threshold, variant);
}

// ---------------------------------------------------------------------------
// Replicate engine

namespace {

struct Run {
  std::size_t start;
  std::size_t length;
};

std::vector<Run> to_runs(std::span<const std::size_t> idx, std::size_t n) {
  std::vector<Run> runs;
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] >= n) {
      throw Error(ErrorCode::OutOfRange, "bootstrap index " + std::to_string(idx[t]) + " outside [0, " +
                                             std::to_string(n - 1) + "]");
    }
    if (t > 0 && idx[t] == idx[t - 1] + 1) {
      ++runs.back().length;
    } else {
      runs.push_back({idx[t], 1});
    }
  }
  return runs;
}

// Row-major (n + 1) x l cumulative sums; row t holds sums over days < t.
class PrefixSums {
 public:
  explicit PrefixSums(const PerformanceMatrix& m) : n_(m.days()), l_(m.rules()), data_((n_ + 1) * l_, 0.0) {
    for (std::size_t k = 0; k < l_; ++k) {
      const auto col = m.column(k);
      double acc = 0.0;
      for (std::size_t t = 0; t < n_; ++t) {
        acc += col[t];
        data_[(t + 1) * l_ + k] = acc;
      }
    }
  }

  [[nodiscard]] std::size_t days() const noexcept { return n_; }
  [[nodiscard]] std::size_t rules() const noexcept { return l_; }
  [[nodiscard]] const double* row(std::size_t t) const noexcept { return data_.data() + t * l_; }

  /// Resampled column sums for the given runs.
  void resampled_sums(std::span<const Run> runs, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    double* acc = out.data();
    for (const Run& r : runs) {
      const double* a = row(r.start);
      const double* b = row(r.start + r.length);
      for (std::size_t k = 0; k < l_; ++k) acc[k] += b[k] - a[k];
    }
  }

 private:
  std::size_t n_;
  std::size_t l_;
  std::vector<double> data_;
};

std::vector<double> column_means(const PrefixSums& prefix) {
  std::vector<double> means(prefix.rules());
  const double* last = prefix.row(prefix.days());
  for (std::size_t k = 0; k < prefix.rules(); ++k) means[k] = last[k] / static_cast<double>(prefix.days());
  return means;
}

std::vector<std::size_t> flagged_columns(const PerformanceMatrix& m) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < m.rules(); ++k) {
    if (m.degenerate(k)) out.push_back(k);
  }
  return out;
}

// Per q: replicates -> for each checkpoint and recentering, the share of
// replicate statistics strictly above the observed one.
std::vector<SpaResult> run_engine(const PrefixSums& prefix, std::span<const double> means,
                                  std::span<const double> omegas, std::span<const std::uint8_t> active,
                                  const BootstrapParams& params, std::span<const std::size_t> checkpoints,
                                  unsigned workers) {
  const std::size_t n = prefix.days();
  const std::size_t l = prefix.rules();
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  const double threshold = log_log_threshold(n);
  const std::size_t nc = checkpoints.size();

  std::array<std::vector<double>, 3> g;
  for (std::size_t v = 0; v < 3; ++v) {
    g[v].resize(l);
    for (std::size_t k = 0; k < l; ++k) {
      g[v][k] = recenter_with(means[k], omegas[k], sqrt_n, threshold, kRecenterings[v]);
    }
  }

  // Observed statistic at each checkpoint.
  std::vector<double> observed(nc, 0.0);
  {
    double best = 0.0;
    std::size_t c = 0;
    for (std::size_t k = 0; k < l && c < nc; ++k) {
      if (active[k]) best = std::max(best, sqrt_n * means[k] / omegas[k]);
      while (c < nc && checkpoints[c] == k + 1) observed[c++] = best;
    }
  }

  const std::size_t B = params.replicates;
  // stats[(b * nc + c) * 3 + v]
  std::vector<double> stats(B * nc * 3, 0.0);
  const unsigned threads = static_cast<unsigned>(std::min<std::size_t>(resolve_workers(workers), B));
  std::vector<std::vector<double>> scratch(threads, std::vector<double>(l));
  parallel_for(B, threads, [&](unsigned w, std::size_t b) {
    Rng rng(replicate_seed(params.seed, params.q, b));
    const auto idx = stationary_bootstrap_indices(0, n - 1, params.q, rng);
    const auto runs = to_runs(idx, n);
    auto& sums = scratch[w];
    prefix.resampled_sums(runs, sums);
    std::array<double, 3> best = {0.0, 0.0, 0.0};
    std::size_t c = 0;
    for (std::size_t k = 0; k < l && c < nc; ++k) {
      if (active[k]) {
        const double resampled_mean = sums[k] / static_cast<double>(n);
        for (std::size_t v = 0; v < 3; ++v) {
          best[v] = std::max(best[v], sqrt_n * (resampled_mean - g[v][k]) / omegas[k]);
        }
      }
      while (c < nc && checkpoints[c] == k + 1) {
        for (std::size_t v = 0; v < 3; ++v) stats[(b * nc + c) * 3 + v] = best[v];
        ++c;
      }
    }
  });

  std::vector<SpaResult> out(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    std::array<std::size_t, 3> exceed = {0, 0, 0};
    bool all_zero = true;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t v = 0; v < 3; ++v) {
        const double s = stats[(b * nc + c) * 3 + v];
        if (s > observed[c]) ++exceed[v];
        if (s != 0.0) all_zero = false;
      }
    }
    SpaResult& r = out[c];
    r.q = params.q;
    r.statistic = observed[c];
    r.p_lower = static_cast<double>(exceed[0]) / static_cast<double>(B);
    r.p_consistent = static_cast<double>(exceed[1]) / static_cast<double>(B);
    r.p_upper = static_cast<double>(exceed[2]) / static_cast<double>(B);
    r.replicates = B;
    r.seed = params.seed;
    r.days = n;
    const std::size_t cols = checkpoints[c];
    r.omegas.assign(omegas.begin(), omegas.begin() + static_cast<std::ptrdiff_t>(cols));
    bool any_active = false;
    for (std::size_t k = 0; k < cols; ++k) {
      if (active[k]) {
        any_active = true;
      } else {
        r.excluded.push_back(k);
        r.omegas[k] = 0.0;
      }
    }
    r.degenerate = !any_active || (observed[c] == 0.0 && all_zero);
  }
  return out;
}

void check_matrix(const PerformanceMatrix& m) {
  if (m.rules() == 0) throw Error(ErrorCode::InvalidArgument, "performance matrix has no columns");
  if (m.days() < 3) throw Error(ErrorCode::InvalidArgument, "SPA test needs at least 3 scored days");
}

std::vector<double> omegas_for(const PerformanceMatrix& m, double q, double floor, unsigned workers) {
  std::vector<double> out(m.rules());
  parallel_for(m.rules(), workers, [&](unsigned, std::size_t k) {
    out[k] = std::sqrt(long_run_variance(m.column(k), q, floor));
  });
  return out;
}

}  // namespace

double bootstrap_statistic(const PerformanceMatrix& m, std::span<const std::size_t> indices,
                           std::span<const double> means, std::span<const double> omegas, Recentering variant,
                           std::span<const std::size_t> excluded) {
  check_matrix(m);
  if (means.size() != m.rules() || omegas.size() != m.rules()) {
    throw Error(ErrorCode::InvalidArgument, "means/omegas do not match the matrix width");
  }
  const std::size_t n = m.days();
  if (indices.size() != n) throw Error(ErrorCode::InvalidArgument, "index sequence length differs from n");
  const auto runs = to_runs(indices, n);
  const PrefixSums prefix(m);
  std::vector<double> sums(m.rules());
  prefix.resampled_sums(runs, sums);
  const auto active = active_mask(m.rules(), omegas, excluded);
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  const double threshold = log_log_threshold(n);
  double best = 0.0;
  for (std::size_t k = 0; k < m.rules(); ++k) {
    if (!active[k]) continue;
    const double z = sums[k] / static_cast<double>(n) - recenter_with(means[k], omegas[k], sqrt_n, threshold, variant);
    best = std::max(best, sqrt_n * z / omegas[k]);
  }
  return best;
}

std::vector<CheckpointResult> spa_checkpoints(const PerformanceMatrix& m, const BootstrapParams& params,
                                              std::span<const std::size_t> checkpoints, const SpaOptions& options) {
  params.validate();
  check_matrix(m);
  if (checkpoints.empty()) throw Error(ErrorCode::InvalidArgument, "no checkpoints");
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    if (checkpoints[i] == 0 || checkpoints[i] > m.rules()) {
      throw Error(ErrorCode::OutOfRange, "checkpoint " + std::to_string(checkpoints[i]) + " outside [1, " +
                                             std::to_string(m.rules()) + "]");
    }
    if (i > 0 && checkpoints[i] <= checkpoints[i - 1]) {
      throw Error(ErrorCode::InvalidArgument, "checkpoints must be strictly increasing");
    }
  }
  const PrefixSums prefix(m);
  const auto means = column_means(prefix);
  const auto omegas = omegas_for(m, params.q, options.variance_floor, options.workers);
  const auto flagged = flagged_columns(m);
  const auto active = active_mask(m.rules(), omegas, flagged);
  auto results = run_engine(prefix, means, omegas, active, params, checkpoints, options.workers);
  std::vector<CheckpointResult> out(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) out[i] = {checkpoints[i], std::move(results[i])};
  return out;
}

SpaResult spa_pvalue(const PerformanceMatrix& m, const BootstrapParams& params, const SpaOptions& options) {
  const std::size_t all[] = {m.rules()};
  return std::move(spa_checkpoints(m, params, all, options).front().result);
}

std::vector<SpaResult> spa_sweep(const PerformanceMatrix& m, std::span<const double> q_grid, std::size_t replicates,
                                 std::uint64_t seed, const SpaOptions& options) {
  check_matrix(m);
  if (q_grid.empty()) throw Error(ErrorCode::InvalidArgument, "empty q grid");
  for (double q : q_grid) BootstrapParams{q, replicates, seed}.validate();

  const PrefixSums prefix(m);
  const auto means = column_means(prefix);
  const auto flagged = flagged_columns(m);
  // omegas[k * |Q| + i], one autocovariance pass per column.
  const std::size_t nq = q_grid.size();
  std::vector<double> all_omegas(m.rules() * nq);
  parallel_for(m.rules(), options.workers, [&](unsigned, std::size_t k) {
    const auto v = long_run_variances(m.column(k), q_grid, options.variance_floor);
    for (std::size_t i = 0; i < nq; ++i) all_omegas[k * nq + i] = std::sqrt(v[i]);
  });

  std::vector<SpaResult> out;
  out.reserve(nq);
  const std::size_t all[] = {m.rules()};
  for (std::size_t i = 0; i < nq; ++i) {
    std::vector<double> omegas(m.rules());
    for (std::size_t k = 0; k < m.rules(); ++k) omegas[k] = all_omegas[k * nq + i];
    const auto active = active_mask(m.rules(), omegas, flagged);
    const BootstrapParams params{q_grid[i], replicates, seed};
    out.push_back(std::move(run_engine(prefix, means, omegas, active, params, all, options.workers).front()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output

void write_spa_csv(std::span<const SpaResult> results, std::ostream& out) {
  out << "q,T_l,p_lower,p_consistent,p_upper,B,seed\n";
  out << std::setprecision(10);
  for (const auto& r : results) {
    out << r.q << ',' << r.statistic << ',' << r.p_lower << ',' << r.p_consistent << ',' << r.p_upper << ','
        << r.replicates << ',' << r.seed << '\n';
  }
}

void write_spa_json(std::span<const SpaResult> results, std::ostream& out) {
  out << std::setprecision(10);
  for (const auto& r : results) {
    out << "{\"q\":" << r.q << ",\"T_l\":" << r.statistic << ",\"p_lower\":" << r.p_lower
        << ",\"p_consistent\":" << r.p_consistent << ",\"p_upper\":" << r.p_upper << ",\"B\":" << r.replicates
        << ",\"seed\":" << r.seed << "}\n";
  }
}

}  // namespace rulespa
