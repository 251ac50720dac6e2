#pragma once

// Pairwise-distance (Kolchinsky) bounds on I(X, Z) and I(Z, Y).
//
// For a batch Z of N_B rows and K_ij = exp(-|Z_i - Z_j|^2 / (c sigma^2)):
//
//   I(X, Z) <= -1/N_B sum_i log( 1/N_B sum_j K_ij )
//   I(Z, Y) <= I(X, Z) - sum_c p_c [ -1/N_c sum_{i in c} log( 1/N_c sum_{j in c} K_ij ) ]
//
// c = 2 gives the upper bound and c = 8 the lower bound. All values are in
// nats. The diagonal j = i is included in every sum.

#include "infoplane/matrix.hpp"
#include "infoplane/rng.hpp"
#include "infoplane/trace.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <tuple>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace infoplane {

enum class Bound { kUpper, kLower };

inline constexpr double kUpperKernelConstant = 2.0;
inline constexpr double kLowerKernelConstant = 8.0;

inline double kernel_constant(Bound b) { return b == Bound::kUpper ? kUpperKernelConstant : kLowerKernelConstant; }

struct MiConfig {
  double sigma2 = 0.1;
  std::int64_t max_rows = 2000;
  std::uint64_t subsample_seed = 0;
  bool stratified = true;
  // When false, the lower bound keeps c = 2 in the class-conditional term of
  // I(Z, Y) and only substitutes c = 8 in the first term. Sensitivity switch.
  bool lower_bound_uniform = true;
};

inline void validate_config(const MiConfig& cfg) {
  if (!(cfg.sigma2 > 0.0) || !std::isfinite(cfg.sigma2)) throw std::invalid_argument("sigma2 must be positive");
  if (cfg.max_rows < 2) throw std::invalid_argument("max_rows must be >= 2");
}

struct MiEstimate {
  std::uint32_t epoch = 0;
  std::uint16_t layer_index = 0;
  std::int64_t n_used = 0;
  double i_xz_upper = 0.0;
  double i_xz_lower = 0.0;
  double i_zy_upper = 0.0;
  double i_zy_lower = 0.0;

  bool operator==(const MiEstimate&) const = default;
};

// Squared Euclidean distances via |a|^2 + |b|^2 - 2<a, b> on column-centered
// rows. Negative round-off is clamped to zero and the diagonal is exactly 0.
inline Matrix pairwise_sq_distances(const Matrix& z) {
  if (!z.allFinite()) throw std::invalid_argument("pairwise distances: non-finite input");
  const Matrix centered = z.rowwise() - z.colwise().mean();
  const Vector sq = centered.rowwise().squaredNorm();
  Matrix d(z.rows(), z.rows());
  d.noalias() = -2.0 * centered * centered.transpose();
  d.colwise() += sq;
  d.rowwise() += sq.transpose();
  d = d.cwiseMax(0.0);
  d.diagonal().setZero();
  return d;
}

// L_i = log( 1/N_B sum_j K_ij ). The largest exponent is the diagonal's 0,
// so the max-shifted log-sum-exp reduces to a plain sum of terms <= 1.
inline Vector kernel_logsums_from_distances(const Matrix& sqdist, double sigma2, double c) {
  const auto n = sqdist.rows();
  const double scale = -1.0 / (c * sigma2);
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) sum += std::exp(scale * sqdist(i, j));
    out(i) = std::log(sum) - std::log(double(n));
  }
  return out;
}

inline Vector kernel_logsums(const Matrix& z, double sigma2, double c) {
  if (z.rows() < 2) throw std::invalid_argument("kernel_logsums: need at least 2 rows");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
  return kernel_logsums_from_distances(pairwise_sq_distances(z), sigma2, c);
}

struct BoundPair {
  double i_xz = 0.0;
  double i_zy = 0.0;
};

// Both bounds from one distance matrix. `c_all` is used for the first term,
// `c_class` for the class-conditional term. The class term simplifies to
// sum_c p_c H_c = -1/N sum_i log( S_i^within / N_{y_i} ).
inline BoundPair bounds_from_distances(const Matrix& sqdist, const std::vector<std::int32_t>& labels,
                                       double sigma2, double c_all, double c_class) {
  const auto n = sqdist.rows();
  if (std::int64_t(labels.size()) != n) throw std::invalid_argument("labels length != rows");
  std::int32_t num_classes = 0;
  for (auto y : labels) {
    if (y < 0) throw std::invalid_argument("label out of range: " + std::to_string(y));
    num_classes = std::max(num_classes, y + 1);
  }
  std::vector<double> class_count(std::size_t(num_classes), 0.0);
  for (auto y : labels) class_count[std::size_t(y)] += 1.0;

  const double scale_all = -1.0 / (c_all * sigma2);
  const double scale_class = -1.0 / (c_class * sigma2);
  const bool same_scale = scale_all == scale_class;
  double first = 0.0, class_term = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto yi = labels[std::size_t(i)];
    double total = 0.0, within = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double k = std::exp(scale_all * sqdist(i, j));
      total += k;
      if (labels[std::size_t(j)] == yi) within += same_scale ? k : std::exp(scale_class * sqdist(i, j));
    }
    first += std::log(total / double(n));
    class_term += std::log(within / class_count[std::size_t(yi)]);
  }
  BoundPair out;
  out.i_xz = -first / double(n);
  out.i_zy = out.i_xz - (-class_term / double(n));
  return out;
}

inline double mi_xz_bound(const Matrix& z, double sigma2, Bound bound) {
  return -kernel_logsums(z, sigma2, kernel_constant(bound)).mean();
}

inline double mi_zy_bound(const Matrix& z, const std::vector<std::int32_t>& labels, double sigma2, Bound bound,
                          bool uniform_substitution = true) {
  if (z.rows() < 2) throw std::invalid_argument("mi_zy_bound: need at least 2 rows");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
  const double c = kernel_constant(bound);
  const double c_class = uniform_substitution ? c : kUpperKernelConstant;
  return bounds_from_distances(pairwise_sq_distances(z), labels, sigma2, c, c_class).i_zy;
}

// All four bound values for one representation.
inline MiEstimate estimate_point(const Matrix& z, const std::vector<std::int32_t>& labels, const MiConfig& cfg) {
  validate_config(cfg);
  if (z.rows() < 2) throw std::invalid_argument("estimate: need at least 2 rows");
  const Matrix d = pairwise_sq_distances(z);
  const auto upper = bounds_from_distances(d, labels, cfg.sigma2, kUpperKernelConstant, kUpperKernelConstant);
  const auto lower = bounds_from_distances(d, labels, cfg.sigma2, kLowerKernelConstant,
                                           cfg.lower_bound_uniform ? kLowerKernelConstant : kUpperKernelConstant);
  MiEstimate e;
  e.n_used = z.rows();
  e.i_xz_upper = upper.i_xz;
  e.i_zy_upper = upper.i_zy;
  e.i_xz_lower = lower.i_xz;
  e.i_zy_lower = lower.i_zy;
  return e;
}

// ---------------------------------------------------------------------------
// Subsampling

// Row indices (ascending) kept for estimation. Identity when N <= max_rows.
// Stratified mode allots per-class quotas proportional to class frequency by
// largest remainder, with at least one row for every present class.
inline std::vector<std::int64_t> subsample_indices(const std::vector<std::int32_t>& labels, const MiConfig& cfg) {
  if (cfg.max_rows < 2) throw std::invalid_argument("max_rows must be >= 2");
  const auto n = std::int64_t(labels.size());
  std::vector<std::int64_t> all(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) all[std::size_t(i)] = i;
  if (n <= cfg.max_rows) return all;

  Rng rng(cfg.subsample_seed);
  std::vector<std::int64_t> picked;
  if (!cfg.stratified) {
    rng.shuffle(std::span(all));
    picked.assign(all.begin(), all.begin() + cfg.max_rows);
  } else {
    std::map<std::int32_t, std::vector<std::int64_t>> by_class;
    for (std::int64_t i = 0; i < n; ++i) by_class[labels[std::size_t(i)]].push_back(i);
    const auto budget = std::max<std::int64_t>(cfg.max_rows, std::int64_t(by_class.size()));
    struct Quota {
      std::int32_t cls;
      std::int64_t take;
      double remainder;
      std::int64_t avail;
    };
    std::vector<Quota> quotas;
    std::int64_t assigned = 0;
    for (const auto& [cls, rows] : by_class) {
      const double exact = double(budget) * double(rows.size()) / double(n);
      auto take = std::int64_t(std::floor(exact));
      quotas.push_back({cls, take, exact - double(take), std::int64_t(rows.size())});
      assigned += take;
    }
    // Guarantee presence first, then hand out the rest by largest remainder.
    for (auto& q : quotas)
      if (q.take == 0) {
        q.take = 1;
        ++assigned;
      }
    std::vector<std::size_t> order(quotas.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
    for (std::size_t k = 0; assigned < budget && k < order.size(); ++k) {
      auto& q = quotas[order[k]];
      if (q.take < q.avail) {
        ++q.take;
        ++assigned;
      }
    }
    for (std::size_t k = 0; assigned < budget; k = (k + 1) % order.size()) {
      auto& q = quotas[order[k]];
      if (q.take < q.avail) {
        ++q.take;
        ++assigned;
      }
    }
    // Trim overshoot caused by the presence guarantee from the largest quotas.
    while (assigned > budget) {
      auto it = std::max_element(quotas.begin(), quotas.end(), [](const Quota& a, const Quota& b) { return a.take < b.take; });
      if (it->take <= 1) break;
      --it->take;
      --assigned;
    }
    for (const auto& q : quotas) {
      auto rows = by_class[q.cls];
      rng.shuffle(std::span(rows));
      picked.insert(picked.end(), rows.begin(), rows.begin() + q.take);
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

inline Matrix select_rows(const ActivationChunk& c, const std::vector<std::int64_t>& rows) {
  Matrix z(std::int64_t(rows.size()), c.cols);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::uint32_t k = 0; k < c.cols; ++k) z(std::int64_t(r), k) = c.at(std::uint32_t(rows[r]), k);
  return z;
}

inline Matrix select_rows(const Matrix& m, const std::vector<std::int64_t>& rows) {
  Matrix z(std::int64_t(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) z.row(std::int64_t(r)) = m.row(rows[r]);
  return z;
}

inline std::vector<std::int32_t> select_labels(const std::vector<std::int32_t>& labels,
                                               const std::vector<std::int64_t>& rows) {
  std::vector<std::int32_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(labels[std::size_t(r)]);
  return out;
}

struct Subsample {
  Matrix z;
  std::vector<std::int32_t> labels;
};

inline Subsample subsample(const Matrix& z, const std::vector<std::int32_t>& labels, const MiConfig& cfg) {
  const auto rows = subsample_indices(labels, cfg);
  return {select_rows(z, rows), select_labels(labels, rows)};
}

// ---------------------------------------------------------------------------
// Information plane

inline unsigned default_thread_count() {
  if (const char* env = std::getenv("INFOPLANE_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return unsigned(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace detail {

// Runs fn(i) for i in [0, n) over `threads` workers.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, unsigned(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

// Estimates for a set of chunks sharing one header. The same row subset is
// used for every chunk, so layers within (and across) epochs are paired.
inline std::vector<MiEstimate> estimate_chunks(const TraceHeader& header, const std::vector<ActivationChunk>& chunks,
                                               const MiConfig& cfg, unsigned threads) {
  validate_config(cfg);
  const auto rows = subsample_indices(header.labels, cfg);
  const auto labels = select_labels(header.labels, rows);
  std::vector<MiEstimate> out(chunks.size());
  detail::parallel_for(chunks.size(), threads, [&](std::size_t k) {
    const auto& c = chunks[k];
    MiEstimate e = estimate_point(select_rows(c, rows), labels, cfg);
    e.epoch = c.epoch;
    e.layer_index = c.layer_index;
    out[k] = e;
  });
  std::sort(out.begin(), out.end(), [](const MiEstimate& a, const MiEstimate& b) {
    return std::tie(a.epoch, a.layer_index) < std::tie(b.epoch, b.layer_index);
  });
  return out;
}

inline std::vector<MiEstimate> plane_from_trace(const ActivationTrace& trace, const MiConfig& cfg,
                                                unsigned threads = default_thread_count()) {
  const auto report = validate_trace(trace);
  if (!report.ok()) throw TraceError(report.findings.front());
  return estimate_chunks(trace.header, trace.chunks, cfg, threads);
}

// Streams the trace one epoch group at a time.
inline std::vector<MiEstimate> plane_from_file(const std::filesystem::path& path, const MiConfig& cfg,
                                               unsigned threads = default_thread_count()) {
  validate_config(cfg);
  TraceReader reader(path);
  std::vector<MiEstimate> out;
  while (auto group = reader.next_epoch()) {
    auto part = estimate_chunks(reader.header(), *group, cfg, threads);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plane CSV. The `layer` column is the 1-based layer number.

inline constexpr const char* kPlaneCsvHeader = "epoch,layer,n_used,i_xz_upper,i_xz_lower,i_zy_upper,i_zy_lower";

inline void write_plane_csv(std::ostream& out, const std::vector<MiEstimate>& plane, double unit_divisor = 1.0) {
  out << kPlaneCsvHeader << '\n';
  std::ostringstream line;
  line.precision(17);
  for (const auto& e : plane) {
    line.str("");
    line << e.epoch << ',' << (e.layer_index + 1) << ',' << e.n_used << ',' << e.i_xz_upper / unit_divisor << ','
         << e.i_xz_lower / unit_divisor << ',' << e.i_zy_upper / unit_divisor << ',' << e.i_zy_lower / unit_divisor;
    out << line.str() << '\n';
  }
}

inline void write_plane_csv(const std::filesystem::path& path, const std::vector<MiEstimate>& plane,
                            double unit_divisor = 1.0) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_plane_csv(out, plane, unit_divisor);
}

inline std::vector<MiEstimate> read_plane_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open plane CSV " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty plane CSV " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kPlaneCsvHeader) throw std::runtime_error("unexpected plane CSV header in " + path.string());
  std::vector<MiEstimate> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    MiEstimate e;
    std::int64_t layer = 0;
    if (!(ss >> e.epoch >> layer >> e.n_used >> e.i_xz_upper >> e.i_xz_lower >> e.i_zy_upper >> e.i_zy_lower) ||
        layer < 1)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    e.layer_index = std::uint16_t(layer - 1);
    out.push_back(e);
  }
  if (out.empty()) throw std::runtime_error("plane CSV has no rows: " + path.string());
  return out;
}

}  // namespace infoplane
