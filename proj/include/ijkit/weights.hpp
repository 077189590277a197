#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ijkit/core.hpp"
#include "ijkit/ij.hpp"
#include "ijkit/random.hpp"

namespace ijkit {

/// C(n, k), or nullopt if it does not fit in 64 bits.
inline std::optional<std::uint64_t> binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;
    if (r > std::numeric_limits<std::uint64_t>::max()) return std::nullopt;
  }
  return static_cast<std::uint64_t>(r);
}

namespace detail {

/// The k-subset of [0, n) with lexicographic rank `rank`.
inline std::vector<std::size_t> unrank_combination(std::uint64_t n, std::uint64_t k,
                                                   std::uint64_t rank) {
  std::vector<std::size_t> out;
  out.reserve(k);
  std::uint64_t next = 0;
  for (std::uint64_t slot = 0; slot < k; ++slot) {
    for (;; ++next) {
      // subsets whose element at `slot` is `next`
      const std::uint64_t count = *binomial(n - next - 1, k - slot - 1);
      if (rank < count) break;
      rank -= count;
    }
    out.push_back(static_cast<std::size_t>(next));
    ++next;
  }
  return out;
}

}  // namespace detail

/// Leave-k-out weight vectors (k zeros, ones elsewhere).
///
/// Without a limit, every k-subset is produced in lexicographic order of
/// the sorted left-out indices. With a limit smaller than C(n, k), `limit`
/// distinct subsets are drawn uniformly without replacement (Floyd's
/// algorithm over subset ranks) and produced in lexicographic order.
class LeaveKOut {
 public:
  LeaveKOut(std::size_t n, std::size_t k, std::optional<std::size_t> limit = std::nullopt,
            std::uint64_t seed = 0)
      : n_(n), k_(k) {
    if (k < 1 || k > n) throw InputError("leave_k_out: need 1 <= k <= n");
    const auto total = binomial(n, k);
    if (limit && (!total || *limit < *total)) {
      sampled_ = true;
      sample(*limit, total, seed);
    } else {
      current_.resize(k);
      for (std::size_t i = 0; i < k; ++i) current_[i] = i;
      total_ = *total;
    }
  }

  /// Total number of vectors this generator yields.
  std::uint64_t count() const { return sampled_ ? samples_.size() : total_; }

  std::optional<WeightVector> next() {
    if (sampled_) {
      if (pos_ >= samples_.size()) return std::nullopt;
      return WeightVector::leave_out(n_, samples_[pos_++]);
    }
    if (done_) return std::nullopt;
    WeightVector w = WeightVector::leave_out(n_, current_);
    advance();
    return w;
  }

  std::vector<WeightVector> collect() {
    std::vector<WeightVector> out;
    while (auto w = next()) out.push_back(std::move(*w));
    return out;
  }

 private:
  void advance() {
    // rightmost index that can still move
    std::size_t i = k_;
    while (i > 0 && current_[i - 1] == n_ - k_ + (i - 1)) --i;
    if (i == 0) {
      done_ = true;
      return;
    }
    ++current_[i - 1];
    for (std::size_t j = i; j < k_; ++j) current_[j] = current_[j - 1] + 1;
  }

  void sample(std::size_t limit, std::optional<std::uint64_t> total, std::uint64_t seed) {
    Rng rng(seed);
    if (total) {
      std::set<std::uint64_t> ranks;
      for (std::uint64_t j = *total - limit; j < *total; ++j) {
        const std::uint64_t t = rng.uniform_index(j + 1);
        if (!ranks.insert(t).second) ranks.insert(j);
      }
      for (std::uint64_t r : ranks) samples_.push_back(detail::unrank_combination(n_, k_, r));
      return;
    }
    // C(n, k) overflows: draw subsets with Floyd's algorithm and reject
    // repeats; collisions are astronomically unlikely at this size.
    std::set<std::vector<std::size_t>> seen;
    while (seen.size() < limit) {
      std::set<std::size_t> subset;
      for (std::size_t j = n_ - k_; j < n_; ++j) {
        const auto t = static_cast<std::size_t>(rng.uniform_index(j + 1));
        if (!subset.insert(t).second) subset.insert(j);
      }
      seen.insert(std::vector<std::size_t>(subset.begin(), subset.end()));
    }
    samples_.assign(seen.begin(), seen.end());
  }

  std::size_t n_, k_;
  bool sampled_ = false;
  bool done_ = false;
  std::uint64_t total_ = 0;
  std::vector<std::size_t> current_;
  std::vector<std::vector<std::size_t>> samples_;
  std::size_t pos_ = 0;
};

inline std::vector<WeightVector> leave_k_out(std::size_t n, std::size_t k,
                                             std::optional<std::size_t> limit = std::nullopt,
                                             std::uint64_t seed = 0) {
  return LeaveKOut(n, k, limit, seed).collect();
}

/// B draws of Multinomial(N, 1/N) counts.
inline std::vector<WeightVector> bootstrap(std::size_t n, std::size_t b, std::uint64_t seed) {
  if (b < 1) throw InputError("bootstrap: need b >= 1");
  if (n < 1) throw InputError("bootstrap: need n >= 1");
  Rng rng(seed);
  std::vector<WeightVector> out;
  out.reserve(b);
  Vector counts(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < b; ++r) {
    counts.setZero();
    for (std::size_t i = 0; i < n; ++i) counts[static_cast<Eigen::Index>(rng.uniform_index(n))] += 1.0;
    out.push_back(WeightVector::from_dense(counts));
  }
  return out;
}

/// All mass N on the datum whose g_n(theta1) has the largest L1 norm
/// (smallest index on ties), zero elsewhere.
inline WeightVector adversarial(const GradientCache& cache) {
  const std::size_t n = cache.n_points();
  if (n == 0) throw InputError("adversarial: empty cache");
  std::size_t best = 0;
  double best_norm = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = cache.g_at_base.row(static_cast<Eigen::Index>(i)).lpNorm<1>();
    if (v > best_norm) {
      best_norm = v;
      best = i;
    }
  }
  Vector dense = Vector::Zero(static_cast<Eigen::Index>(n));
  dense[static_cast<Eigen::Index>(best)] = static_cast<double>(n);
  return WeightVector::from_dense(dense);
}

// ---------------------------------------------------------------------------

enum class FamilyKind { leave_k_out, bootstrap, custom, adversarial };

inline std::string_view to_string(FamilyKind k) {
  switch (k) {
    case FamilyKind::leave_k_out: return "leave_k_out";
    case FamilyKind::bootstrap: return "bootstrap";
    case FamilyKind::custom: return "custom";
    case FamilyKind::adversarial: return "adversarial";
  }
  return "unknown";
}

inline FamilyKind parse_family_kind(std::string_view s) {
  if (s == "leave_k_out" || s == "lko" || s == "loo") return FamilyKind::leave_k_out;
  if (s == "bootstrap") return FamilyKind::bootstrap;
  if (s == "custom") return FamilyKind::custom;
  if (s == "adversarial") return FamilyKind::adversarial;
  throw InputError("unknown weight family '" + std::string(s) + "'");
}

/// Declarative description of a weight set, as given on the command line.
struct WeightFamily {
  FamilyKind kind = FamilyKind::leave_k_out;
  std::size_t k = 1;      // leave_k_out
  std::size_t b = 100;    // bootstrap
  std::optional<std::size_t> limit;
  std::uint64_t seed = 0;
  std::vector<WeightVector> custom;
};

/// Materializes the family for a dataset of size n. The adversarial family
/// needs the gradient cache at the base fit.
inline std::vector<WeightVector> materialize(const WeightFamily& fam, std::size_t n,
                                             const GradientCache* cache = nullptr) {
  switch (fam.kind) {
    case FamilyKind::leave_k_out: return leave_k_out(n, fam.k, fam.limit, fam.seed);
    case FamilyKind::bootstrap: return bootstrap(n, fam.b, fam.seed);
    case FamilyKind::custom:
      for (const auto& w : fam.custom)
        if (w.size() != n) throw InputError("custom weight vector has wrong length");
      return fam.custom;
    case FamilyKind::adversarial:
      if (!cache) throw InputError("adversarial family requires the base-fit gradients");
      return {adversarial(*cache)};
  }
  return {};
}

}  // namespace ijkit
