#pragma once

// Reference implementations written independently of the library, used by
// the oracle tests and the acceptance suite. They favour obviousness and
// precision over speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_dec_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>

namespace triage::testing {

using Big = boost::multiprecision::cpp_dec_float_50;
using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

inline Big effective_number_oracle(std::int64_t n, double beta) {
  const Big b(beta);
  if (b == 0) return Big(1);
  return (Big(1) - boost::multiprecision::pow(b, static_cast<int>(n))) / (Big(1) - b);
}

/// raw = 1/EN, unit mean, clamp, unit mean again.
inline std::vector<Big> class_weights_oracle(const std::vector<std::int64_t>& counts, double beta, double w_min,
                                             double w_max) {
  const std::size_t c = counts.size();
  std::vector<Big> w(c);
  Big sum = 0;
  for (std::size_t i = 0; i < c; ++i) {
    w[i] = Big(1) / effective_number_oracle(counts[i], beta);
    sum += w[i];
  }
  for (auto& x : w) x = x * Big(c) / sum;
  sum = 0;
  for (auto& x : w) {
    if (x < Big(w_min)) x = Big(w_min);
    if (x > Big(w_max)) x = Big(w_max);
    sum += x;
  }
  for (auto& x : w) x = x * Big(c) / sum;
  return w;
}

inline long double log_sum_exp(const std::vector<long double>& z) {
  const long double m = *std::max_element(z.begin(), z.end());
  long double s = 0;
  for (long double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

/// -w_y * sum_c target_c * log p_c with target = (1-eps) onehot + eps/C.
inline long double ce_oracle(const std::vector<double>& logits, std::size_t gold, const std::vector<double>& w,
                             double eps) {
  std::vector<long double> z(logits.begin(), logits.end());
  const long double lse = log_sum_exp(z);
  const long double c = static_cast<long double>(z.size());
  long double loss = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const long double target = (i == gold ? 1.0L - eps : 0.0L) + eps / c;
    loss -= target * (z[i] - lse);
  }
  return w[gold] * loss;
}

inline long double focal_oracle(const std::vector<double>& logits, std::size_t gold, const std::vector<double>& w,
                                double gamma) {
  std::vector<long double> z(logits.begin(), logits.end());
  const long double log_p = z[gold] - log_sum_exp(z);
  return -w[gold] * std::pow(1.0L - std::exp(log_p), static_cast<long double>(gamma)) * log_p;
}

struct OracleRecord {
  std::vector<double> logits;
  std::size_t gold = 0;
};

inline long double nll_oracle(const std::vector<OracleRecord>& records, long double t) {
  long double total = 0;
  for (const auto& r : records) {
    std::vector<long double> z;
    for (double v : r.logits) z.push_back(v / t);
    total += log_sum_exp(z) - z[r.gold];
  }
  return total / static_cast<long double>(records.size());
}

/// First grid point of minimal NLL on {t_lo, t_lo + step, ...} up to t_hi.
inline double temperature_grid_oracle(const std::vector<OracleRecord>& records, double t_lo, double t_hi,
                                      double step = 1e-4) {
  const auto n = static_cast<std::int64_t>(std::floor((t_hi - t_lo) / step + 1e-9));
  double best_t = t_lo;
  long double best = nll_oracle(records, t_lo);
  for (std::int64_t k = 1; k <= n; ++k) {
    const double t = t_lo + static_cast<double>(k) * step;
    const long double v = nll_oracle(records, t);
    if (v < best) {
      best = v;
      best_t = t;
    }
  }
  return best_t;
}

/// Exact macro-F1 over `num_classes` classes from index sequences.
inline Rational macro_f1_rational(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& pred,
                                  std::size_t num_classes) {
  Rational total = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (gold[i] == c && pred[i] == c) ++tp;
      if (gold[i] != c && pred[i] == c) ++fp;
      if (gold[i] == c && pred[i] != c) ++fn;
    }
    if (tp > 0) total += Rational(2 * tp, 2 * tp + fp + fn);
  }
  return total / Rational(static_cast<std::int64_t>(num_classes));
}

/// Per-class F1 by enumerating instances, in long double.
inline std::vector<long double> per_class_f1_bruteforce(const std::vector<std::size_t>& gold,
                                                        const std::vector<std::size_t>& pred,
                                                        std::size_t num_classes) {
  std::vector<long double> out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    long double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      tp += (gold[i] == c && pred[i] == c);
      fp += (gold[i] != c && pred[i] == c);
      fn += (gold[i] == c && pred[i] != c);
    }
    const long double precision = tp + fp > 0 ? tp / (tp + fp) : 0;
    const long double recall = tp + fn > 0 ? tp / (tp + fn) : 0;
    out.push_back(precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0);
  }
  return out;
}

/// Smallest grid threshold k/n of maximal exact macro-F1; positive iff p >= t.
inline double threshold_oracle(const std::vector<double>& p_pos, const std::vector<bool>& gold_pos, double step) {
  const auto n = static_cast<std::int64_t>(std::llround(1.0 / step));
  std::vector<std::size_t> gold;
  for (bool g : gold_pos) gold.push_back(g ? 1 : 0);
  std::optional<Rational> best;
  double best_t = 0.0;
  for (std::int64_t k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(n);
    std::vector<std::size_t> pred;
    for (double p : p_pos) pred.push_back(p >= t ? 1 : 0);
    const Rational f1 = macro_f1_rational(gold, pred, 2);
    if (!best || f1 > *best) {
      best = f1;
      best_t = t;
    }
  }
  return best_t;
}

struct RoutingItem {
  std::vector<double> probs;
  std::size_t specialist = 0;
  std::size_t gold = 0;
};

struct RoutingOracleResult {
  double tau_conf = 0.0;
  std::optional<double> tau_margin;
  Rational macro_f1;
  Rational escalation_rate;
};

/// Exhaustive evaluation of every grid cell. Keeps the cell with the highest
/// macro-F1 rounded half-up to 4 decimals, then the lowest escalation rate,
/// then the earliest cell (tau_conf outer, tau_margin inner).
inline RoutingOracleResult routing_oracle(const std::vector<RoutingItem>& items, std::size_t num_classes,
                                          bool binary, const std::vector<double>& tau_conf_grid,
                                          const std::vector<double>& tau_margin_grid,
                                          const std::function<std::size_t(std::size_t)>& outcome) {
  std::vector<std::optional<double>> margins;
  if (binary) {
    margins.push_back(std::nullopt);
  } else {
    for (double m : tau_margin_grid) margins.push_back(m);
  }
  std::optional<RoutingOracleResult> best;
  BigInt best_rounded = -1;
  for (double tc : tau_conf_grid) {
    for (const auto& tm : margins) {
      std::vector<std::size_t> gold, pred;
      std::int64_t escalated = 0;
      for (std::size_t i = 0; i < items.size(); ++i) {
        std::vector<double> sorted = items[i].probs;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        const double c = sorted[0];
        const double m = sorted[0] - sorted[1];
        const bool esc = binary ? c < tc : (c < tc && m < *tm);
        escalated += esc ? 1 : 0;
        gold.push_back(items[i].gold);
        pred.push_back(esc ? outcome(i) : items[i].specialist);
      }
      const Rational f1 = macro_f1_rational(gold, pred, num_classes);
      const BigInt num = boost::multiprecision::numerator(f1);
      const BigInt den = boost::multiprecision::denominator(f1);
      const BigInt rounded = (2 * num * 10000 + den) / (2 * den);
      const Rational rate(escalated, static_cast<std::int64_t>(items.size()));
      if (!best || rounded > best_rounded || (rounded == best_rounded && rate < best->escalation_rate)) {
        best = RoutingOracleResult{tc, tm, f1, rate};
        best_rounded = rounded;
      }
    }
  }
  return *best;
}

}  // namespace triage::testing
