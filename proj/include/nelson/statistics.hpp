#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace nelson {

/// Pairwise (cascade) summation in the given order.
inline double pairwise_sum(std::span<const double> x) {
  if (x.size() <= 8) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  const std::size_t half = x.size() / 2;
  return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

struct LogMeanExp {
  double log_mean = 0.0;        ///< log of the sample mean of exp(log_w)
  double max_log_weight = 0.0;  ///< shift used before exponentiating
  double ess = 0.0;             ///< (sum w)^2 / sum w^2
};

/// Stable log(mean(exp(log_w))). Weights are exponentiated after subtracting
/// the maximum, sorted ascending and summed pairwise, so the result depends
/// only on the multiset of inputs.
inline LogMeanExp log_mean_exp(std::span<const double> log_w) {
  if (log_w.empty()) throw std::invalid_argument("log_mean_exp: empty input");
  std::vector<double> sorted(log_w.begin(), log_w.end());
  std::sort(sorted.begin(), sorted.end());
  const double shift = sorted.back();
  if (!std::isfinite(shift)) throw std::domain_error("log_mean_exp: non-finite log-weight");
  std::vector<double> w(sorted.size());
  std::vector<double> w2(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    w[i] = std::exp(sorted[i] - shift);
    w2[i] = w[i] * w[i];
  }
  const double sum = pairwise_sum(w);
  const double sum2 = pairwise_sum(w2);
  LogMeanExp out;
  out.max_log_weight = shift;
  out.log_mean = shift + std::log(sum / static_cast<double>(sorted.size()));
  out.ess = sum * sum / sum2;
  return out;
}

struct JackknifeResult {
  double stderr = 0.0;
  std::size_t blocks = 0;
};

/// Delete-one-block jackknife over contiguous index blocks of [0, n).
///
/// `estimate_without(begin, end)` must return the statistic computed with
/// items [begin, end) removed.
template <class F>
JackknifeResult jackknife(std::size_t n, std::size_t blocks, const F& estimate_without) {
  blocks = std::min(blocks, n);
  if (blocks < 2) throw std::invalid_argument("jackknife: need at least two blocks");
  std::vector<double> partial(blocks);
  for (std::size_t b = 0; b < blocks; ++b) {
    partial[b] = estimate_without(n * b / blocks, n * (b + 1) / blocks);
  }
  const double mean = pairwise_sum(partial) / static_cast<double>(blocks);
  std::vector<double> dev2(blocks);
  for (std::size_t b = 0; b < blocks; ++b) dev2[b] = (partial[b] - mean) * (partial[b] - mean);
  const double var = static_cast<double>(blocks - 1) / static_cast<double>(blocks) * pairwise_sum(dev2);
  return {std::sqrt(var), blocks};
}

struct MeanEstimate {
  double mean = 0.0;
  double stderr = 0.0;
};

/// Sample mean with a block-jackknife standard error.
inline MeanEstimate jackknife_mean(std::span<const double> x, std::size_t blocks) {
  if (x.size() < 2) throw std::invalid_argument("jackknife_mean: need at least two samples");
  const double total = pairwise_sum(x);
  const double n = static_cast<double>(x.size());
  auto without = [&](std::size_t b, std::size_t e) {
    return (total - pairwise_sum(x.subspan(b, e - b))) / (n - static_cast<double>(e - b));
  };
  return {total / n, jackknife(x.size(), blocks, without).stderr};
}

}  // namespace nelson
