// SPDX-License-Identifier: Apache-2.0
#include "dynenc/oracles.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dynenc::oracle {

double ctc_brute_force(std::span<const double> log_probs, std::size_t frames, std::size_t vocab,
                       const std::vector<int>& labels) {
  if (log_probs.size() != frames * vocab) throw std::invalid_argument("ctc_brute_force: size");
  std::vector<std::size_t> path(frames, 0);
  std::vector<long double> matches;
  for (;;) {
    std::vector<int> collapsed;
    int prev = -1;
    long double lp = 0.0L;
    for (std::size_t t = 0; t < frames; ++t) {
      const int sym = static_cast<int>(path[t]);
      lp += log_probs[t * vocab + path[t]];
      if (sym != 0 && sym != prev) collapsed.push_back(sym);
      prev = sym;
    }
    if (collapsed == labels) matches.push_back(lp);

    std::size_t t = 0;
    while (t < frames && ++path[t] == vocab) path[t++] = 0;
    if (t == frames) break;
  }
  if (matches.empty()) return std::numeric_limits<double>::infinity();
  long double mx = matches[0];
  for (long double m : matches) mx = std::max(mx, m);
  long double acc = 0.0L;
  for (long double m : matches) acc += std::exp(m - mx);
  return static_cast<double>(-(mx + std::log(acc)));
}

std::vector<double> soft_topk_bisection(const std::vector<double>& scores, std::size_t k,
                                        double tau) {
  const std::size_t n = scores.size();
  if (k == n) return std::vector<double>(n, 1.0);
  auto mass = [&](long double t) {
    long double m = 0.0L;
    for (double s : scores) m += 1.0L / (1.0L + std::exp(-(s - t) / tau));
    return m;
  };
  long double lo = scores[0], hi = scores[0];
  for (double s : scores) {
    lo = std::min<long double>(lo, s);
    hi = std::max<long double>(hi, s);
  }
  lo -= 60.0L * tau;
  hi += 60.0L * tau;
  for (int it = 0; it < 400; ++it) {
    const long double mid = 0.5L * (lo + hi);
    (mass(mid) > static_cast<long double>(k) ? lo : hi) = mid;
  }
  const long double t = 0.5L * (lo + hi);
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = static_cast<double>(1.0L / (1.0L + std::exp(-(scores[j] - t) / tau)));
  }
  return out;
}

std::size_t nearest_template(std::span<const double> frame,
                             const std::vector<std::vector<double>>& templates) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < templates.size(); ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < frame.size(); ++j) {
      d += (frame[j] - templates[i][j]) * (frame[j] - templates[i][j]);
    }
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace dynenc::oracle
