#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "filmens/train.hpp"

namespace filmens {

struct BinningConfig {
  std::size_t n_bins = 15;  // equal-width bins on confidence (0, 1]

  void validate() const {
    if (n_bins < 1) throw ValueError("BinningConfig: n_bins must be >= 1");
  }
};

namespace detail {
/// Argmax with ties broken toward the lowest class index.
template <typename It>
std::size_t argmax_first(It begin, It end) {
  std::size_t best = 0, i = 0;
  auto bv = *begin;
  for (It it = begin; it != end; ++it, ++i)
    if (*it > bv) {
      bv = *it;
      best = i;
    }
  return best;
}

/// Equal-width bin of a confidence value: bin b covers (b/n, (b+1)/n].
inline std::size_t confidence_bin(double conf, std::size_t n_bins) {
  if (conf <= 0.0) return 0;
  auto b = static_cast<std::size_t>(std::ceil(conf * static_cast<double>(n_bins))) - 1;
  return std::min(b, n_bins - 1);
}
}  // namespace detail

template <typename S>
double accuracy(const PredictionSet<S>& preds) {
  if (preds.samples < 1) throw ValueError("accuracy: empty prediction set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.samples; ++i) {
    const S* row = preds.ensemble_probs.data() + i * preds.classes;
    if (detail::argmax_first(row, row + preds.classes) ==
        static_cast<std::size_t>(preds.targets[i]))
      ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(preds.samples);
}

/// Top-label expected calibration error: confidence is the max ensemble
/// probability, bins are equal-width on (0,1], empty bins contribute 0.
template <typename S>
double ece(const PredictionSet<S>& preds, const BinningConfig& bins = {}) {
  bins.validate();
  if (preds.samples < 1) throw ValueError("ece: empty prediction set");
  std::vector<double> conf_sum(bins.n_bins, 0.0), acc_sum(bins.n_bins, 0.0);
  std::vector<std::size_t> count(bins.n_bins, 0);
  for (std::size_t i = 0; i < preds.samples; ++i) {
    const S* row = preds.ensemble_probs.data() + i * preds.classes;
    const std::size_t pred = detail::argmax_first(row, row + preds.classes);
    const double conf = static_cast<double>(row[pred]);
    const std::size_t b = detail::confidence_bin(conf, bins.n_bins);
    conf_sum[b] += conf;
    acc_sum[b] += (pred == static_cast<std::size_t>(preds.targets[i])) ? 1.0 : 0.0;
    count[b]++;
  }
  double e = 0.0;
  for (std::size_t b = 0; b < bins.n_bins; ++b) {
    if (count[b] == 0) continue;
    const double w = static_cast<double>(count[b]) / static_cast<double>(preds.samples);
    e += w * std::abs(acc_sum[b] / count[b] - conf_sum[b] / count[b]);
  }
  return e;
}

/// Static calibration error: the ECE sum taken over every class's predicted
/// probability (bin membership by p_k, accuracy meaning "true class is k"),
/// averaged over classes.
template <typename S>
double sce(const PredictionSet<S>& preds, const BinningConfig& bins = {}) {
  bins.validate();
  if (preds.samples < 1) throw ValueError("sce: empty prediction set");
  double total = 0.0;
  for (std::size_t k = 0; k < preds.classes; ++k) {
    std::vector<double> conf_sum(bins.n_bins, 0.0), acc_sum(bins.n_bins, 0.0);
    std::vector<std::size_t> count(bins.n_bins, 0);
    for (std::size_t i = 0; i < preds.samples; ++i) {
      const double p = static_cast<double>(preds.ensemble_prob(i, k));
      const std::size_t b = detail::confidence_bin(p, bins.n_bins);
      conf_sum[b] += p;
      acc_sum[b] += (static_cast<std::size_t>(preds.targets[i]) == k) ? 1.0 : 0.0;
      count[b]++;
    }
    for (std::size_t b = 0; b < bins.n_bins; ++b) {
      if (count[b] == 0) continue;
      const double w = static_cast<double>(count[b]) / static_cast<double>(preds.samples);
      total += w * std::abs(acc_sum[b] / count[b] - conf_sum[b] / count[b]);
    }
  }
  return total / static_cast<double>(preds.classes);
}

/// Mean squared distance between the ensemble probability vector and the
/// one-hot target; range [0, 2].
template <typename S>
double brier(const PredictionSet<S>& preds) {
  if (preds.samples < 1) throw ValueError("brier: empty prediction set");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.samples; ++i)
    for (std::size_t k = 0; k < preds.classes; ++k) {
      const double onehot = (static_cast<std::size_t>(preds.targets[i]) == k) ? 1.0 : 0.0;
      const double d = static_cast<double>(preds.ensemble_prob(i, k)) - onehot;
      total += d * d;
    }
  return total / static_cast<double>(preds.samples);
}

/// Fraction of samples on which two members predict different labels,
/// averaged over all M(M-1)/2 member pairs.
template <typename S>
double disagreement(const PredictionSet<S>& preds) {
  if (preds.members < 2) throw ValueError("disagreement: needs at least 2 members");
  // precompute per-member argmax labels
  std::vector<std::size_t> labels(preds.members * preds.samples);
  for (std::size_t m = 0; m < preds.members; ++m)
    for (std::size_t i = 0; i < preds.samples; ++i) {
      const S* row = preds.member_probs.data() + (m * preds.samples + i) * preds.classes;
      labels[m * preds.samples + i] = detail::argmax_first(row, row + preds.classes);
    }
  double total = 0.0;
  for (std::size_t a = 0; a < preds.members; ++a)
    for (std::size_t b = a + 1; b < preds.members; ++b) {
      std::size_t diff = 0;
      for (std::size_t i = 0; i < preds.samples; ++i)
        if (labels[a * preds.samples + i] != labels[b * preds.samples + i]) ++diff;
      total += static_cast<double>(diff) / static_cast<double>(preds.samples);
    }
  const double pairs = 0.5 * static_cast<double>(preds.members) *
                       static_cast<double>(preds.members - 1);
  return total / pairs;
}

inline constexpr double kKlProbFloor = 1e-12;

/// Mean over member pairs (i<j) of the per-sample class-wise KL divergence
/// KL(p_i || p_j), averaged over samples, in nats.  Probabilities are
/// clamped below at 1e-12 before the log.
template <typename S>
double pairwise_kl(const PredictionSet<S>& preds) {
  if (preds.members < 2) throw ValueError("pairwise_kl: needs at least 2 members");
  double total = 0.0;
  for (std::size_t a = 0; a < preds.members; ++a)
    for (std::size_t b = a + 1; b < preds.members; ++b) {
      double pair_sum = 0.0;
      for (std::size_t i = 0; i < preds.samples; ++i) {
        const S* pa = preds.member_probs.data() + (a * preds.samples + i) * preds.classes;
        const S* pb = preds.member_probs.data() + (b * preds.samples + i) * preds.classes;
        for (std::size_t k = 0; k < preds.classes; ++k) {
          const double p = std::max(static_cast<double>(pa[k]), kKlProbFloor);
          const double q = std::max(static_cast<double>(pb[k]), kKlProbFloor);
          pair_sum += p * std::log(p / q);
        }
      }
      total += pair_sum / static_cast<double>(preds.samples);
    }
  const double pairs = 0.5 * static_cast<double>(preds.members) *
                       static_cast<double>(preds.members - 1);
  return total / pairs;
}

/// Predictive entropy of the ensemble-averaged distribution, one score per
/// sample; the uncertainty used for OOD scoring.
template <typename S>
std::vector<double> uncertainty_score(const PredictionSet<S>& preds) {
  std::vector<double> scores(preds.samples, 0.0);
  for (std::size_t i = 0; i < preds.samples; ++i) {
    double h = 0.0;
    for (std::size_t k = 0; k < preds.classes; ++k) {
      const double p = static_cast<double>(preds.ensemble_prob(i, k));
      if (p > 0.0) h -= p * std::log(p);
    }
    scores[i] = h;
  }
  return scores;
}

/// Mann-Whitney AUROC: probability that a random OOD score exceeds a random
/// in-distribution score, ties counted 1/2.  Computed by sorting and
/// averaging tied ranks.
inline double auroc(const std::vector<double>& scores_in, const std::vector<double>& scores_out) {
  if (scores_in.empty() || scores_out.empty())
    throw ValueError("auroc: both score lists must be nonempty");
  struct Entry {
    double score;
    bool is_out;
  };
  std::vector<Entry> all;
  all.reserve(scores_in.size() + scores_out.size());
  for (double s : scores_in) all.push_back({s, false});
  for (double s : scores_out) all.push_back({s, true});
  std::sort(all.begin(), all.end(),
            [](const Entry& a, const Entry& b) { return a.score < b.score; });
  // average rank across ties
  double rank_sum_out = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t t = i; t < j; ++t)
      if (all[t].is_out) rank_sum_out += avg_rank;
    i = j;
  }
  const double n_out = static_cast<double>(scores_out.size());
  const double n_in = static_cast<double>(scores_in.size());
  return (rank_sum_out - n_out * (n_out + 1.0) / 2.0) / (n_in * n_out);
}

/// The full evaluation summary of one run; diversity fields are absent for
/// single-member models and auroc only appears in OOD runs.
struct MetricsReport {
  double accuracy = 0.0;
  double ece = 0.0;
  double sce = 0.0;
  double brier = 0.0;
  std::optional<double> disagreement;
  std::optional<double> mean_pairwise_kl;
  std::optional<double> auroc;
  std::size_t n_bins = 15;

  std::string to_kv() const {
    std::ostringstream os;
    os << "accuracy=" << accuracy << "\nece=" << ece << "\nsce=" << sce << "\nbrier=" << brier
       << "\nn_bins=" << n_bins << "\n";
    if (disagreement) os << "disagreement=" << *disagreement << "\n";
    if (mean_pairwise_kl) os << "mean_pairwise_kl=" << *mean_pairwise_kl << "\n";
    if (auroc) os << "auroc=" << *auroc << "\n";
    return os.str();
  }
};

template <typename S>
MetricsReport compute_metrics(const PredictionSet<S>& preds, const BinningConfig& bins = {}) {
  MetricsReport r;
  r.n_bins = bins.n_bins;
  r.accuracy = accuracy(preds);
  r.ece = ece(preds, bins);
  r.sce = sce(preds, bins);
  r.brier = brier(preds);
  if (preds.members >= 2) {
    r.disagreement = disagreement(preds);
    r.mean_pairwise_kl = pairwise_kl(preds);
  }
  return r;
}

}  // namespace filmens
