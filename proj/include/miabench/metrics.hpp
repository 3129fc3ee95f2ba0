#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "miabench/core.hpp"
#include "miabench/errors.hpp"

namespace mia {

using LabeledScore = std::pair<double, Label>;

namespace detail {

inline void check_scores(std::span<const LabeledScore> scores, std::size_t& n_members,
                         std::size_t& n_nonmembers) {
    n_members = 0;
    n_nonmembers = 0;
    for (const auto& [score, label] : scores) {
        if (!std::isfinite(score)) {
            throw MetricsError("metrics: non-finite score rejected");
        }
        if (label == Label::Member) {
            ++n_members;
        } else {
            ++n_nonmembers;
        }
    }
    if (n_members == 0 || n_nonmembers == 0) {
        throw LabelBalanceError("metrics: need at least one member and one non-member");
    }
}

}  // namespace detail

// Rank-based (Mann-Whitney) AUROC with average-rank tie handling:
// P(member score > non-member score) + 0.5 * P(tie).
inline double auroc(std::span<const LabeledScore> scores) {
    std::size_t n1 = 0;
    std::size_t n0 = 0;
    detail::check_scores(scores, n1, n0);

    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a].first < scores[b].first;
    });

    // Sum of average ranks (1-based) over the member class.
    double member_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]].first == scores[order[i]].first) {
            ++j;
        }
        const double avg_rank = static_cast<double>(i + j + 2) / 2.0;
        for (std::size_t k = i; k <= j; ++k) {
            if (scores[order[k]].second == Label::Member) {
                member_rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    const double u = member_rank_sum - static_cast<double>(n1) * (n1 + 1) / 2.0;
    return u / (static_cast<double>(n1) * static_cast<double>(n0));
}

// Step-function ROC over the distinct score thresholds, classifying member
// iff score >= threshold. Starts at (0,0) and ends at (1,1); no
// interpolation anywhere.
struct RocCurve {
    std::vector<double> thresholds;                  // descending, distinct
    std::vector<std::pair<double, double>> points;   // (fpr, tpr), first (0,0), last (1,1)
};

inline RocCurve roc_curve(std::span<const LabeledScore> scores) {
    std::size_t n1 = 0;
    std::size_t n0 = 0;
    detail::check_scores(scores, n1, n0);

    std::vector<LabeledScore> sorted(scores.begin(), scores.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const LabeledScore& a, const LabeledScore& b) {
                         return a.first > b.first;
                     });

    RocCurve curve;
    curve.points.emplace_back(0.0, 0.0);
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        const double threshold = sorted[i].first;
        while (i < sorted.size() && sorted[i].first == threshold) {
            if (sorted[i].second == Label::Member) {
                ++tp;
            } else {
                ++fp;
            }
            ++i;
        }
        curve.thresholds.push_back(threshold);
        curve.points.emplace_back(static_cast<double>(fp) / static_cast<double>(n0),
                                  static_cast<double>(tp) / static_cast<double>(n1));
    }
    return curve;
}

// Minimum FPR among thresholds reaching TPR >= target. The lowest threshold
// classifies everything as member (TPR = 1), so a solution always exists.
inline double fpr_at_tpr(std::span<const LabeledScore> scores, double target_tpr = 0.95) {
    const RocCurve curve = roc_curve(scores);
    double best = 1.0;
    for (const auto& [fpr, tpr] : curve.points) {
        if (tpr >= target_tpr) {
            best = std::min(best, fpr);
        }
    }
    return best;
}

// Maximum TPR among thresholds with FPR <= target. The (0,0) point makes
// the result well-defined for every target.
inline double tpr_at_fpr(std::span<const LabeledScore> scores, double target_fpr = 0.05) {
    const RocCurve curve = roc_curve(scores);
    double best = 0.0;
    for (const auto& [fpr, tpr] : curve.points) {
        if (fpr <= target_fpr) {
            best = std::max(best, tpr);
        }
    }
    return best;
}

// The three headline metrics for one method run.
struct EvalReport {
    std::string method_id;
    std::string params_fingerprint;
    double auroc = 0.0;
    double fpr_at_95_tpr = 0.0;
    double tpr_at_5_fpr = 0.0;
    std::size_t n_members = 0;
    std::size_t n_nonmembers = 0;
};

inline EvalReport evaluate(std::string method_id, std::string params_fingerprint,
                           std::span<const LabeledScore> scores) {
    EvalReport report;
    report.method_id = std::move(method_id);
    report.params_fingerprint = std::move(params_fingerprint);
    detail::check_scores(scores, report.n_members, report.n_nonmembers);
    report.auroc = auroc(scores);
    report.fpr_at_95_tpr = fpr_at_tpr(scores, 0.95);
    report.tpr_at_5_fpr = tpr_at_fpr(scores, 0.05);
    return report;
}

}  // namespace mia
