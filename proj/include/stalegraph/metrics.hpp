#pragma once

// Ranking metrics for link prediction. Labels are 0/1.

#include <span>

namespace stalegraph {

/// Rank-sum AUC with tied scores sharing their average rank.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Sum over positives of precision@k times the recall step, in descending
/// score order with ties kept in input order.
double average_precision(std::span<const double> scores, std::span<const int> labels);

/// Fraction of predictions with score >= threshold that are positive
/// (0 when nothing is predicted positive).
double precision_at(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

}  // namespace stalegraph
