#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "bagnet/tensor.hpp"

namespace bagnet {

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
    bool operator==(const ConfusionCounts&) const = default;
};

// Column order of every report and CSV.
inline constexpr std::array<std::string_view, 6> kMetricNames = {"accuracy",    "jaccard", "precision",
                                                                  "recall",      "specificity", "dice"};

struct MetricsReport {
    double accuracy = 0.0;
    double jaccard = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double specificity = 0.0;
    double dice = 0.0;

    std::array<double, 6> values() const { return {accuracy, jaccard, precision, recall, specificity, dice}; }
    static MetricsReport from_values(const std::array<double, 6>& v);
    bool operator==(const MetricsReport&) const = default;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

struct FoldAggregate {
    std::array<MeanStd, 6> metrics;  // kMetricNames order
    std::vector<MetricsReport> fold_means;
};

// pixel -> 1 iff prob >= t. ConfigError unless t in [0, 1].
template <typename T>
Tensor<T> threshold(const Tensor<T>& prob, double t = 0.5);

// ShapeError on shape mismatch, DataError if either mask holds a value other than 0 or 1.
template <typename T>
ConfusionCounts confusion(const Tensor<T>& pred, const Tensor<T>& gt);

// Ratios of the counts. When a denominator is zero: jaccard/dice/precision/recall are 1 if
// prediction and truth are both empty and 0 otherwise, specificity is 1. UsageError if total is 0.
MetricsReport compute_metrics(const ConfusionCounts& c);

// Per-fold means of per-image reports, then mean and population std across the fold means.
// UsageError for no folds or an empty fold.
FoldAggregate aggregate_folds(const std::vector<std::vector<MetricsReport>>& per_fold);

// Mean and population std over individual reports.
std::array<MeanStd, 6> aggregate_images(const std::vector<MetricsReport>& reports);

struct ImageMetrics {
    std::string id;
    int fold = 0;
    MetricsReport metrics;
};

// Per-image rows, then a summary block:
//   fold_<k>_mean / fold_<k>_std   over the images of fold k
//   overall_folds_mean / _std      mean and std across fold means (headline)
//   overall_images_mean / _std     over all images pooled
void write_metrics_csv(std::ostream& out, const std::vector<ImageMetrics>& rows);

}  // namespace bagnet
