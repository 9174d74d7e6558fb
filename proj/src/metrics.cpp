#include "bagnet/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "bagnet/error.hpp"

namespace bagnet {

namespace {

double ratio_or(std::uint64_t num, std::uint64_t den, double fallback) {
    return den == 0 ? fallback : static_cast<double>(num) / static_cast<double>(den);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_row(std::ostream& out, const std::string& id, const std::string& fold, const std::array<double, 6>& v) {
    out << id << ',' << fold;
    for (double x : v) {
        out << ',' << fmt(x);
    }
    out << '\n';
}

}  // namespace

MetricsReport MetricsReport::from_values(const std::array<double, 6>& v) {
    return MetricsReport{v[0], v[1], v[2], v[3], v[4], v[5]};
}

template <typename T>
Tensor<T> threshold(const Tensor<T>& prob, double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw ConfigError("threshold must lie in [0, 1], got " + fmt(t));
    }
    Tensor<T> out(prob.shape());
    for (std::size_t i = 0; i < prob.size(); ++i) {
        out[i] = static_cast<double>(prob[i]) >= t ? T{1} : T{0};
    }
    return out;
}

template <typename T>
ConfusionCounts confusion(const Tensor<T>& pred, const Tensor<T>& gt) {
    if (pred.shape() != gt.shape()) {
        throw ShapeError("confusion shape mismatch: prediction " + pred.shape().str() + " vs truth " +
                         gt.shape().str());
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T p = pred[i];
        const T g = gt[i];
        if ((p != T{0} && p != T{1}) || (g != T{0} && g != T{1})) {
            throw DataError("confusion expects binary masks; element " + std::to_string(i) + " is (" +
                            fmt(static_cast<double>(p)) + ", " + fmt(static_cast<double>(g)) + ")");
        }
        if (p == T{1}) {
            (g == T{1} ? c.tp : c.fp) += 1;
        } else {
            (g == T{1} ? c.fn : c.tn) += 1;
        }
    }
    return c;
}

MetricsReport compute_metrics(const ConfusionCounts& c) {
    if (c.total() == 0) {
        throw UsageError("metrics of an empty image");
    }
    const bool pred_empty = c.tp + c.fp == 0;
    const bool gt_empty = c.tp + c.fn == 0;
    const double both_empty = pred_empty && gt_empty ? 1.0 : 0.0;
    MetricsReport r;
    r.accuracy = ratio_or(c.tp + c.tn, c.total(), 1.0);
    r.jaccard = ratio_or(c.tp, c.tp + c.fp + c.fn, both_empty);
    r.precision = ratio_or(c.tp, c.tp + c.fp, both_empty);
    r.recall = ratio_or(c.tp, c.tp + c.fn, both_empty);
    r.specificity = ratio_or(c.tn, c.tn + c.fp, 1.0);
    r.dice = ratio_or(2 * c.tp, 2 * c.tp + c.fp + c.fn, both_empty);
    return r;
}

std::array<MeanStd, 6> aggregate_images(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) {
        throw UsageError("cannot aggregate an empty list of reports");
    }
    std::array<MeanStd, 6> out{};
    const double n = static_cast<double>(reports.size());
    for (std::size_t m = 0; m < 6; ++m) {
        double sum = 0.0;
        for (const auto& r : reports) {
            sum += r.values()[m];
        }
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& r : reports) {
            const double d = r.values()[m] - mean;
            ss += d * d;
        }
        out[m] = MeanStd{mean, std::sqrt(ss / n)};
    }
    return out;
}

FoldAggregate aggregate_folds(const std::vector<std::vector<MetricsReport>>& per_fold) {
    if (per_fold.empty()) {
        throw UsageError("aggregate_folds needs at least one fold");
    }
    FoldAggregate agg;
    for (std::size_t k = 0; k < per_fold.size(); ++k) {
        if (per_fold[k].empty()) {
            throw UsageError("fold " + std::to_string(k) + " has no images");
        }
        std::array<double, 6> means{};
        const auto stats = aggregate_images(per_fold[k]);
        for (std::size_t m = 0; m < 6; ++m) {
            means[m] = stats[m].mean;
        }
        agg.fold_means.push_back(MetricsReport::from_values(means));
    }
    agg.metrics = aggregate_images(agg.fold_means);
    return agg;
}

void write_metrics_csv(std::ostream& out, const std::vector<ImageMetrics>& rows) {
    out << "id,fold";
    for (auto name : kMetricNames) {
        out << ',' << name;
    }
    out << '\n';
    std::map<int, std::vector<MetricsReport>> folds;
    std::vector<MetricsReport> all;
    for (const auto& row : rows) {
        write_row(out, row.id, std::to_string(row.fold), row.metrics.values());
        folds[row.fold].push_back(row.metrics);
        all.push_back(row.metrics);
    }
    if (rows.empty()) {
        return;
    }
    auto split = [](const std::array<MeanStd, 6>& s, bool stdev) {
        std::array<double, 6> v{};
        for (std::size_t m = 0; m < 6; ++m) {
            v[m] = stdev ? s[m].std : s[m].mean;
        }
        return v;
    };
    std::vector<std::vector<MetricsReport>> per_fold;
    for (const auto& [k, reports] : folds) {
        const auto s = aggregate_images(reports);
        write_row(out, "fold_" + std::to_string(k) + "_mean", std::to_string(k), split(s, false));
        write_row(out, "fold_" + std::to_string(k) + "_std", std::to_string(k), split(s, true));
        per_fold.push_back(reports);
    }
    const FoldAggregate agg = aggregate_folds(per_fold);
    write_row(out, "overall_folds_mean", "", split(agg.metrics, false));
    write_row(out, "overall_folds_std", "", split(agg.metrics, true));
    const auto pooled = aggregate_images(all);
    write_row(out, "overall_images_mean", "", split(pooled, false));
    write_row(out, "overall_images_std", "", split(pooled, true));
}

template Tensor<float> threshold(const Tensor<float>&, double);
template Tensor<double> threshold(const Tensor<double>&, double);
template ConfusionCounts confusion(const Tensor<float>&, const Tensor<float>&);
template ConfusionCounts confusion(const Tensor<double>&, const Tensor<double>&);

}  // namespace bagnet
