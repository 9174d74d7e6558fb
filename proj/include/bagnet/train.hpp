#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bagnet/data_io.hpp"
#include "bagnet/metrics.hpp"
#include "bagnet/model.hpp"
#include "bagnet/optim.hpp"

namespace bagnet {

struct TrainConfig {
    double learning_rate = 0.001;
    int epochs = 50;
    int batch_size = 12;
    int folds = 3;  // 1 trains and evaluates on every sample
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double bce_clamp_eps = 1e-7;

    void validate() const;
    AdamHyper adam() const;
    bool operator==(const TrainConfig&) const = default;
};

// Both halves of a run configuration, as read from / written to JSON:
//   {"train": {<TrainConfig fields>}, "model": {<BagnetConfig fields>}}
// Missing fields keep their defaults; unknown fields are a ConfigError.
struct RunConfig {
    TrainConfig train;
    BagnetConfig model;
};

std::string run_config_to_json(const RunConfig& config, int indent = 2);
RunConfig run_config_from_json(const std::string& text, RunConfig defaults = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig defaults = {});

// Seeded shuffle of 0..n-1 cut into k contiguous folds; the first n % k folds get one extra
// index. UsageError unless n >= k >= 2.
std::vector<std::vector<int>> kfold_split(int n, int k, std::uint64_t seed);

struct FoldRecord {
    int fold = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
    std::vector<double> epoch_loss;  // sample-weighted mean of the batch losses
    std::vector<double> step_loss;   // loss of every batch, before its update
    std::vector<ImageMetrics> test_metrics;
    std::string checkpoint;  // file name inside the output directory
};

struct RunRecord {
    RunConfig config;
    std::size_t manifest_samples = 0;
    std::vector<FoldRecord> folds;
    std::optional<FoldAggregate> aggregate;  // present once every fold has been evaluated
    std::optional<std::string> early_termination;
};

std::string run_record_to_json(const RunRecord& record, int indent = 2);

struct TrainHooks {
    // Learning rate for optimizer step `step` (1-based); empty keeps the configured rate.
    std::function<double(std::uint64_t step, double base_rate)> schedule;
    std::function<void(int fold, int epoch, double loss)> on_epoch;
};

struct TrainOptions {
    // Output directory for fold_<k>.ckpt, run_record.json, metrics.csv and timing.json.
    // Empty keeps everything in memory.
    std::filesystem::path out_dir;
    // Train only this fold; all folds when empty.
    std::optional<int> only_fold;
    TrainHooks hooks;
};

struct TrainResult {
    RunRecord record;
    std::vector<ModelParams<float>> fold_params;  // one per trained fold, in record order
    double seconds = 0.0;
};

// Loads every sample, then for each fold: init_params(seed + fold), epochs of seeded-shuffled
// mini-batches (forward in train mode, BCE, backward, Adam), and an infer-mode evaluation of the
// held-out samples. Deterministic for a given manifest, config and binary.
TrainResult train(const DatasetManifest& manifest, const RunConfig& config, const TrainOptions& options = {});

struct EvaluateOptions {
    double threshold = 0.5;
    bool skip_bad_samples = false;
    std::filesystem::path overlays_dir;  // empty disables overlays
    int fold = 0;                        // value written in the fold column
};

// Per-sample infer-mode prediction, threshold, confusion and metrics. ConfigError if the manifest
// target size differs from the model input size. Data errors abort unless skip_bad_samples,
// in which case the sample is reported through `skipped` and left out.
std::vector<ImageMetrics> evaluate(ModelParams<float>& params, const DatasetManifest& manifest,
                                   const std::vector<int>& indices, const EvaluateOptions& options = {},
                                   std::vector<std::string>* skipped = nullptr);

}  // namespace bagnet
