#include "bagnet/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "bagnet/checkpoint.hpp"
#include "bagnet/error.hpp"

namespace bagnet {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

ojson train_json(const TrainConfig& c) {
    ojson j;
    j["learning_rate"] = c.learning_rate;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["folds"] = c.folds;
    j["seed"] = c.seed;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_eps"] = c.adam_eps;
    j["bce_clamp_eps"] = c.bce_clamp_eps;
    return j;
}

ojson model_json(const BagnetConfig& c) {
    ojson j;
    j["full_scale_depth"] = c.full_scale_depth;
    j["multi_scale_depth"] = c.multi_scale_depth;
    j["full_scale_channels"] = c.full_scale_channels;
    j["multi_scale_channels"] = c.multi_scale_channels;
    j["n_bgb"] = c.n_bgb;
    j["n_down"] = c.n_down;
    j["n_up"] = c.n_up;
    j["input_channels"] = c.input_channels;
    j["input_height"] = c.input_height;
    j["input_width"] = c.input_width;
    return j;
}

template <typename V>
void read_field(const ojson& obj, const std::string& section, const std::string& key, V& out) {
    try {
        out = obj.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config field " + section + "." + key + ": " + e.what());
    }
}

template <typename Fields>
void read_section(const ojson& root, const std::string& section, Fields fields) {
    if (!root.contains(section)) {
        return;
    }
    const ojson& obj = root.at(section);
    if (!obj.is_object()) {
        throw ConfigError("config section '" + section + "' must be an object");
    }
    for (const auto& [key, value] : obj.items()) {
        if (!fields(key, obj)) {
            throw ConfigError("unknown config field " + section + "." + key);
        }
    }
}

ojson metrics_json(const MetricsReport& r) {
    ojson j;
    const auto v = r.values();
    for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
        j[std::string(kMetricNames[m])] = v[m];
    }
    return j;
}

ojson mean_std_json(const std::array<MeanStd, 6>& s) {
    ojson j;
    for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
        j[std::string(kMetricNames[m])] = {{"mean", s[m].mean}, {"std", s[m].std}};
    }
    return j;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << text;
}

void require_binary(const Tensor<float>& mask, const std::string& id) {
    for (float v : mask.data()) {
        if (v != 0.0f && v != 1.0f) {
            throw DataError("sample '" + id + "': mask is not binary");
        }
    }
}

struct FoldPlan {
    int fold = 0;
    std::vector<int> train;
    std::vector<int> test;
};

std::vector<FoldPlan> plan_folds(const DatasetManifest& manifest, const TrainConfig& config) {
    const int n = static_cast<int>(manifest.samples.size());
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    if (config.folds == 1) {
        return {FoldPlan{0, all, all}};
    }

    std::vector<std::vector<int>> folds;
    const bool assigned = std::all_of(manifest.samples.begin(), manifest.samples.end(),
                                      [](const Sample& s) { return s.fold.has_value(); });
    if (assigned) {
        folds.resize(config.folds);
        for (int i = 0; i < n; ++i) {
            const int f = *manifest.samples[i].fold;
            if (f >= config.folds) {
                throw ConfigError("sample '" + manifest.samples[i].id + "' is assigned to fold " + std::to_string(f) +
                                  " but the run uses " + std::to_string(config.folds) + " folds");
            }
            folds[f].push_back(i);
        }
        for (int f = 0; f < config.folds; ++f) {
            if (folds[f].empty()) {
                throw ConfigError("manifest assigns no sample to fold " + std::to_string(f));
            }
        }
    } else {
        folds = kfold_split(n, config.folds, config.seed);
    }

    std::vector<FoldPlan> plans;
    for (int f = 0; f < config.folds; ++f) {
        FoldPlan p;
        p.fold = f;
        p.test = folds[f];
        for (int g = 0; g < config.folds; ++g) {
            if (g != f) {
                p.train.insert(p.train.end(), folds[g].begin(), folds[g].end());
            }
        }
        std::sort(p.train.begin(), p.train.end());
        plans.push_back(std::move(p));
    }
    return plans;
}

MetricsReport score(ModelParams<float>& params, const LoadedSample& sample, double threshold_value,
                    const std::string& id, const fs::path& overlays_dir) {
    const Tensor<float> prob = predict(params, sample.image);
    const Tensor<float> pred = threshold(prob, threshold_value);
    require_binary(sample.mask, id);
    if (!overlays_dir.empty()) {
        write_overlay(overlays_dir / (id + ".png"), sample.image, pred);
    }
    return compute_metrics(confusion(pred, sample.mask));
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be positive");
    }
    if (epochs < 1) {
        throw ConfigError("epochs must be >= 1");
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (folds < 1) {
        throw ConfigError("folds must be >= 1 (1 disables cross-validation)");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) {
        throw ConfigError("adam_eps must be positive");
    }
    if (!(bce_clamp_eps > 0.0 && bce_clamp_eps < 0.5)) {
        throw ConfigError("bce_clamp_eps must lie in (0, 0.5)");
    }
}

AdamHyper TrainConfig::adam() const {
    return AdamHyper{learning_rate, adam_beta1, adam_beta2, adam_eps};
}

std::string run_config_to_json(const RunConfig& config, int indent) {
    ojson j;
    j["train"] = train_json(config.train);
    j["model"] = model_json(config.model);
    return j.dump(indent);
}

RunConfig run_config_from_json(const std::string& text, RunConfig defaults) {
    ojson root;
    try {
        root = ojson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    for (const auto& [key, value] : root.items()) {
        if (key != "train" && key != "model") {
            throw ConfigError("unknown config section '" + key + "'");
        }
    }
    RunConfig c = defaults;
    TrainConfig& t = c.train;
    read_section(root, "train", [&](const std::string& k, const ojson& o) {
        if (k == "learning_rate") read_field(o, "train", k, t.learning_rate);
        else if (k == "epochs") read_field(o, "train", k, t.epochs);
        else if (k == "batch_size") read_field(o, "train", k, t.batch_size);
        else if (k == "folds") read_field(o, "train", k, t.folds);
        else if (k == "seed") read_field(o, "train", k, t.seed);
        else if (k == "adam_beta1") read_field(o, "train", k, t.adam_beta1);
        else if (k == "adam_beta2") read_field(o, "train", k, t.adam_beta2);
        else if (k == "adam_eps") read_field(o, "train", k, t.adam_eps);
        else if (k == "bce_clamp_eps") read_field(o, "train", k, t.bce_clamp_eps);
        else return false;
        return true;
    });
    BagnetConfig& m = c.model;
    read_section(root, "model", [&](const std::string& k, const ojson& o) {
        if (k == "full_scale_depth") read_field(o, "model", k, m.full_scale_depth);
        else if (k == "multi_scale_depth") read_field(o, "model", k, m.multi_scale_depth);
        else if (k == "full_scale_channels") read_field(o, "model", k, m.full_scale_channels);
        else if (k == "multi_scale_channels") read_field(o, "model", k, m.multi_scale_channels);
        else if (k == "n_bgb") read_field(o, "model", k, m.n_bgb);
        else if (k == "n_down") read_field(o, "model", k, m.n_down);
        else if (k == "n_up") read_field(o, "model", k, m.n_up);
        else if (k == "input_channels") read_field(o, "model", k, m.input_channels);
        else if (k == "input_height") read_field(o, "model", k, m.input_height);
        else if (k == "input_width") read_field(o, "model", k, m.input_width);
        else return false;
        return true;
    });
    return c;
}

RunConfig load_run_config(const fs::path& path, RunConfig defaults) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return run_config_from_json(buf.str(), defaults);
}

std::vector<std::vector<int>> kfold_split(int n, int k, std::uint64_t seed) {
    if (k < 2 || n < k) {
        throw UsageError("kfold_split needs n >= k >= 2, got n=" + std::to_string(n) + " k=" + std::to_string(k));
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    for (int i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i);
        std::swap(order[i], order[pick(rng)]);
    }
    std::vector<std::vector<int>> folds(k);
    int pos = 0;
    for (int f = 0; f < k; ++f) {
        const int size = n / k + (f < n % k ? 1 : 0);
        folds[f].assign(order.begin() + pos, order.begin() + pos + size);
        pos += size;
    }
    return folds;
}

std::string run_record_to_json(const RunRecord& record, int indent) {
    ojson j;
    j["config"] = {{"train", train_json(record.config.train)}, {"model", model_json(record.config.model)}};
    j["seed"] = record.config.train.seed;
    j["manifest_samples"] = record.manifest_samples;
    ojson folds = ojson::array();
    for (const FoldRecord& f : record.folds) {
        ojson fj;
        fj["fold"] = f.fold;
        fj["checkpoint"] = f.checkpoint;
        fj["train_ids"] = f.train_ids;
        fj["test_ids"] = f.test_ids;
        fj["epochs_recorded"] = f.epoch_loss.size();
        fj["epoch_loss"] = f.epoch_loss;
        fj["step_loss"] = f.step_loss;
        ojson images = ojson::array();
        std::vector<MetricsReport> reports;
        for (const ImageMetrics& im : f.test_metrics) {
            images.push_back({{"id", im.id}, {"metrics", metrics_json(im.metrics)}});
            reports.push_back(im.metrics);
        }
        fj["test_metrics"] = images;
        if (!reports.empty()) {
            fj["test_summary"] = mean_std_json(aggregate_images(reports));
        }
        folds.push_back(fj);
    }
    j["folds"] = folds;
    if (record.aggregate) {
        j["aggregate"] = mean_std_json(record.aggregate->metrics);
    } else {
        j["aggregate"] = nullptr;
    }
    if (record.early_termination) {
        j["early_termination"] = *record.early_termination;
    } else {
        j["early_termination"] = nullptr;
    }
    return j.dump(indent);
}

TrainResult train(const DatasetManifest& manifest, const RunConfig& config, const TrainOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    const TrainConfig& tc = config.train;
    const BagnetConfig& mc = config.model;
    tc.validate();
    mc.validate();
    if (manifest.samples.empty()) {
        throw UsageError("manifest has no samples to train on");
    }
    if (manifest.target_height != mc.input_height || manifest.target_width != mc.input_width) {
        throw ConfigError("manifest target size " + std::to_string(manifest.target_height) + "x" +
                          std::to_string(manifest.target_width) + " differs from model input " +
                          std::to_string(mc.input_height) + "x" + std::to_string(mc.input_width));
    }
    if (tc.folds >= 2 && static_cast<int>(manifest.samples.size()) < tc.folds) {
        throw UsageError("cannot split " + std::to_string(manifest.samples.size()) + " samples into " +
                         std::to_string(tc.folds) + " folds");
    }
    if (!options.out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(options.out_dir, ec);
        if (ec) {
            throw DataError("cannot create output directory " + options.out_dir.string() + ": " + ec.message());
        }
    }

    std::vector<LoadedSample> data;
    data.reserve(manifest.samples.size());
    for (const Sample& s : manifest.samples) {
        data.push_back(load_sample(s, manifest.target_height, manifest.target_width, manifest.base_dir));
        require_binary(data.back().mask, s.id);
    }

    std::vector<FoldPlan> plans = plan_folds(manifest, tc);
    if (options.only_fold) {
        const int k = *options.only_fold;
        if (k < 0 || k >= static_cast<int>(plans.size())) {
            throw UsageError("fold " + std::to_string(k) + " is out of range for " + std::to_string(plans.size()) +
                             " fold(s)");
        }
        plans = {plans[k]};
    }

    TrainResult result;
    RunRecord& record = result.record;
    record.config = config;
    record.manifest_samples = manifest.samples.size();
    std::vector<ImageMetrics> csv_rows;
    std::vector<double> fold_seconds;

    for (const FoldPlan& plan : plans) {
        const auto fold_start = std::chrono::steady_clock::now();
        FoldRecord fr;
        fr.fold = plan.fold;
        for (int i : plan.train) {
            fr.train_ids.push_back(manifest.samples[i].id);
        }
        for (int i : plan.test) {
            fr.test_ids.push_back(manifest.samples[i].id);
        }

        ModelParams<float> params = init_params<float>(mc, tc.seed + static_cast<std::uint64_t>(plan.fold));
        AdamState<float> opt;
        AdamHyper hyper = tc.adam();
        std::mt19937_64 rng(tc.seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL * (plan.fold + 1));
        std::vector<int> order = plan.train;

        for (int epoch = 0; epoch < tc.epochs; ++epoch) {
            for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
                std::uniform_int_distribution<int> pick(0, i);
                std::swap(order[i], order[pick(rng)]);
            }
            double weighted = 0.0;
            int batch_index = 0;
            for (std::size_t b = 0; b < order.size(); b += tc.batch_size, ++batch_index) {
                const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(tc.batch_size));
                std::vector<Tensor<float>> images;
                std::vector<Tensor<float>> masks;
                for (std::size_t i = b; i < end; ++i) {
                    images.push_back(data[order[i]].image);
                    masks.push_back(data[order[i]].mask);
                }
                const Tensor<float> x = stack_batch<float>(images);
                const Tensor<float> y = stack_batch<float>(masks);

                double lv = 0.0;
                std::vector<Tensor<float>> grads;
                try {
                    Tape<float> tape;
                    BoundModel<float> bound = bind_model(tape, params, true);
                    ForwardOptions fwd;
                    fwd.mode = Mode::train;
                    fwd.update_running_stats = true;
                    Var prob = bagnet_forward(tape, tape.leaf(x), bound, mc, fwd).probabilities;
                    Var loss = bce_loss(tape, prob, y, static_cast<float>(tc.bce_clamp_eps));
                    lv = static_cast<double>(tape.value(loss)[0]);
                    if (!std::isfinite(lv)) {
                        throw NumericError("non-finite loss");
                    }
                    tape.backward(loss);
                    grads.reserve(bound.learnable_vars.size());
                    for (Var v : bound.learnable_vars) {
                        const Tensor<float>* g = tape.grad(v);
                        grads.push_back(g ? *g : Tensor<float>(tape.shape(v)));
                    }
                } catch (const NumericError& e) {
                    // Divergence: log where it happened, keep what was recorded so far, stop the run.
                    const std::string where = std::string(e.what()) + " in fold " + std::to_string(plan.fold) +
                                              ", epoch " + std::to_string(epoch) + ", batch " +
                                              std::to_string(batch_index);
                    record.early_termination = where;
                    record.folds.push_back(fr);
                    if (!options.out_dir.empty()) {
                        write_text(options.out_dir / "run_record.json", run_record_to_json(record) + "\n");
                    }
                    throw NumericError(where);
                }
                if (options.hooks.schedule) {
                    hyper.learning_rate = options.hooks.schedule(opt.step + 1, tc.learning_rate);
                }
                auto learnables = params.learnables();
                adam_step<float>(learnables, grads, opt, hyper);
                fr.step_loss.push_back(lv);
                weighted += lv * static_cast<double>(end - b);
            }
            fr.epoch_loss.push_back(weighted / static_cast<double>(order.size()));
            if (options.hooks.on_epoch) {
                options.hooks.on_epoch(plan.fold, epoch, fr.epoch_loss.back());
            }
        }

        for (int i : plan.test) {
            ImageMetrics im;
            im.id = manifest.samples[i].id;
            im.fold = plan.fold;
            im.metrics = score(params, data[i], 0.5, im.id, {});
            fr.test_metrics.push_back(im);
            csv_rows.push_back(im);
        }
        fr.checkpoint = "fold_" + std::to_string(plan.fold) + ".ckpt";
        if (!options.out_dir.empty()) {
            save_checkpoint(options.out_dir / fr.checkpoint, params, &opt);
        }
        record.folds.push_back(std::move(fr));
        result.fold_params.push_back(std::move(params));
        fold_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - fold_start).count());
    }

    if (!options.only_fold) {
        std::vector<std::vector<MetricsReport>> per_fold;
        for (const FoldRecord& f : record.folds) {
            std::vector<MetricsReport> reports;
            for (const ImageMetrics& im : f.test_metrics) {
                reports.push_back(im.metrics);
            }
            per_fold.push_back(std::move(reports));
        }
        record.aggregate = aggregate_folds(per_fold);
    }

    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!options.out_dir.empty()) {
        write_text(options.out_dir / "run_record.json", run_record_to_json(record) + "\n");
        std::ostringstream csv;
        write_metrics_csv(csv, csv_rows);
        write_text(options.out_dir / "metrics.csv", csv.str());
        ojson timing;
        timing["wall_clock_seconds"] = result.seconds;
        timing["fold_seconds"] = fold_seconds;
        write_text(options.out_dir / "timing.json", timing.dump(2) + "\n");
    }
    return result;
}

std::vector<ImageMetrics> evaluate(ModelParams<float>& params, const DatasetManifest& manifest,
                                   const std::vector<int>& indices, const EvaluateOptions& options,
                                   std::vector<std::string>* skipped) {
    if (manifest.target_height != params.config.input_height || manifest.target_width != params.config.input_width) {
        throw ConfigError("manifest target size " + std::to_string(manifest.target_height) + "x" +
                          std::to_string(manifest.target_width) + " differs from checkpoint input " +
                          std::to_string(params.config.input_height) + "x" +
                          std::to_string(params.config.input_width));
    }
    std::vector<ImageMetrics> out;
    for (int i : indices) {
        if (i < 0 || i >= static_cast<int>(manifest.samples.size())) {
            throw UsageError("sample index " + std::to_string(i) + " out of range");
        }
        const Sample& s = manifest.samples[i];
        LoadedSample loaded;
        try {
            loaded = load_sample(s, manifest.target_height, manifest.target_width, manifest.base_dir);
            require_binary(loaded.mask, s.id);
        } catch (const DataError& e) {
            if (!options.skip_bad_samples) {
                throw;
            }
            if (skipped) {
                skipped->push_back(e.what());
            }
            continue;
        }
        ImageMetrics im;
        im.id = s.id;
        im.fold = s.fold.value_or(options.fold);
        im.metrics = score(params, loaded, options.threshold, s.id, options.overlays_dir);
        out.push_back(std::move(im));
    }
    return out;
}

}  // namespace bagnet
