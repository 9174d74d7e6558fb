#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "bagnet/checkpoint.hpp"
#include "bagnet/data_io.hpp"
#include "bagnet/error.hpp"
#include "bagnet/metrics.hpp"
#include "bagnet/model_gradcheck.hpp"
#include "bagnet/train.hpp"

namespace fs = std::filesystem;
using namespace bagnet;

namespace {

// "64" or "64x48" (height x width).
std::pair<int, int> parse_size(const std::string& s) {
    const auto x = s.find_first_of("xX");
    try {
        if (x == std::string::npos) {
            const int v = std::stoi(s);
            return {v, v};
        }
        return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
    } catch (const std::exception&) {
        throw ConfigError("cannot parse size '" + s + "', expected N or HxW");
    }
}

int run_synth(int n, const std::string& size, std::uint64_t seed, const fs::path& out) {
    const auto [h, w] = parse_size(size);
    const DatasetManifest m = synth_dataset(n, h, w, seed, out);
    std::fprintf(stderr, "wrote %zu samples (%dx%d) and %s\n", m.samples.size(), h, w,
                 (out / "manifest.tsv").string().c_str());
    return 0;
}

struct TrainArgs {
    fs::path manifest;
    fs::path config;
    fs::path out_dir;
    std::optional<int> fold;
    bool all_folds = false;
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<double> learning_rate;
    std::optional<int> folds;
    std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
    std::vector<std::string> warnings;
    const DatasetManifest manifest = parse_manifest(a.manifest, &warnings);
    for (const auto& w : warnings) {
        std::fprintf(stderr, "warning: %s\n", w.c_str());
    }
    RunConfig defaults;
    defaults.model.input_height = manifest.target_height;
    defaults.model.input_width = manifest.target_width;
    RunConfig rc = a.config.empty() ? defaults : load_run_config(a.config, defaults);
    if (a.epochs) rc.train.epochs = *a.epochs;
    if (a.batch_size) rc.train.batch_size = *a.batch_size;
    if (a.learning_rate) rc.train.learning_rate = *a.learning_rate;
    if (a.folds) rc.train.folds = *a.folds;
    if (a.seed) rc.train.seed = *a.seed;

    TrainOptions opt;
    opt.out_dir = a.out_dir;
    if (a.fold && !a.all_folds) {
        opt.only_fold = *a.fold;
    }
    opt.hooks.on_epoch = [](int fold, int epoch, double loss) {
        std::fprintf(stderr, "fold %d epoch %d loss %.6f\n", fold, epoch + 1, loss);
    };
    const TrainResult r = train(manifest, rc, opt);
    if (r.record.aggregate) {
        const auto& m = r.record.aggregate->metrics;
        for (std::size_t i = 0; i < kMetricNames.size(); ++i) {
            std::printf("%-12s %.4f +- %.4f\n", std::string(kMetricNames[i]).c_str(), m[i].mean, m[i].std);
        }
    }
    std::fprintf(stderr, "done in %.1f s, outputs in %s\n", r.seconds, a.out_dir.string().c_str());
    return 0;
}

int run_eval(const fs::path& checkpoint, const fs::path& manifest_path, const fs::path& out,
             const fs::path& overlays, bool skip_bad, double threshold_value) {
    Checkpoint<float> ck = read_checkpoint<float>(checkpoint);
    std::vector<std::string> warnings;
    const DatasetManifest manifest = parse_manifest(manifest_path, &warnings);
    for (const auto& w : warnings) {
        std::fprintf(stderr, "warning: %s\n", w.c_str());
    }
    std::vector<int> all(manifest.samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = static_cast<int>(i);
    }
    EvaluateOptions opt;
    opt.threshold = threshold_value;
    opt.skip_bad_samples = skip_bad;
    opt.overlays_dir = overlays;
    std::vector<std::string> skipped;
    const auto rows = evaluate(ck.params, manifest, all, opt, &skipped);
    for (const auto& s : skipped) {
        std::fprintf(stderr, "skipped: %s\n", s.c_str());
    }
    if (out.has_parent_path()) {
        fs::create_directories(out.parent_path());
    }
    std::ofstream csv(out, std::ios::binary | std::ios::trunc);
    if (!csv) {
        throw DataError("cannot write " + out.string());
    }
    write_metrics_csv(csv, rows);
    std::fprintf(stderr, "evaluated %zu samples (%zu skipped) -> %s\n", rows.size(), skipped.size(),
                 out.string().c_str());
    return 0;
}

int run_predict(const fs::path& checkpoint, const fs::path& image_path, const fs::path& out) {
    Checkpoint<float> ck = read_checkpoint<float>(checkpoint);
    const Tensor<float> image = load_image(image_path);
    const Shape native = image.shape();
    const Tensor<float> resized = resize_image(image, ck.params.config.input_height, ck.params.config.input_width);
    const Tensor<float> mask = threshold(predict(ck.params, resized), 0.5);
    write_mask_image(out, mask, native.h, native.w);
    return 0;
}

int run_gradcheck(bool tiny, bool f64, std::size_t coords, std::uint64_t seed) {
    ModelGradcheckOptions o;
    if (!tiny) {
        o.config = BagnetConfig{};
        o.config.input_height = 16;
        o.config.input_width = 16;
    }
    o.coordinates = coords;
    o.seed = seed;
    const ModelGradcheckResult r = f64 ? model_gradcheck<double>(o) : model_gradcheck<float>(o);
    const double tol = f64 ? model_gradcheck_tolerance<double>() : model_gradcheck_tolerance<float>();
    std::printf("%-6s %-6s %-14s %-14s %-10s %s\n", "tensor", "index", "analytic", "numeric", "rel_err", "step");
    for (const auto& e : r.report.entries) {
        std::printf("%-6zu %-6zu % .6e % .6e %.3e %.0e\n", e.coord.tensor, e.coord.index, e.analytic, e.numeric,
                    e.rel_error, e.step);
    }
    const bool ok = r.report.max_rel_error < tol;
    std::printf("%s precision=%s coords=%zu max_rel_error=%.3e tolerance=%.0e time=%.2fs\n", ok ? "PASS" : "FAIL",
                f64 ? "f64" : "f32", r.report.entries.size(), r.report.max_rel_error, tol, r.seconds);
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BAGNet segmentation: synthetic data, training, evaluation and gradient checks"};
    app.require_subcommand(1);

    int synth_n = 8;
    std::string synth_size = "64";
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic lesion dataset and manifest");
    synth->add_option("--n", synth_n, "Number of samples")->check(CLI::PositiveNumber);
    synth->add_option("--size", synth_size, "Image size, N or HxW (multiples of 16)");
    synth->add_option("--seed", synth_seed, "Generator seed");
    synth->add_option("--out", synth_out, "Output directory")->required();

    TrainArgs ta;
    std::string ta_manifest, ta_config, ta_out;
    int ta_fold = -1;
    int ta_epochs = 0, ta_batch = 0, ta_folds = 0;
    double ta_lr = 0.0;
    std::uint64_t ta_seed = 0;
    auto* tr = app.add_subcommand("train", "Train with k-fold cross-validation");
    tr->add_option("--manifest", ta_manifest, "Dataset manifest (TSV)")->required();
    tr->add_option("--config", ta_config, "JSON run config");
    tr->add_option("--out-dir", ta_out, "Output directory")->required();
    auto* fold_opt = tr->add_option("--fold", ta_fold, "Train and evaluate only this fold");
    auto* all_opt = tr->add_flag("--all-folds", ta.all_folds, "Train every fold (default)");
    fold_opt->excludes(all_opt);
    auto* ep_opt = tr->add_option("--epochs", ta_epochs, "Override train.epochs");
    auto* bs_opt = tr->add_option("--batch-size", ta_batch, "Override train.batch_size");
    auto* lr_opt = tr->add_option("--lr", ta_lr, "Override train.learning_rate");
    auto* fo_opt = tr->add_option("--folds", ta_folds, "Override train.folds");
    auto* sd_opt = tr->add_option("--seed", ta_seed, "Override train.seed");

    std::string ev_ckpt, ev_manifest, ev_out, ev_overlays;
    bool ev_skip = false;
    double ev_threshold = 0.5;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--manifest", ev_manifest, "Dataset manifest (TSV)")->required();
    ev->add_option("--out", ev_out, "Metrics CSV")->required();
    ev->add_option("--overlays", ev_overlays, "Directory for boundary overlays");
    ev->add_flag("--skip-bad-samples", ev_skip, "Log and skip unreadable samples instead of aborting");
    ev->add_option("--threshold", ev_threshold, "Foreground threshold");

    std::string pr_ckpt, pr_image, pr_out;
    auto* pr = app.add_subcommand("predict", "Segment one image");
    pr->add_option("--checkpoint", pr_ckpt, "Checkpoint file")->required();
    pr->add_option("--image", pr_image, "Input image")->required();
    pr->add_option("--out", pr_out, "Output mask image")->required();

    bool gc_tiny = false;
    bool gc_f64 = false;
    std::size_t gc_coords = 20;
    std::uint64_t gc_seed = 7;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full network gradient");
    gc->add_flag("--tiny-config", gc_tiny, "Channels 4/8 at 16x16 (default widths otherwise)");
    gc->add_flag("--f64", gc_f64, "Check the 64-bit network (tolerance 1e-6); default 32-bit (1e-3)");
    gc->add_option("--coords", gc_coords, "Number of sampled parameter coordinates");
    gc->add_option("--seed", gc_seed, "Seed of the check point and coordinates");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*synth) {
            return run_synth(synth_n, synth_size, synth_seed, synth_out);
        }
        if (*tr) {
            ta.manifest = ta_manifest;
            ta.config = ta_config;
            ta.out_dir = ta_out;
            if (*fold_opt) ta.fold = ta_fold;
            if (*ep_opt) ta.epochs = ta_epochs;
            if (*bs_opt) ta.batch_size = ta_batch;
            if (*lr_opt) ta.learning_rate = ta_lr;
            if (*fo_opt) ta.folds = ta_folds;
            if (*sd_opt) ta.seed = ta_seed;
            return run_train(ta);
        }
        if (*ev) {
            return run_eval(ev_ckpt, ev_manifest, ev_out, ev_overlays, ev_skip, ev_threshold);
        }
        if (*pr) {
            return run_predict(pr_ckpt, pr_image, pr_out);
        }
        if (*gc) {
            return run_gradcheck(gc_tiny, gc_f64, gc_coords, gc_seed);
        }
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return 4;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
