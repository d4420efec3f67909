// milhard command-line tool: synthetic data generation, image preprocessing,
// training, hard-negative mining, retraining, evaluation, gradient checking
// and the cross-validated experiment driver.
//
// Exit codes: 0 success, 1 validation/usage error, 2 runtime/data error.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "milhard/bagdata.hpp"
#include "milhard/experiment.hpp"
#include "milhard/metrics.hpp"
#include "milhard/milnet.hpp"
#include "milhard/mining.hpp"
#include "milhard/optim.hpp"
#include "milhard/preprocess.hpp"

namespace {

using namespace milhard;

void write_text_file(const std::string& path, const std::string& text) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw DataError("cannot open for writing: " + path);
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
}

int cmd_gen_data(const std::string& out, std::uint64_t seed, int bags, int dim,
                 double positive_fraction, double confuser_rate, double witness_rate,
                 int bag_min, int bag_max, double witness_level, double spread) {
    SynthConfig config = synth_config_for(dim, witness_level, spread);
    config.n_bags = bags;
    config.positive_fraction = positive_fraction;
    config.confuser_rate = confuser_rate;
    config.witness_rate = witness_rate;
    config.bag_size_min = bag_min;
    config.bag_size_max = bag_max;
    config.seed = seed;
    const Dataset data = generate_synthetic(config);
    save_bags(data, out);
    MILHARD_LOG_INFO("wrote " << data.bags.size() << " bags (dim " << data.feature_dim
                              << ") to " << out);
    std::printf("{\"out\": \"%s\", \"bags\": %zu, \"feature_dim\": %zu, \"seed\": %" PRIu64
                "}\n",
                out.c_str(), data.bags.size(), data.feature_dim, seed);
    return 0;
}

int cmd_preprocess(const std::vector<std::string>& images, int patch_side,
                   double tissue_fraction, int label, const std::string& out) {
    std::vector<Bag> new_bags;
    for (const std::string& path : images) {
        const RasterImage img = load_raster(path);
        const std::vector<Patch> tiles = tile_image(img, patch_side);
        const HsvThresholds thresholds = compute_hsv_thresholds(img);
        const KeepRule rule = img.channels == 3 ? KeepRule::saturation : KeepRule::value;
        std::vector<Patch> kept = filter_patches(tiles, thresholds, rule, tissue_fraction);
        for (Patch& patch : kept) patch = histogram_equalize(patch);
        const std::string stem = std::filesystem::path(path).stem().string();
        Bag bag = patches_to_bag(kept, label, stem);
        MILHARD_LOG_INFO(path << ": " << tiles.size() << " tiles, " << kept.size()
                              << " kept -> bag '" << bag.bag_id << "'");
        new_bags.push_back(std::move(bag));
    }

    Dataset data;
    if (std::filesystem::exists(out)) {
        data = load_bags(out);
    } else {
        data.feature_dim = new_bags.front().instances.front().size();
        data.provenance = "preprocessed images";
    }
    for (Bag& bag : new_bags) data.bags.push_back(std::move(bag));
    data.validate();
    save_bags(data, out);
    std::printf("{\"out\": \"%s\", \"added\": %zu, \"total_bags\": %zu}\n", out.c_str(),
                images.size(), data.bags.size());
    return 0;
}

int cmd_train(const std::string& data_path, const std::string& out,
              const std::string& profile, double lambda, std::uint64_t seed) {
    const Dataset data = load_bags(data_path);
    const PipelineConfig pc = PipelineConfig::for_profile(profile);
    ModelDims dims;
    dims.feature_dim = static_cast<int>(data.feature_dim);
    MilModel model = init_model(dims, lambda, derive_seed(seed, "init"));
    TrainConfig tc;
    tc.epochs = pc.epochs;
    tc.adam.lr = pc.lr;
    tc.adam.weight_decay = pc.weight_decay;
    tc.seed = derive_seed(seed, "train");
    const TrainReport report = train(model, data, tc);
    save_checkpoint(model, out, seed, report.best_epoch);
    std::printf("{\"checkpoint\": \"%s\", \"epochs\": %d, \"best_epoch\": %d, "
                "\"best_loss\": %s}\n",
                out.c_str(), tc.epochs, report.best_epoch,
                format_g17(report.best_loss).c_str());
    return 0;
}

int cmd_mine(const std::string& data_path, const std::string& model_path,
             const std::string& out, const std::string& gen_out,
             const std::string& strategy, int clusters, int bag_count, std::uint64_t seed) {
    const Dataset data = load_bags(data_path);
    const MilModel model = load_checkpoint(model_path);
    const HardPool pool = build_hard_pool(model, data);
    save_hard_pool(pool, out, data.feature_dim);
    std::size_t generated = 0;
    if (!gen_out.empty()) {
        GenConfig gen;
        gen.strategy = strategy_from_name(strategy);
        gen.bag_count = bag_count > 0 ? bag_count : default_bag_count(data);
        gen.size_stats = bag_size_stats(data);
        gen.clusters = clusters > 0 ? clusters : default_cluster_count(pool.size());
        gen.seed = derive_seed(seed, "gen");
        const Matrix features = extract_features(model, pool);
        const std::vector<Bag> bags = generate_bags(pool, features, gen);
        Dataset hard;
        hard.feature_dim = data.feature_dim;
        hard.provenance = "generated hard bags (" + strategy + ")";
        hard.bags = bags;
        save_bags(hard, gen_out);
        generated = bags.size();
    }
    std::printf("{\"pool\": \"%s\", \"pool_size\": %zu, \"generated_bags\": %zu}\n",
                out.c_str(), pool.size(), generated);
    return 0;
}

int cmd_retrain(const std::string& data_path, const std::string& model_path,
                const std::string& out, const std::string& profile, double lambda,
                const std::string& strategy, int clusters, int bag_count,
                std::uint64_t seed) {
    const Dataset data = load_bags(data_path);
    const MilModel base = load_checkpoint(model_path);
    const HardPool pool = build_hard_pool(base, data);
    GenConfig gen;
    gen.strategy = strategy_from_name(strategy);
    gen.bag_count = bag_count > 0 ? bag_count : default_bag_count(data);
    gen.size_stats = bag_size_stats(data);
    gen.clusters = clusters > 0 ? clusters : default_cluster_count(pool.size());
    gen.seed = derive_seed(seed, "gen");
    const Matrix features = extract_features(base, pool);
    const std::vector<Bag> hard_bags = generate_bags(pool, features, gen);
    const Dataset augmented = augment_training_set(data, hard_bags);

    const PipelineConfig pc = PipelineConfig::for_profile(profile);
    ModelDims dims;
    dims.feature_dim = static_cast<int>(data.feature_dim);
    MilModel model = init_model(dims, lambda, derive_seed(seed, "init"));
    TrainConfig tc;
    tc.epochs = pc.epochs;
    tc.adam.lr = pc.lr;
    tc.adam.weight_decay = pc.weight_decay;
    tc.seed = derive_seed(seed, "train");
    const TrainReport report = train(model, augmented, tc);
    save_checkpoint(model, out, seed, report.best_epoch);
    std::printf("{\"checkpoint\": \"%s\", \"hard_bags\": %zu, \"pool_size\": %zu, "
                "\"best_loss\": %s}\n",
                out.c_str(), hard_bags.size(), pool.size(),
                format_g17(report.best_loss).c_str());
    return 0;
}

std::string metrics_json(const RunMetrics& m) {
    auto field = [](const char* key, const std::optional<double>& v) {
        return std::string("\"") + key + "\": " + (v ? format_g17(*v) : "null");
    };
    return "{" + field("accuracy", m.accuracy) + ", " + field("precision", m.precision) +
           ", " + field("recall", m.recall) + ", " + field("f_score", m.f_score) + ", " +
           field("auc", m.auc) + ", " + field("fpr", m.fpr) + "}";
}

int cmd_eval(const std::string& data_path, const std::string& model_path,
             const std::string& roc_out) {
    const Dataset data = load_bags(data_path);
    const MilModel model = load_checkpoint(model_path);
    Vec probs;
    std::vector<int> labels;
    for (const Bag& bag : data.bags) {
        probs.push_back(forward(model, bag).probability);
        labels.push_back(bag.label);
    }
    const RunMetrics m = run_metrics(confusion(probs, labels), probs, labels);
    if (!roc_out.empty()) write_text_file(roc_out, roc_csv(roc_points(probs, labels)));
    std::printf("%s\n", metrics_json(m).c_str());
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, int trials, double tolerance) {
    if (trials < 1) throw ConfigError("--trials must be >= 1");
    std::mt19937_64 rng(derive_seed(seed, "gradcheck"));
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        ModelDims dims;
        dims.feature_dim = std::uniform_int_distribution<int>(1, 5)(rng);
        dims.embed_dim = std::uniform_int_distribution<int>(1, 6)(rng);
        dims.attention_dim = std::uniform_int_distribution<int>(1, 4)(rng);
        dims.hidden = {std::uniform_int_distribution<int>(1, 6)(rng)};
        MilModel model = init_model(dims, 2.0, derive_seed(seed, "model", t));

        std::mt19937_64 bag_rng(derive_seed(seed, "bag", t));
        std::normal_distribution<double> feat(0.0, 1.0);
        Bag bag;
        bag.bag_id = "g" + std::to_string(t);
        bag.label = std::uniform_int_distribution<int>(0, 1)(bag_rng);
        const int n = std::uniform_int_distribution<int>(1, 8)(bag_rng);
        for (int j = 0; j < n; ++j) {
            Instance inst(dims.feature_dim);
            for (double& x : inst) x = feat(bag_rng);
            bag.instances.push_back(std::move(inst));
        }
        worst = std::max(worst, grad_check(model, bag, bag.label, 1e-5));
    }
    const bool pass = worst < tolerance;
    std::printf("{\"trials\": %d, \"max_relative_error\": %s, \"tolerance\": %s, "
                "\"pass\": %s}\n",
                trials, format_g17(worst).c_str(), format_g17(tolerance).c_str(),
                pass ? "true" : "false");
    if (!pass) {
        MILHARD_LOG_ERROR("gradient check failed: " << worst << " >= " << tolerance);
        return 2;
    }
    MILHARD_LOG_INFO("gradient check passed: max relative error " << worst);
    return 0;
}

int cmd_run_experiment(const std::string& data_path, const std::string& out,
                       const std::string& profile, double lambda, int folds,
                       int repetitions, const std::string& strategy, int clusters,
                       int bag_count, int jobs, std::uint64_t seed) {
    const Dataset data = load_bags(data_path);
    PipelineConfig config = PipelineConfig::for_profile(profile);
    config.lambda = lambda;
    if (folds > 0) config.folds = folds;
    if (repetitions > 0) config.repetitions = repetitions;
    if (!strategy.empty()) {
        if (strategy == "none")
            config.strategies.clear();
        else
            config.strategies = {strategy_from_name(strategy)};
    }
    config.clusters = clusters;
    config.bag_count = bag_count;
    config.jobs = jobs;
    config.seed = seed;

    const ExperimentRecord record = run_experiment(data, config);
    std::printf("%s", record.to_table().c_str());
    if (!out.empty())
        save_record(record, out);
    else
        std::printf("%s", record.to_json().c_str());
    return 0;
}

int cmd_report(const std::string& record_path) {
    const ExperimentRecord record = load_record(record_path);
    std::printf("profile %s, %d folds x %d repetitions, lambda %s, seed %" PRIu64 "\n",
                record.profile.c_str(), record.folds, record.repetitions,
                format_g17(record.lambda).c_str(), record.seed);
    std::printf("%s", record.to_table().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Attention MIL bag classifier with hard negative bag mining"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic bag dataset");
    std::string gen_out;
    int gen_bags = 100, gen_dim = 10, gen_min = 12, gen_max = 24;
    double gen_pf = 0.5, gen_cr = 0.5, gen_wr = 0.45, gen_wl = 3.0, gen_spread = 1.0;
    gen->add_option("--out", gen_out, "Output bag JSONL path")->required();
    gen->add_option("--seed", seed, "Random seed");
    gen->add_option("--bags", gen_bags, "Number of bags");
    gen->add_option("--dim", gen_dim, "Feature dimension");
    gen->add_option("--positive-fraction", gen_pf, "Fraction of positive bags");
    gen->add_option("--confuser-rate", gen_cr, "Per-slot confuser rate in negative bags");
    gen->add_option("--witness-rate", gen_wr, "Extra-witness rate in positive bags");
    gen->add_option("--bag-min", gen_min, "Minimum bag size");
    gen->add_option("--bag-max", gen_max, "Maximum bag size");
    gen->add_option("--witness-level", gen_wl, "Witness mean per feature axis");
    gen->add_option("--spread", gen_spread, "Gaussian component spread");

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "Convert images into one bag each");
    std::vector<std::string> pre_images;
    std::string pre_out;
    int pre_side = 27, pre_label = 0;
    double pre_tissue = 0.25;
    pre->add_option("--image", pre_images, "Input PPM/PGM image(s)")->required();
    pre->add_option("--patch-side", pre_side, "Square patch side in pixels");
    pre->add_option("--tissue-fraction", pre_tissue, "Minimum tissue pixel fraction");
    pre->add_option("--label", pre_label, "Bag label (0 or 1)")->required();
    pre->add_option("--out", pre_out, "Bag JSONL to create or append to")->required();
    pre->add_option("--seed", seed, "Random seed (unused, accepted for uniformity)");

    // train
    auto* tr = app.add_subcommand("train", "Train a model on a bag dataset");
    std::string tr_data, tr_out, tr_profile = "synthetic";
    double tr_lambda = 2.0;
    tr->add_option("--data", tr_data, "Training bag JSONL")->required();
    tr->add_option("--out", tr_out, "Checkpoint output path")->required();
    tr->add_option("--profile", tr_profile, "Hyperparameter profile (colon|ucsb|synthetic)");
    tr->add_option("--lambda", tr_lambda, "Adaptive weight multiplier (>= 1)");
    tr->add_option("--seed", seed, "Random seed");

    // mine
    auto* mi = app.add_subcommand("mine", "Mine hard negatives from false-positive bags");
    std::string mi_data, mi_model, mi_out, mi_gen_out, mi_strategy = "fmb";
    int mi_clusters = 0, mi_bag_count = 0;
    mi->add_option("--data", mi_data, "Training bag JSONL")->required();
    mi->add_option("--model", mi_model, "Trained checkpoint")->required();
    mi->add_option("--out", mi_out, "Hard pool JSONL output")->required();
    mi->add_option("--gen-out", mi_gen_out, "Also write generated hard bags here");
    mi->add_option("--strategy", mi_strategy, "Generation strategy (sb|mb|fmb)");
    mi->add_option("--clusters", mi_clusters, "FMB cluster count (0 = auto)");
    mi->add_option("--bag-count", mi_bag_count, "Generated bag count (0 = auto)");
    mi->add_option("--seed", seed, "Random seed");

    // retrain
    auto* re = app.add_subcommand("retrain",
                                  "Mine, generate hard bags, and train a fresh model");
    std::string re_data, re_model, re_out, re_profile = "synthetic", re_strategy = "fmb";
    double re_lambda = 2.0;
    int re_clusters = 0, re_bag_count = 0;
    re->add_option("--data", re_data, "Training bag JSONL")->required();
    re->add_option("--model", re_model, "Base checkpoint used for mining")->required();
    re->add_option("--out", re_out, "Retrained checkpoint output")->required();
    re->add_option("--profile", re_profile, "Hyperparameter profile");
    re->add_option("--lambda", re_lambda, "Adaptive weight multiplier");
    re->add_option("--strategy", re_strategy, "Generation strategy (sb|mb|fmb)");
    re->add_option("--clusters", re_clusters, "FMB cluster count (0 = auto)");
    re->add_option("--bag-count", re_bag_count, "Generated bag count (0 = auto)");
    re->add_option("--seed", seed, "Random seed");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a bag dataset");
    std::string ev_data, ev_model, ev_roc;
    ev->add_option("--data", ev_data, "Evaluation bag JSONL")->required();
    ev->add_option("--model", ev_model, "Checkpoint to evaluate")->required();
    ev->add_option("--roc", ev_roc, "Write ROC points CSV here");
    ev->add_option("--seed", seed, "Random seed (unused, accepted for uniformity)");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
    int gc_trials = 50;
    double gc_tol = 1e-4;
    gc->add_option("--seed", seed, "Random seed");
    gc->add_option("--trials", gc_trials, "Number of random (model, bag) pairs");
    gc->add_option("--tolerance", gc_tol, "Max relative error allowed");

    // run-experiment
    auto* rx = app.add_subcommand("run-experiment",
                                  "Repeated k-fold cross-validation over all variants");
    std::string rx_data, rx_out, rx_profile = "synthetic", rx_strategy;
    double rx_lambda = 2.0;
    int rx_folds = 0, rx_reps = 0, rx_clusters = 0, rx_bag_count = 0, rx_jobs = 1;
    rx->add_option("--data", rx_data, "Bag JSONL with natural bags")->required();
    rx->add_option("--out", rx_out, "Experiment record JSON output");
    rx->add_option("--profile", rx_profile, "Hyperparameter profile");
    rx->add_option("--lambda", rx_lambda, "Adaptive weight multiplier");
    rx->add_option("--folds", rx_folds, "Fold count override (0 = profile default)");
    rx->add_option("--repetitions", rx_reps, "Repetition count (0 = default 5)");
    rx->add_option("--strategy", rx_strategy,
                   "Restrict to one strategy (sb|mb|fmb) or 'none'");
    rx->add_option("--clusters", rx_clusters, "FMB cluster count (0 = auto)");
    rx->add_option("--bag-count", rx_bag_count, "Generated bag count (0 = auto)");
    rx->add_option("--jobs", rx_jobs, "Parallel fold workers");
    rx->add_option("--seed", seed, "Random seed");

    // report
    auto* rp = app.add_subcommand("report", "Print the table for a saved record");
    std::string rp_record;
    rp->add_option("record", rp_record, "Experiment record JSON")->required();
    rp->add_option("--seed", seed, "Random seed (unused, accepted for uniformity)");

    try {
        app.parse(argc, argv);
        if (gen->parsed())
            return cmd_gen_data(gen_out, seed, gen_bags, gen_dim, gen_pf, gen_cr, gen_wr,
                                gen_min, gen_max, gen_wl, gen_spread);
        if (pre->parsed())
            return cmd_preprocess(pre_images, pre_side, pre_tissue, pre_label, pre_out);
        if (tr->parsed()) return cmd_train(tr_data, tr_out, tr_profile, tr_lambda, seed);
        if (mi->parsed())
            return cmd_mine(mi_data, mi_model, mi_out, mi_gen_out, mi_strategy, mi_clusters,
                            mi_bag_count, seed);
        if (re->parsed())
            return cmd_retrain(re_data, re_model, re_out, re_profile, re_lambda, re_strategy,
                               re_clusters, re_bag_count, seed);
        if (ev->parsed()) return cmd_eval(ev_data, ev_model, ev_roc);
        if (gc->parsed()) return cmd_gradcheck(seed, gc_trials, gc_tol);
        if (rx->parsed())
            return cmd_run_experiment(rx_data, rx_out, rx_profile, rx_lambda, rx_folds,
                                      rx_reps, rx_strategy, rx_clusters, rx_bag_count,
                                      rx_jobs, seed);
        if (rp->parsed()) return cmd_report(rp_record);
        return 1;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const ConfigError& e) {
        MILHARD_LOG_ERROR("invalid configuration: " << e.what());
        return 1;
    } catch (const DataError& e) {
        MILHARD_LOG_ERROR(e.what());
        return 2;
    } catch (const std::exception& e) {
        MILHARD_LOG_ERROR("unexpected failure: " << e.what());
        return 2;
    }
}
