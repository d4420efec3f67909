#include "milhard/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace milhard {

using nlohmann::json;

PipelineConfig PipelineConfig::for_profile(const std::string& name) {
    PipelineConfig config;
    config.profile = name;
    if (name == "colon") {
        config.lr = 5e-5;
        config.weight_decay = 5e-4;
        config.epochs = 120;
        config.folds = 10;
    } else if (name == "ucsb") {
        config.lr = 5e-6;
        config.weight_decay = 1e-4;
        config.epochs = 300;
        config.folds = 4;
    } else if (name == "synthetic") {
        config.lr = 1e-3;
        config.weight_decay = 1e-4;
        config.epochs = 60;
        config.folds = 5;
        // Desk-scale network: a linear embedder with a scalar embedding
        // generalizes from ~100 bags, where wider nets memorize the
        // training set and the cross-validated scores collapse.
        config.dims.hidden = {};
        config.dims.embed_dim = 1;
        config.dims.attention_dim = 4;
    } else {
        throw ConfigError("unknown profile '" + name +
                          "' (expected colon, ucsb or synthetic)");
    }
    return config;
}

void PipelineConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("PipelineConfig.lr must be > 0");
    if (weight_decay < 0.0) throw ConfigError("PipelineConfig.weight_decay must be >= 0");
    if (epochs < 1) throw ConfigError("PipelineConfig.epochs must be >= 1");
    if (folds < 2) throw ConfigError("PipelineConfig.folds must be >= 2");
    if (lambda < 1.0) throw ConfigError("PipelineConfig.lambda must be >= 1");
    if (repetitions < 1) throw ConfigError("PipelineConfig.repetitions must be >= 1");
    if (bag_count < 0) throw ConfigError("PipelineConfig.bag_count must be >= 0");
    if (clusters < 0) throw ConfigError("PipelineConfig.clusters must be >= 0");
    if (jobs < 1) throw ConfigError("PipelineConfig.jobs must be >= 1");
}

std::string variant_name_base() { return "attention"; }
std::string variant_name_adaptive() { return "adaptive"; }
std::string variant_name_for(GenStrategy s) {
    return std::string("adaptive+") + strategy_name(s);
}

namespace {

struct CellEval {
    Vec probs;
    std::vector<int> labels;
};

CellEval evaluate_on(const MilModel& model, const Dataset& test) {
    CellEval eval;
    eval.probs.reserve(test.bags.size());
    eval.labels.reserve(test.bags.size());
    for (const Bag& bag : test.bags) {
        eval.probs.push_back(forward(model, bag).probability);
        eval.labels.push_back(bag.label);
    }
    return eval;
}

RunMetrics metrics_of(const CellEval& eval) {
    return run_metrics(confusion(eval.probs, eval.labels), eval.probs, eval.labels);
}

MilModel train_variant(const ModelDims& dims, double lambda, const Dataset& trainset,
                       const PipelineConfig& config, const char* tag, int rep, int fold) {
    MilModel model = init_model(
        dims, lambda,
        derive_seed(config.seed, (std::string("init-") + tag).c_str(),
                    static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(fold)));
    TrainConfig tc;
    tc.epochs = config.epochs;
    tc.adam.lr = config.lr;
    tc.adam.weight_decay = config.weight_decay;
    tc.seed = derive_seed(config.seed, (std::string("train-") + tag).c_str(),
                          static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(fold));
    train(model, trainset, tc);
    return model;
}

// Every variant for one (repetition, fold) pair; slot 0 is the lambda=1
// baseline, slot 1 the adaptive model, then one slot per strategy.
std::vector<CellEval> run_cell(const Dataset& trainset, const Dataset& test,
                               const ModelDims& dims, const PipelineConfig& config, int rep,
                               int fold) {
    for (const Bag& bag : test.bags)
        if (bag.origin != BagOrigin::natural)
            throw DataError("test fold contains a generated bag: " + bag.bag_id);

    std::vector<CellEval> evals;
    evals.reserve(2 + config.strategies.size());

    const MilModel base =
        train_variant(dims, 1.0, trainset, config, variant_name_base().c_str(), rep, fold);
    evals.push_back(evaluate_on(base, test));

    const MilModel adaptive = train_variant(dims, config.lambda, trainset, config,
                                            variant_name_adaptive().c_str(), rep, fold);
    evals.push_back(evaluate_on(adaptive, test));

    if (config.strategies.empty()) return evals;

    const HardPool pool = build_hard_pool(adaptive, trainset);
    const Matrix features = extract_features(adaptive, pool);
    const BagSizeStats stats = bag_size_stats(trainset);

    for (const GenStrategy strategy : config.strategies) {
        const std::string name = variant_name_for(strategy);
        if (pool.empty()) {
            MILHARD_LOG_INFO("rep " << rep << " fold " << fold << ": empty hard pool, "
                                    << name << " reuses the adaptive model");
            evals.push_back(evals[1]);
            continue;
        }
        GenConfig gen;
        gen.strategy = strategy;
        gen.bag_count = config.bag_count > 0 ? config.bag_count : default_bag_count(trainset);
        gen.size_stats = stats;
        const int wanted = config.clusters > 0 ? config.clusters
                                               : default_cluster_count(pool.size());
        gen.clusters = static_cast<int>(
            std::min<std::size_t>(static_cast<std::size_t>(wanted), pool.size()));
        gen.seed = derive_seed(config.seed, (std::string("gen-") + name).c_str(),
                               static_cast<std::uint64_t>(rep),
                               static_cast<std::uint64_t>(fold));
        const std::vector<Bag> hard_bags = generate_bags(pool, features, gen);
        const Dataset augmented = augment_training_set(trainset, hard_bags);
        // Same init and shuffle streams as the adaptive variant, so the only
        // difference between the two runs is the augmented training set.
        const MilModel retrained = train_variant(dims, config.lambda, augmented, config,
                                                 variant_name_adaptive().c_str(), rep, fold);
        evals.push_back(evaluate_on(retrained, test));
    }
    return evals;
}

}  // namespace

ExperimentRecord run_experiment(const Dataset& data, const PipelineConfig& config) {
    config.validate();
    data.validate();
    for (const Bag& bag : data.bags)
        if (bag.origin != BagOrigin::natural)
            throw ConfigError("run_experiment expects natural bags only; found generated bag " +
                              bag.bag_id);
    if (static_cast<std::size_t>(config.folds) > data.bags.size())
        throw ConfigError("more folds than bags");

    ModelDims dims = config.dims;
    dims.feature_dim = static_cast<int>(data.feature_dim);
    dims.validate();

    // Fold splits are precomputed so worker scheduling cannot affect them.
    std::vector<std::vector<std::pair<Dataset, Dataset>>> splits;
    splits.reserve(config.repetitions);
    for (int rep = 0; rep < config.repetitions; ++rep)
        splits.push_back(kfold_split(
            data, config.folds,
            derive_seed(config.seed, "folds", static_cast<std::uint64_t>(rep))));

    const std::size_t n_tasks =
        static_cast<std::size_t>(config.repetitions) * static_cast<std::size_t>(config.folds);
    std::vector<std::vector<CellEval>> cells(n_tasks);

    auto run_task = [&](std::size_t task) {
        const int rep = static_cast<int>(task) / config.folds;
        const int fold = static_cast<int>(task) % config.folds;
        const auto& split = splits[rep][fold];
        cells[task] = run_cell(split.first, split.second, dims, config, rep, fold);
    };

    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(config.jobs), n_tasks);
    if (workers <= 1) {
        for (std::size_t t = 0; t < n_tasks; ++t) run_task(t);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (;;) {
                        const std::size_t t = next.fetch_add(1);
                        if (t >= n_tasks) return;
                        run_task(t);
                    }
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (const auto& err : errors)
            if (err) std::rethrow_exception(err);
    }

    ExperimentRecord record;
    record.profile = config.profile;
    record.lambda = config.lambda;
    record.folds = config.folds;
    record.repetitions = config.repetitions;
    record.epochs = config.epochs;
    record.lr = config.lr;
    record.weight_decay = config.weight_decay;
    record.seed = config.seed;
    record.feature_dim = data.feature_dim;
    record.bag_total = data.bags.size();

    std::vector<std::string> names{variant_name_base(), variant_name_adaptive()};
    for (const GenStrategy s : config.strategies) names.push_back(variant_name_for(s));

    for (std::size_t v = 0; v < names.size(); ++v) {
        VariantResult result;
        result.method = names[v];
        for (int rep = 0; rep < config.repetitions; ++rep) {
            CellEval pooled;
            for (int fold = 0; fold < config.folds; ++fold) {
                const CellEval& cell =
                    cells[static_cast<std::size_t>(rep) * config.folds + fold][v];
                result.per_fold.push_back({rep, fold, metrics_of(cell)});
                pooled.probs.insert(pooled.probs.end(), cell.probs.begin(), cell.probs.end());
                pooled.labels.insert(pooled.labels.end(), cell.labels.begin(),
                                     cell.labels.end());
            }
            result.per_repetition.push_back(metrics_of(pooled));
        }
        result.aggregate = aggregate(result.per_repetition);
        record.variants.push_back(std::move(result));
    }
    return record;
}

// ---------------------------------------------------------------------------
// Record serialization
// ---------------------------------------------------------------------------

namespace {

void append_opt(std::string& out, const char* key, const std::optional<double>& value) {
    out += '"';
    out += key;
    out += "\": ";
    out += value ? format_g17(*value) : "null";
}

void append_metrics(std::string& out, const RunMetrics& m) {
    out += '{';
    append_opt(out, "accuracy", m.accuracy);
    out += ", ";
    append_opt(out, "precision", m.precision);
    out += ", ";
    append_opt(out, "recall", m.recall);
    out += ", ";
    append_opt(out, "f_score", m.f_score);
    out += ", ";
    append_opt(out, "auc", m.auc);
    out += ", ";
    append_opt(out, "fpr", m.fpr);
    out += '}';
}

void append_aggregate(std::string& out, const MetricAggregate& a) {
    out += '{';
    append_opt(out, "mean", a.mean);
    out += ", ";
    append_opt(out, "stderr", a.stderr_);
    out += ", \"n\": " + std::to_string(a.n) + "}";
}

std::optional<double> opt_of(const json& j, const char* key) {
    const json& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
}

RunMetrics metrics_of_json(const json& j) {
    RunMetrics m;
    m.accuracy = opt_of(j, "accuracy");
    m.precision = opt_of(j, "precision");
    m.recall = opt_of(j, "recall");
    m.f_score = opt_of(j, "f_score");
    m.auc = opt_of(j, "auc");
    m.fpr = opt_of(j, "fpr");
    return m;
}

MetricAggregate aggregate_of_json(const json& j) {
    MetricAggregate a;
    a.mean = opt_of(j, "mean");
    a.stderr_ = opt_of(j, "stderr");
    a.n = j.at("n").get<int>();
    return a;
}

}  // namespace

std::string ExperimentRecord::to_json() const {
    std::string out = "{\n  \"profile\": ";
    out += json(profile).dump();
    out += ",\n  \"lambda\": " + format_g17(lambda);
    out += ",\n  \"folds\": " + std::to_string(folds);
    out += ",\n  \"repetitions\": " + std::to_string(repetitions);
    out += ",\n  \"epochs\": " + std::to_string(epochs);
    out += ",\n  \"lr\": " + format_g17(lr);
    out += ",\n  \"weight_decay\": " + format_g17(weight_decay);
    out += ",\n  \"seed\": " + std::to_string(seed);
    out += ",\n  \"feature_dim\": " + std::to_string(feature_dim);
    out += ",\n  \"bag_total\": " + std::to_string(bag_total);
    out += ",\n  \"variants\": [";
    for (std::size_t v = 0; v < variants.size(); ++v) {
        const VariantResult& var = variants[v];
        out += v ? ",\n    {" : "\n    {";
        out += "\"method\": " + json(var.method).dump();
        out += ",\n     \"per_fold\": [";
        for (std::size_t i = 0; i < var.per_fold.size(); ++i) {
            if (i) out += ", ";
            out += "{\"repetition\": " + std::to_string(var.per_fold[i].repetition);
            out += ", \"fold\": " + std::to_string(var.per_fold[i].fold);
            out += ", \"metrics\": ";
            append_metrics(out, var.per_fold[i].metrics);
            out += '}';
        }
        out += "],\n     \"per_repetition\": [";
        for (std::size_t i = 0; i < var.per_repetition.size(); ++i) {
            if (i) out += ", ";
            append_metrics(out, var.per_repetition[i]);
        }
        out += "],\n     \"aggregate\": {";
        const AggregateReport& agg = var.aggregate;
        const std::pair<const char*, const MetricAggregate*> parts[] = {
            {"accuracy", &agg.accuracy}, {"precision", &agg.precision},
            {"recall", &agg.recall},     {"f_score", &agg.f_score},
            {"auc", &agg.auc},           {"fpr", &agg.fpr}};
        for (std::size_t i = 0; i < 6; ++i) {
            if (i) out += ", ";
            out += '"';
            out += parts[i].first;
            out += "\": ";
            append_aggregate(out, *parts[i].second);
        }
        out += ", \"run_count\": " + std::to_string(agg.run_count) + "}}";
    }
    out += "\n  ]\n}\n";
    return out;
}

ExperimentRecord ExperimentRecord::from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("record parse error: ") + e.what());
    }
    try {
        ExperimentRecord record;
        record.profile = doc.at("profile").get<std::string>();
        record.lambda = doc.at("lambda").get<double>();
        record.folds = doc.at("folds").get<int>();
        record.repetitions = doc.at("repetitions").get<int>();
        record.epochs = doc.at("epochs").get<int>();
        record.lr = doc.at("lr").get<double>();
        record.weight_decay = doc.at("weight_decay").get<double>();
        record.seed = doc.at("seed").get<std::uint64_t>();
        record.feature_dim = doc.at("feature_dim").get<std::size_t>();
        record.bag_total = doc.at("bag_total").get<std::size_t>();
        for (const json& var : doc.at("variants")) {
            VariantResult result;
            result.method = var.at("method").get<std::string>();
            for (const json& cell : var.at("per_fold"))
                result.per_fold.push_back({cell.at("repetition").get<int>(),
                                           cell.at("fold").get<int>(),
                                           metrics_of_json(cell.at("metrics"))});
            for (const json& rep : var.at("per_repetition"))
                result.per_repetition.push_back(metrics_of_json(rep));
            const json& agg = var.at("aggregate");
            result.aggregate.accuracy = aggregate_of_json(agg.at("accuracy"));
            result.aggregate.precision = aggregate_of_json(agg.at("precision"));
            result.aggregate.recall = aggregate_of_json(agg.at("recall"));
            result.aggregate.f_score = aggregate_of_json(agg.at("f_score"));
            result.aggregate.auc = aggregate_of_json(agg.at("auc"));
            result.aggregate.fpr = aggregate_of_json(agg.at("fpr"));
            result.aggregate.run_count = agg.at("run_count").get<int>();
            record.variants.push_back(std::move(result));
        }
        return record;
    } catch (const json::exception& e) {
        throw DataError(std::string("record: bad document: ") + e.what());
    }
}

std::string ExperimentRecord::to_table() const {
    std::vector<std::string> names;
    std::vector<AggregateReport> reports;
    for (const VariantResult& var : variants) {
        names.push_back(var.method);
        reports.push_back(var.aggregate);
    }
    return format_table(names, reports);
}

void save_record(const ExperimentRecord& record, const std::string& path) {
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw DataError("cannot open for writing: " + path);
    file << record.to_json();
    if (!file) throw DataError("write failed: " + path);
}

ExperimentRecord load_record(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open: " + path);
    std::stringstream ss;
    ss << file.rdbuf();
    return ExperimentRecord::from_json(ss.str());
}

}  // namespace milhard
