#include "milhard/bagdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace milhard {

using nlohmann::json;

const char* origin_name(BagOrigin o) {
    switch (o) {
        case BagOrigin::natural: return "natural";
        case BagOrigin::generated_sb: return "generated_sb";
        case BagOrigin::generated_mb: return "generated_mb";
        case BagOrigin::generated_fmb: return "generated_fmb";
    }
    return "natural";
}

BagOrigin origin_from_name(const std::string& name) {
    if (name == "natural") return BagOrigin::natural;
    if (name == "generated_sb") return BagOrigin::generated_sb;
    if (name == "generated_mb") return BagOrigin::generated_mb;
    if (name == "generated_fmb") return BagOrigin::generated_fmb;
    throw DataError("unknown bag origin: " + name);
}

void Dataset::validate() const {
    if (bags.empty()) throw DataError("empty dataset");
    if (feature_dim == 0) throw DataError("dataset feature_dim must be positive");
    std::set<std::string> seen;
    for (const Bag& bag : bags) {
        if (!seen.insert(bag.bag_id).second)
            throw DataError("duplicate bag_id: " + bag.bag_id);
        if (bag.instances.empty())
            throw DataError("bag " + bag.bag_id + " has no instances");
        if (bag.label != 0 && bag.label != 1)
            throw DataError("bag " + bag.bag_id + " has non-binary label");
        for (const Instance& inst : bag.instances) {
            if (inst.size() != feature_dim)
                throw DataError("bag " + bag.bag_id + " instance dimension " +
                                std::to_string(inst.size()) + " != dataset dimension " +
                                std::to_string(feature_dim));
            for (double v : inst)
                if (!std::isfinite(v))
                    throw DataError("bag " + bag.bag_id + " has non-finite feature");
        }
    }
}

void SynthConfig::validate() const {
    if (n_bags < 2) throw ConfigError("SynthConfig.n_bags must be >= 2");
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0))
        throw ConfigError("SynthConfig.positive_fraction must lie in (0,1)");
    if (bag_size_min < 1) throw ConfigError("SynthConfig.bag_size_min must be >= 1");
    if (bag_size_max < bag_size_min)
        throw ConfigError("SynthConfig.bag_size_max must be >= bag_size_min");
    if (feature_dim < 1) throw ConfigError("SynthConfig.feature_dim must be >= 1");
    const auto d = static_cast<std::size_t>(feature_dim);
    if (witness_mean.size() != d) throw ConfigError("SynthConfig.witness_mean has wrong length");
    if (confuser_mean.size() != d) throw ConfigError("SynthConfig.confuser_mean has wrong length");
    if (background_mean.size() != d)
        throw ConfigError("SynthConfig.background_mean has wrong length");
    if (witness_mean == confuser_mean || witness_mean == background_mean ||
        confuser_mean == background_mean)
        throw ConfigError("SynthConfig component means must be pairwise distinct");
    if (!(cluster_spread > 0.0)) throw ConfigError("SynthConfig.cluster_spread must be > 0");
    if (confuser_rate < 0.0 || confuser_rate > 1.0)
        throw ConfigError("SynthConfig.confuser_rate must lie in [0,1]");
    if (witness_rate < 0.0 || witness_rate >= 1.0)
        throw ConfigError("SynthConfig.witness_rate must lie in [0,1)");
}

SynthConfig synth_config_for(int feature_dim, double witness_level, double spread) {
    SynthConfig cfg;
    cfg.feature_dim = feature_dim;
    cfg.cluster_spread = spread;
    // Confuser at distance 1.5*spread from the witness centre, far from the
    // background so confuser_rate=0 data stays cleanly separable.
    const double confuser_level =
        witness_level - 1.5 * spread / std::sqrt(static_cast<double>(feature_dim));
    cfg.witness_mean.assign(feature_dim, witness_level);
    cfg.confuser_mean.assign(feature_dim, confuser_level);
    cfg.background_mean.assign(feature_dim, 0.0);
    return cfg;
}

SynthConfig default_synth_config(int feature_dim) {
    return synth_config_for(feature_dim, 3.0, 1.0);
}

namespace {

Instance draw_instance(const Vec& mean, double spread, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, spread);
    Instance inst(mean.size());
    for (std::size_t d = 0; d < mean.size(); ++d)
        inst[d] = quantize_sig9(mean[d] + noise(rng));
    return inst;
}

std::string make_bag_id(int index, int n_bags) {
    int width = 3;
    for (int v = n_bags - 1; v >= 1000; v /= 10) ++width;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "b%0*d", std::min(width, 10), index);
    return buf;
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<int> size_dist(config.bag_size_min, config.bag_size_max);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const int n_pos = static_cast<int>(std::llround(config.n_bags * config.positive_fraction));

    Dataset out;
    out.feature_dim = static_cast<std::size_t>(config.feature_dim);
    {
        std::ostringstream prov;
        prov << "synthetic n_bags=" << config.n_bags << " pos_frac=" << config.positive_fraction
             << " sizes=[" << config.bag_size_min << "," << config.bag_size_max << "]"
             << " dim=" << config.feature_dim << " spread=" << config.cluster_spread
             << " confuser_rate=" << config.confuser_rate
             << " witness_rate=" << config.witness_rate << " seed=" << config.seed;
        out.provenance = prov.str();
    }

    for (int i = 0; i < config.n_bags; ++i) {
        Bag bag;
        bag.bag_id = make_bag_id(i, config.n_bags);
        bag.label = i < n_pos ? 1 : 0;
        const int n_inst = size_dist(rng);
        bag.instances.reserve(n_inst);
        for (int j = 0; j < n_inst; ++j) {
            // Positive bags get one guaranteed witness in slot 0 and further
            // witnesses at rate witness_rate; slots not taken by a witness
            // (including every slot of a negative bag) split between
            // background and confusers at rate confuser_rate.
            const Vec* mean = &config.background_mean;
            const double u = unit(rng);
            const double wr = bag.label == 1 ? config.witness_rate : 0.0;
            if (bag.label == 1 && j == 0)
                mean = &config.witness_mean;
            else if (u < wr)
                mean = &config.witness_mean;
            else if (u < wr + (1.0 - wr) * config.confuser_rate)
                mean = &config.confuser_mean;
            bag.instances.push_back(draw_instance(*mean, config.cluster_spread, rng));
        }
        std::shuffle(bag.instances.begin(), bag.instances.end(), rng);
        out.bags.push_back(std::move(bag));
    }
    out.validate();
    return out;
}

void save_bags(const Dataset& dataset, const std::string& path) {
    dataset.validate();
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw DataError("cannot open for writing: " + path);

    std::string line = "{\"feature_dim\": " + std::to_string(dataset.feature_dim) +
                       ", \"provenance\": " + json(dataset.provenance).dump() + "}\n";
    file << line;
    for (const Bag& bag : dataset.bags) {
        line.clear();
        line += "{\"bag_id\": ";
        line += json(bag.bag_id).dump();
        line += ", \"label\": ";
        line += std::to_string(bag.label);
        line += ", \"origin\": \"";
        line += origin_name(bag.origin);
        line += "\", \"instances\": [";
        for (std::size_t j = 0; j < bag.instances.size(); ++j) {
            if (j) line += ", ";
            line += '[';
            const Instance& inst = bag.instances[j];
            for (std::size_t d = 0; d < inst.size(); ++d) {
                if (d) line += ", ";
                line += format_g9(inst[d]);
            }
            line += ']';
        }
        line += "]}\n";
        file << line;
    }
    if (!file) throw DataError("write failed: " + path);
}

Dataset load_bags(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open: " + path);

    Dataset out;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(file, line)) {
        ++line_no;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": parse error: " + e.what());
        }
        try {
            if (!have_header) {
                out.feature_dim = obj.at("feature_dim").get<std::size_t>();
                out.provenance = obj.value("provenance", std::string{});
                have_header = true;
                continue;
            }
            Bag bag;
            bag.bag_id = obj.at("bag_id").get<std::string>();
            bag.label = obj.at("label").get<int>();
            bag.origin = origin_from_name(obj.value("origin", std::string("natural")));
            for (const json& arr : obj.at("instances")) {
                Instance inst = arr.get<Instance>();
                if (inst.size() != out.feature_dim)
                    throw DataError(path + ":" + std::to_string(line_no) + ": bag " + bag.bag_id +
                                    " instance dimension " + std::to_string(inst.size()) +
                                    " != declared feature_dim " + std::to_string(out.feature_dim));
                bag.instances.push_back(std::move(inst));
            }
            out.bags.push_back(std::move(bag));
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad record: " + e.what());
        }
    }
    if (!have_header || out.bags.empty()) throw DataError(path + ": empty dataset");
    out.validate();
    return out;
}

std::vector<std::pair<Dataset, Dataset>> kfold_split(const Dataset& dataset, int k,
                                                     std::uint64_t seed) {
    dataset.validate();
    const std::size_t n = dataset.bags.size();
    if (k < 2) throw ConfigError("kfold_split requires k >= 2");
    if (static_cast<std::size_t>(k) > n)
        throw ConfigError("kfold_split: k=" + std::to_string(k) + " exceeds bag count " +
                          std::to_string(n));

    std::vector<std::size_t> positives, negatives;
    for (std::size_t i = 0; i < n; ++i)
        (dataset.bags[i].label == 1 ? positives : negatives).push_back(i);

    std::mt19937_64 rng(seed);
    std::shuffle(positives.begin(), positives.end(), rng);
    std::shuffle(negatives.begin(), negatives.end(), rng);

    // Deal positives round-robin, then continue with negatives, so both the
    // fold sizes and the per-fold label counts are balanced to within one.
    std::vector<int> fold_of(n);
    std::size_t dealt = 0;
    for (std::size_t idx : positives) fold_of[idx] = static_cast<int>(dealt++ % k);
    for (std::size_t idx : negatives) fold_of[idx] = static_cast<int>(dealt++ % k);

    std::vector<std::pair<Dataset, Dataset>> folds;
    folds.reserve(k);
    for (int f = 0; f < k; ++f) {
        Dataset train, test;
        train.feature_dim = test.feature_dim = dataset.feature_dim;
        train.provenance = dataset.provenance + " [fold " + std::to_string(f) + "/" +
                           std::to_string(k) + " train]";
        test.provenance = dataset.provenance + " [fold " + std::to_string(f) + "/" +
                          std::to_string(k) + " test]";
        for (std::size_t i = 0; i < n; ++i)
            (fold_of[i] == f ? test : train).bags.push_back(dataset.bags[i]);
        folds.emplace_back(std::move(train), std::move(test));
    }
    return folds;
}

BagSizeStats bag_size_stats(const Dataset& dataset) {
    dataset.validate();
    BagSizeStats stats;
    double sum = 0.0;
    int zmin = std::numeric_limits<int>::max();
    int zmax = 0;
    for (const Bag& bag : dataset.bags) {
        const int sz = static_cast<int>(bag.size());
        sum += sz;
        zmin = std::min(zmin, sz);
        zmax = std::max(zmax, sz);
    }
    const double n = static_cast<double>(dataset.bags.size());
    stats.mu = sum / n;
    double ss = 0.0;
    for (const Bag& bag : dataset.bags) {
        const double d = static_cast<double>(bag.size()) - stats.mu;
        ss += d * d;
    }
    stats.sigma = std::sqrt(ss / n);  // population std
    stats.z_min = zmin;
    stats.z_max = zmax;
    return stats;
}

}  // namespace milhard
