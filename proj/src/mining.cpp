#include "milhard/mining.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace milhard {

using nlohmann::json;

const char* strategy_name(GenStrategy s) {
    switch (s) {
        case GenStrategy::sb: return "sb";
        case GenStrategy::mb: return "mb";
        case GenStrategy::fmb: return "fmb";
    }
    throw ConfigError("unknown strategy");
}

GenStrategy strategy_from_name(const std::string& name) {
    if (name == "sb") return GenStrategy::sb;
    if (name == "mb") return GenStrategy::mb;
    if (name == "fmb") return GenStrategy::fmb;
    throw ConfigError("unknown strategy '" + name + "' (expected sb, mb or fmb)");
}

BagOrigin strategy_origin(GenStrategy s) {
    switch (s) {
        case GenStrategy::sb: return BagOrigin::generated_sb;
        case GenStrategy::mb: return BagOrigin::generated_mb;
        case GenStrategy::fmb: return BagOrigin::generated_fmb;
    }
    throw ConfigError("unknown strategy");
}

void GenConfig::validate() const {
    if (bag_count < 1) throw ConfigError("GenConfig.bag_count must be >= 1");
    if (clusters < 1) throw ConfigError("GenConfig.clusters must be >= 1");
    if (size_stats.z_min < 1 || size_stats.z_max < size_stats.z_min)
        throw ConfigError("GenConfig.size_stats bounds are invalid");
}

namespace {

// Two-pass mean / population std, accumulated in ascending index order.
void weight_stats(const Vec& w, double& mean_out, double& std_out) {
    double sum = 0.0;
    for (double x : w) sum += x;
    const double mean = sum / static_cast<double>(w.size());
    double sq = 0.0;
    for (double x : w) sq += (x - mean) * (x - mean);
    mean_out = mean;
    std_out = std::sqrt(sq / static_cast<double>(w.size()));
}

}  // namespace

std::vector<FalsePositiveBag> find_false_positives(const MilModel& model,
                                                   const Dataset& trainset) {
    std::vector<FalsePositiveBag> out;
    for (std::size_t i = 0; i < trainset.bags.size(); ++i) {
        const Bag& bag = trainset.bags[i];
        if (bag.label != 0) continue;
        const ForwardTrace trace = forward(model, bag);
        if (trace.probability < 0.5) continue;
        FalsePositiveBag fp;
        fp.bag_id = bag.bag_id;
        fp.bag_index = i;
        fp.weights = trace.weights;
        fp.probability = trace.probability;
        weight_stats(fp.weights, fp.mean, fp.stddev);
        out.push_back(std::move(fp));
    }
    MILHARD_LOG_DEBUG("found " << out.size() << " false-positive bags");
    return out;
}

std::vector<std::size_t> select_hard_instances(const FalsePositiveBag& fp) {
    if (fp.weights.empty()) throw DataError("select_hard_instances: empty weight vector");
    const double threshold = fp.stddev + fp.mean;
    std::vector<std::size_t> indices;
    for (std::size_t i = 0; i < fp.weights.size(); ++i)
        if (fp.weights[i] >= threshold) indices.push_back(i);
    return indices;
}

HardPool build_hard_pool(const MilModel& model, const Dataset& trainset) {
    HardPool pool;
    for (const FalsePositiveBag& fp : find_false_positives(model, trainset)) {
        const Bag& bag = trainset.bags[fp.bag_index];
        for (std::size_t i : select_hard_instances(fp)) {
            HardPoolEntry entry;
            entry.instance = bag.instances[i];
            entry.source_bag_id = fp.bag_id;
            entry.weight = fp.weights[i];
            pool.instances.push_back(std::move(entry));
        }
    }
    MILHARD_LOG_INFO("hard pool holds " << pool.size() << " instances");
    return pool;
}

Matrix extract_features(const MilModel& model, const HardPool& pool) {
    Bag scratch;
    scratch.bag_id = "hard-pool";
    scratch.label = 0;
    scratch.instances.reserve(pool.size());
    for (const HardPoolEntry& e : pool.instances) scratch.instances.push_back(e.instance);
    if (scratch.instances.empty()) return Matrix(0, model.dims.embed_dim);
    return embed_instances(model, scratch);
}

namespace {

double sq_dist(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace

ClusterSet kmeans(const Matrix& features, int c, std::uint64_t seed, int max_iter) {
    const std::size_t n = features.rows;
    const std::size_t d = features.cols;
    if (c < 1) throw ConfigError("kmeans: c must be >= 1");
    if (static_cast<std::size_t>(c) > n)
        throw ConfigError("kmeans: c = " + std::to_string(c) + " exceeds row count " +
                          std::to_string(n));
    if (max_iter < 1) throw ConfigError("kmeans: max_iter must be >= 1");

    std::mt19937_64 rng(seed);
    ClusterSet set;
    set.c = c;

    // k-means++: first centroid uniform, then proportional to squared
    // distance from the nearest chosen centroid.
    std::vector<std::size_t> chosen;
    chosen.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
    Vec nearest(n, 0.0);
    while (chosen.size() < static_cast<std::size_t>(c)) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t k : chosen)
                best = std::min(best, sq_dist(features.row(i), features.row(k), d));
            nearest[i] = best;
            total += best;
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double r = std::uniform_real_distribution<double>(0.0, total)(rng);
            double cum = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                cum += nearest[i];
                if (r < cum) {
                    pick = i;
                    break;
                }
            }
        } else {
            // all rows coincide with a chosen centroid
            pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        }
        chosen.push_back(pick);
    }
    set.centroids.reserve(c);
    for (std::size_t k : chosen) {
        const double* row = features.row(k);
        set.centroids.emplace_back(row, row + d);
    }

    set.assignments.assign(n, -1);
    std::vector<int> prev(n, -1);
    for (int iter = 0; iter < max_iter; ++iter) {
        // assignment: nearest centroid, lowest index on ties
        for (std::size_t i = 0; i < n; ++i) {
            int best_k = 0;
            double best = sq_dist(features.row(i), set.centroids[0].data(), d);
            for (int k = 1; k < c; ++k) {
                const double dist = sq_dist(features.row(i), set.centroids[k].data(), d);
                if (dist < best) {
                    best = dist;
                    best_k = k;
                }
            }
            set.assignments[i] = best_k;
        }

        // repair empty clusters with the point farthest from its centroid
        set.sizes.assign(c, 0);
        for (int a : set.assignments) set.sizes[a] += 1;
        std::vector<char> moved(n, 0);
        for (int k = 0; k < c; ++k) {
            if (set.sizes[k] > 0) continue;
            std::size_t far_i = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (moved[i] || set.sizes[set.assignments[i]] <= 1) continue;
                const double dist =
                    sq_dist(features.row(i), set.centroids[set.assignments[i]].data(), d);
                if (dist > far_d) {
                    far_d = dist;
                    far_i = i;
                }
            }
            if (far_d < 0.0) continue;  // nothing movable (degenerate data)
            set.sizes[set.assignments[far_i]] -= 1;
            set.assignments[far_i] = k;
            set.sizes[k] = 1;
            moved[far_i] = 1;
        }

        // update: centroid = mean of members, ascending accumulation
        for (int k = 0; k < c; ++k) std::fill(set.centroids[k].begin(), set.centroids[k].end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            Vec& cen = set.centroids[set.assignments[i]];
            const double* row = features.row(i);
            for (std::size_t j = 0; j < d; ++j) cen[j] += row[j];
        }
        for (int k = 0; k < c; ++k) {
            if (set.sizes[k] == 0) continue;
            for (double& x : set.centroids[k]) x /= static_cast<double>(set.sizes[k]);
        }

        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            inertia += sq_dist(features.row(i), set.centroids[set.assignments[i]].data(), d);
        set.inertia_history.push_back(inertia);

        if (set.assignments == prev) break;
        prev = set.assignments;
    }
    return set;
}

int sample_bag_size(const BagSizeStats& stats, std::mt19937_64& rng) {
    double draw = stats.mu;
    if (stats.sigma > 0.0) draw = std::normal_distribution<double>(stats.mu, stats.sigma)(rng);
    long size = std::lround(draw);
    size = std::clamp(size, static_cast<long>(stats.z_min), static_cast<long>(stats.z_max));
    return static_cast<int>(std::max(size, 1L));
}

std::vector<Bag> generate_bags(const HardPool& pool, const Matrix& features,
                               const GenConfig& config) {
    config.validate();
    if (pool.empty())
        throw DataError("nothing to mine: the hard pool is empty; skip augmentation");
    const std::size_t p = pool.size();
    const BagOrigin origin = strategy_origin(config.strategy);
    std::mt19937_64 rng(config.seed);

    auto make_bag = [&](std::size_t serial, const std::vector<std::size_t>& picks) {
        Bag bag;
        char id[48];
        std::snprintf(id, sizeof id, "hard_%s_%03zu", strategy_name(config.strategy), serial);
        bag.bag_id = id;
        bag.label = 0;
        bag.origin = origin;
        bag.instances.reserve(picks.size());
        for (std::size_t i : picks) bag.instances.push_back(pool.instances[i].instance);
        return bag;
    };

    std::vector<Bag> bags;
    if (config.strategy == GenStrategy::sb) {
        std::vector<std::size_t> all(p);
        std::iota(all.begin(), all.end(), std::size_t{0});
        bags.push_back(make_bag(0, all));
        return bags;
    }

    if (config.strategy == GenStrategy::mb) {
        std::vector<std::size_t> deck(p);
        for (int b = 0; b < config.bag_count; ++b) {
            const std::size_t size = sample_bag_size(config.size_stats, rng);
            std::vector<std::size_t> picks;
            picks.reserve(size);
            if (size <= p) {
                // partial Fisher-Yates: uniform draw without replacement
                std::iota(deck.begin(), deck.end(), std::size_t{0});
                for (std::size_t s = 0; s < size; ++s) {
                    const std::size_t j =
                        std::uniform_int_distribution<std::size_t>(s, p - 1)(rng);
                    std::swap(deck[s], deck[j]);
                    picks.push_back(deck[s]);
                }
            } else {
                for (std::size_t s = 0; s < size; ++s)
                    picks.push_back(std::uniform_int_distribution<std::size_t>(0, p - 1)(rng));
            }
            bags.push_back(make_bag(static_cast<std::size_t>(b), picks));
        }
        return bags;
    }

    // fmb
    if (static_cast<std::size_t>(config.clusters) > p)
        throw ConfigError("GenConfig.clusters exceeds hard pool size");
    if (features.rows != p)
        throw DataError("generate_bags: feature rows do not match pool size");
    const ClusterSet clusters =
        kmeans(features, config.clusters, derive_seed(config.seed, "kmeans"));
    std::vector<std::vector<std::size_t>> members(config.clusters);
    for (std::size_t i = 0; i < p; ++i)
        members[clusters.assignments[i]].push_back(i);

    // pick probabilities P_j = N_j / sum N_j
    std::vector<double> cum(config.clusters, 0.0);
    double acc = 0.0;
    for (int k = 0; k < config.clusters; ++k) {
        acc += static_cast<double>(clusters.sizes[k]) / static_cast<double>(p);
        cum[k] = acc;
    }

    for (int b = 0; b < config.bag_count; ++b) {
        const std::size_t size = sample_bag_size(config.size_stats, rng);
        std::vector<std::size_t> picks;
        std::unordered_set<std::size_t> used;
        picks.reserve(size);
        for (std::size_t s = 0; s < size; ++s) {
            const double r = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            int k = config.clusters - 1;
            for (int j = 0; j < config.clusters; ++j)
                if (r < cum[j]) {
                    k = j;
                    break;
                }
            const auto& group = members[k];
            std::size_t pick = group[std::uniform_int_distribution<std::size_t>(
                0, group.size() - 1)(rng)];
            for (std::size_t attempt = 0; attempt < p && used.count(pick); ++attempt)
                pick = group[std::uniform_int_distribution<std::size_t>(0, group.size() - 1)(rng)];
            used.insert(pick);
            picks.push_back(pick);
        }
        bags.push_back(make_bag(static_cast<std::size_t>(b), picks));
    }
    return bags;
}

Dataset augment_training_set(const Dataset& trainset, const std::vector<Bag>& hard_bags) {
    Dataset out = trainset;
    for (const Bag& bag : hard_bags) {
        for (const Instance& inst : bag.instances)
            if (inst.size() != out.feature_dim)
                throw DataError("augment_training_set: bag " + bag.bag_id +
                                " dimension mismatch");
        out.bags.push_back(bag);
    }
    if (!hard_bags.empty())
        out.provenance += " [augmented: " + std::to_string(hard_bags.size()) + " hard bags]";
    out.validate();
    return out;
}

int default_cluster_count(std::size_t pool_size) {
    return static_cast<int>(std::min<std::size_t>(4, pool_size));
}

int default_bag_count(const Dataset& trainset) {
    int n = 0;
    for (const Bag& bag : trainset.bags)
        if (bag.label == 0 && bag.origin == BagOrigin::natural) ++n;
    return n;
}

void save_hard_pool(const HardPool& pool, const std::string& path, std::size_t feature_dim) {
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw DataError("cannot open for writing: " + path);
    file << "{\"feature_dim\": " << feature_dim
         << ", \"provenance\": \"hard instance pool\"}\n";
    for (const HardPoolEntry& e : pool.instances) {
        std::string line = "{\"source_bag_id\": ";
        line += json(e.source_bag_id).dump();
        line += ", \"weight\": " + format_g17(e.weight);
        line += ", \"instance\": [";
        for (std::size_t i = 0; i < e.instance.size(); ++i) {
            if (i) line += ", ";
            line += format_g9(e.instance[i]);
        }
        line += "]}\n";
        file << line;
    }
    if (!file) throw DataError("write failed: " + path);
}

HardPool load_hard_pool(const std::string& path, std::size_t* feature_dim_out) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open: " + path);
    HardPool pool;
    std::string line;
    std::size_t line_no = 0;
    std::size_t dim = 0;
    bool have_header = false;
    while (std::getline(file, line)) {
        ++line_no;
        if (line.empty()) continue;
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        try {
            if (!have_header) {
                dim = doc.at("feature_dim").get<std::size_t>();
                have_header = true;
                continue;
            }
            HardPoolEntry entry;
            entry.source_bag_id = doc.at("source_bag_id").get<std::string>();
            entry.weight = doc.at("weight").get<double>();
            entry.instance = doc.at("instance").get<Vec>();
            if (entry.instance.size() != dim)
                throw DataError(path + ":" + std::to_string(line_no) +
                                ": instance dimension mismatch");
            pool.instances.push_back(std::move(entry));
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!have_header) throw DataError(path + ": missing header line");
    if (feature_dim_out) *feature_dim_out = dim;
    return pool;
}

}  // namespace milhard
