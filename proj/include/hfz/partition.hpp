#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfz/dataset.hpp"
#include "hfz/error.hpp"
#include "hfz/rng.hpp"

namespace hfz {

/// Client index sets over one dataset: the first n_participating clients
/// train, the remaining m_nonparticipating exist only for zero-shot
/// evaluation. Sets are disjoint and jointly cover the dataset.
struct Partition {
    std::vector<std::vector<std::int64_t>> client_indices;
    int n_participating = 0;
    int m_nonparticipating = 0;
    double alpha_d = 0.0;
    std::uint64_t seed = 0;

    int num_clients() const { return n_participating + m_nonparticipating; }

    void validate(std::int64_t dataset_size) const {
        if (n_participating < 1 || m_nonparticipating < 0)
            throw DataError("partition needs >= 1 participating client");
        if (static_cast<int>(client_indices.size()) != num_clients())
            throw DataError("partition holds " + std::to_string(client_indices.size()) +
                            " index sets for " + std::to_string(num_clients()) + " clients");
        std::vector<char> seen(static_cast<std::size_t>(dataset_size), 0);
        std::int64_t total = 0;
        for (std::size_t c = 0; c < client_indices.size(); ++c) {
            if (client_indices[c].empty())
                throw DataError("client " + std::to_string(c) + " has an empty index set");
            for (std::int64_t idx : client_indices[c]) {
                if (idx < 0 || idx >= dataset_size)
                    throw DataError("client " + std::to_string(c) + " references index " +
                                    std::to_string(idx) + " outside dataset of size " +
                                    std::to_string(dataset_size));
                if (seen[static_cast<std::size_t>(idx)]++)
                    throw DataError("index " + std::to_string(idx) +
                                    " assigned to more than one client");
                ++total;
            }
        }
        if (total != dataset_size)
            throw DataError("partition covers " + std::to_string(total) + " of " +
                            std::to_string(dataset_size) + " samples");
    }
};

namespace detail {

/// Apportion `count` items by `proportions` with largest-remainder rounding.
/// Ties on the fractional part go to the lower index.
inline std::vector<std::int64_t> largest_remainder(const std::vector<double>& proportions,
                                                   std::int64_t count) {
    const std::size_t k = proportions.size();
    std::vector<std::int64_t> out(k, 0);
    std::vector<double> frac(k, 0.0);
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double quota = proportions[i] * static_cast<double>(count);
        out[i] = static_cast<std::int64_t>(quota);
        frac[i] = quota - static_cast<double>(out[i]);
        assigned += out[i];
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&frac](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::int64_t r = 0; r < count - assigned; ++r) ++out[order[static_cast<std::size_t>(r) % k]];
    return out;
}

} // namespace detail

/// Non-i.i.d. partition: for each class, client shares are drawn from
/// Dirichlet(alpha_d * 1) and the class's samples are dealt out in dataset
/// order by largest-remainder counts. Draws use stream (seed, {class,
/// attempt, partition}). Resamples whole partitions until every client has
/// at least min_per_client samples, up to 100 attempts.
inline Partition dirichlet_partition(const Dataset& dataset, int n_participating,
                                     int m_nonparticipating, double alpha_d, int min_per_client,
                                     std::uint64_t seed) {
    const int clients = n_participating + m_nonparticipating;
    if (clients < 2) throw ConfigError("dirichlet_partition needs n + m >= 2 clients");
    if (!(alpha_d > 0.0)) throw ConfigError("alpha_d must be > 0");
    if (min_per_client < 1) throw ConfigError("min_per_client must be >= 1");
    if (dataset.size() < static_cast<std::int64_t>(clients) * min_per_client)
        throw DataError("dataset of size " + std::to_string(dataset.size()) +
                        " cannot give " + std::to_string(clients) + " clients " +
                        std::to_string(min_per_client) + " samples each");

    std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(dataset.num_classes));
    for (std::int64_t i = 0; i < dataset.size(); ++i)
        by_class[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(i)])].push_back(i);

    constexpr int kMaxAttempts = 100;
    int worst_client = -1;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        Partition p;
        p.n_participating = n_participating;
        p.m_nonparticipating = m_nonparticipating;
        p.alpha_d = alpha_d;
        p.seed = seed;
        p.client_indices.assign(static_cast<std::size_t>(clients), {});

        for (int c = 0; c < dataset.num_classes; ++c) {
            const auto& pool = by_class[static_cast<std::size_t>(c)];
            if (pool.empty()) continue;
            RngStream rng(seed, {static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(attempt),
                                 purpose::partition});
            const std::vector<double> props = rng.dirichlet(alpha_d, clients);
            const auto counts =
                detail::largest_remainder(props, static_cast<std::int64_t>(pool.size()));
            std::size_t cursor = 0;
            for (int cl = 0; cl < clients; ++cl)
                for (std::int64_t k = 0; k < counts[static_cast<std::size_t>(cl)]; ++k)
                    p.client_indices[static_cast<std::size_t>(cl)].push_back(pool[cursor++]);
        }

        bool ok = true;
        for (int cl = 0; cl < clients; ++cl) {
            if (static_cast<int>(p.client_indices[static_cast<std::size_t>(cl)].size()) <
                min_per_client) {
                worst_client = cl;
                ok = false;
                break;
            }
        }
        if (ok) {
            p.validate(dataset.size());
            return p;
        }
    }
    throw DataError("dirichlet_partition could not satisfy min_per_client=" +
                    std::to_string(min_per_client) + " after " + std::to_string(kMaxAttempts) +
                    " attempts; client " + std::to_string(worst_client) + " kept starving");
}

/// Shuffled disjoint train/test split of one client's indices. test gets
/// round(n * test_fraction) clamped to [1, n-1]. Stream (seed, {client, 0,
/// split}). Outputs are sorted for stable artifacts.
inline std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>
split_client(const std::vector<std::int64_t>& indices, double test_fraction, std::uint64_t seed,
             std::uint32_t client = 0) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("test_fraction must lie in (0, 1)");
    if (indices.size() < 2)
        throw DataError("cannot split " + std::to_string(indices.size()) + " samples");
    std::vector<std::int64_t> pool = indices;
    RngStream rng(seed, {client, 0, purpose::split});
    rng.shuffle(pool);
    const std::int64_t n = static_cast<std::int64_t>(pool.size());
    std::int64_t n_test = std::llround(test_fraction * static_cast<double>(n));
    n_test = std::max<std::int64_t>(1, std::min(n - 1, n_test));
    std::vector<std::int64_t> test(pool.begin(), pool.begin() + n_test);
    std::vector<std::int64_t> train(pool.begin() + n_test, pool.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {std::move(train), std::move(test)};
}

/// I.i.d. holdout carved from a dataset before partitioning; the held-out
/// part serves as the global test set. Stream (seed, {0, 0, holdout}).
inline std::pair<Dataset, Dataset> holdout_split(const Dataset& d, double holdout_fraction,
                                                 std::uint64_t seed) {
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
        throw ConfigError("holdout_fraction must lie in (0, 1)");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(d.size()));
    std::iota(idx.begin(), idx.end(), 0);
    RngStream rng(seed, {0, 0, purpose::holdout});
    rng.shuffle(idx);
    std::int64_t n_hold = std::llround(holdout_fraction * static_cast<double>(d.size()));
    n_hold = std::max<std::int64_t>(1, std::min(d.size() - 1, n_hold));
    std::vector<std::int64_t> hold(idx.begin(), idx.begin() + n_hold);
    std::vector<std::int64_t> rest(idx.begin() + n_hold, idx.end());
    std::sort(hold.begin(), hold.end());
    std::sort(rest.begin(), rest.end());
    return {select(d, rest), select(d, hold)};
}

inline void save_partition(const Partition& p, const std::string& path) {
    nlohmann::json j;
    j["format"] = "hfz-partition";
    j["version"] = 1;
    j["seed"] = p.seed;
    j["alpha_d"] = p.alpha_d;
    j["n_participating"] = p.n_participating;
    j["m_nonparticipating"] = p.m_nonparticipating;
    j["client_indices"] = p.client_indices;
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write partition file " + path);
    out << j.dump(2) << "\n";
}

/// Loads and validates a partition file. dataset_size bounds the index
/// check; pass the size of the dataset the partition was built from.
inline Partition load_partition(const std::string& path, std::int64_t dataset_size) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open partition file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed partition file " + path + ": " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "hfz-partition")
            throw FormatError("not a partition file: " + path);
        if (j.at("version").get<int>() != 1)
            throw FormatError("unsupported partition version in " + path);
        Partition p;
        p.seed = j.at("seed").get<std::uint64_t>();
        p.alpha_d = j.at("alpha_d").get<double>();
        p.n_participating = j.at("n_participating").get<int>();
        p.m_nonparticipating = j.at("m_nonparticipating").get<int>();
        p.client_indices = j.at("client_indices").get<std::vector<std::vector<std::int64_t>>>();
        p.validate(dataset_size);
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("partition file " + path + " missing fields: " + e.what());
    }
}

} // namespace hfz
