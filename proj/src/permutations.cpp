#include "kilnwatch/permutations.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include "kilnwatch/errors.hpp"

namespace kw::ssl {

int hamming(const Permutation& a, const Permutation& b) {
    if (a.size() != b.size()) throw ValidationError("permutations differ in length");
    int d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

int min_pairwise_hamming(const std::vector<Permutation>& perms) {
    int best = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i < perms.size(); ++i)
        for (std::size_t j = i + 1; j < perms.size(); ++j) best = std::min(best, hamming(perms[i], perms[j]));
    return best;
}

std::size_t saturating_factorial(int n) {
    std::size_t f = 1;
    for (int i = 2; i <= n; ++i) {
        if (f > std::numeric_limits<std::size_t>::max() / static_cast<std::size_t>(i))
            return std::numeric_limits<std::size_t>::max();
        f *= static_cast<std::size_t>(i);
    }
    return f;
}

namespace {

std::vector<Permutation> candidates(int cells, std::uint64_t seed, std::size_t pool_size) {
    Permutation identity(static_cast<std::size_t>(cells));
    std::iota(identity.begin(), identity.end(), 0);
    std::vector<Permutation> out;
    if (saturating_factorial(cells) <= pool_size) {
        Permutation p = identity;
        do {
            out.push_back(p);
        } while (std::next_permutation(p.begin(), p.end()));
        return out;  // already lexicographic
    }
    std::set<Permutation> pool{identity};
    std::mt19937_64 rng(seed);
    while (pool.size() < pool_size + 1) {
        Permutation p = identity;
        for (std::size_t i = p.size() - 1; i > 0; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i);
            std::swap(p[i], p[pick(rng)]);
        }
        pool.insert(std::move(p));
    }
    return {pool.begin(), pool.end()};
}

}  // namespace

PermutationSet select_permutations(int grid_n, std::size_t k, std::uint64_t seed, std::size_t pool_size) {
    if (grid_n < 2) throw ValidationError("grid_n must be >= 2");
    if (grid_n > 16) throw ValidationError("grid_n must be <= 16");
    const int cells = grid_n * grid_n;
    if (k < 1) throw ValidationError("k must be >= 1");
    if (k > saturating_factorial(cells)) throw ValidationError("k exceeds (grid_n^2)!");

    const auto cand = candidates(cells, seed, pool_size);
    if (k > cand.size()) throw ValidationError("k exceeds the candidate pool size");

    Permutation identity(static_cast<std::size_t>(cells));
    std::iota(identity.begin(), identity.end(), 0);

    PermutationSet set;
    set.grid_n = grid_n;
    set.permutations.push_back(identity);

    const auto m = static_cast<std::ptrdiff_t>(cand.size());
    std::vector<int> min_dist(cand.size());
    std::vector<char> taken(cand.size(), 0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < m; ++c) {
        min_dist[c] = hamming(cand[c], identity);
        if (min_dist[c] == 0) taken[c] = 1;
    }

    while (set.permutations.size() < k) {
        // Arg-max of min_dist over free candidates; lowest index wins ties (lexicographic order).
        int best_d = -1;
        std::ptrdiff_t best_i = -1;
#pragma omp parallel
        {
            int local_d = -1;
            std::ptrdiff_t local_i = -1;
#pragma omp for schedule(static) nowait
            for (std::ptrdiff_t c = 0; c < m; ++c) {
                if (taken[c]) continue;
                if (min_dist[c] > local_d) {
                    local_d = min_dist[c];
                    local_i = c;
                }
            }
#pragma omp critical
            {
                if (local_i >= 0 && (local_d > best_d || (local_d == best_d && local_i < best_i))) {
                    best_d = local_d;
                    best_i = local_i;
                }
            }
        }
        if (best_i < 0) throw ValidationError("candidate pool exhausted");
        taken[best_i] = 1;
        const Permutation& chosen = cand[best_i];
        set.permutations.push_back(chosen);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t c = 0; c < m; ++c) {
            if (!taken[c]) min_dist[c] = std::min(min_dist[c], hamming(cand[c], chosen));
        }
    }
    return set;
}

std::vector<Raster> split_patches(const Raster& chip, int grid_n) {
    if (grid_n < 1) throw ValidationError("grid_n must be >= 1");
    if (chip.width % grid_n != 0 || chip.height % grid_n != 0)
        throw ValidationError("raster " + std::to_string(chip.width) + "x" + std::to_string(chip.height) +
                              " is not divisible into a " + std::to_string(grid_n) + "x" + std::to_string(grid_n) +
                              " grid");
    const int ph = chip.height / grid_n, pw = chip.width / grid_n;
    std::vector<Raster> out;
    out.reserve(static_cast<std::size_t>(grid_n * grid_n));
    for (int r = 0; r < grid_n; ++r)
        for (int c = 0; c < grid_n; ++c) out.push_back(chip.crop(r * ph, c * pw, ph, pw));
    return out;
}

Raster join_patches(const std::vector<Raster>& patches, int grid_n) {
    if (patches.size() != static_cast<std::size_t>(grid_n * grid_n)) throw ValidationError("patch count mismatch");
    const int ph = patches.front().height, pw = patches.front().width;
    Raster out(pw * grid_n, ph * grid_n);
    for (int r = 0; r < grid_n; ++r)
        for (int c = 0; c < grid_n; ++c) out.paste(patches[static_cast<std::size_t>(r * grid_n + c)], r * ph, c * pw);
    return out;
}

JigsawSample jigsaw_targets(const Raster& chip, int grid_n, std::size_t perm_index, const PermutationSet& set) {
    if (set.grid_n != grid_n) throw ValidationError("permutation set was built for a different grid");
    if (perm_index >= set.k()) throw ValidationError("permutation index out of range");
    auto patches = split_patches(chip, grid_n);
    const auto& perm = set.permutations[perm_index];
    JigsawSample out;
    out.target = perm_index;
    out.patches.reserve(patches.size());
    for (int src : perm) out.patches.push_back(patches[static_cast<std::size_t>(src)]);
    return out;
}

std::vector<Raster> unpermute(const std::vector<Raster>& permuted, const Permutation& perm) {
    if (permuted.size() != perm.size()) throw ValidationError("patch count mismatch");
    std::vector<Raster> out(perm.size());
    for (std::size_t p = 0; p < perm.size(); ++p) out[static_cast<std::size_t>(perm[p])] = permuted[p];
    return out;
}

void write_permutations(std::ostream& out, const PermutationSet& set) {
    for (const auto& p : set.permutations) {
        for (std::size_t i = 0; i < p.size(); ++i) out << (i ? " " : "") << p[i];
        out << '\n';
    }
}

}  // namespace kw::ssl
