#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "kilnwatch/raster.hpp"

namespace kw::ssl {

using Permutation = std::vector<int>;

struct PermutationSet {
    int grid_n = 2;                          // patches per side
    std::vector<Permutation> permutations;   // k distinct orderings of grid_n^2 patches

    std::size_t k() const noexcept { return permutations.size(); }
};

// Candidate pool size used when (N^2)! exceeds it.
inline constexpr std::size_t kCandidatePool = 100000;

int hamming(const Permutation& a, const Permutation& b);
int min_pairwise_hamming(const std::vector<Permutation>& perms);

// (n)! saturating at SIZE_MAX.
std::size_t saturating_factorial(int n);

// Greedy max-min Hamming selection. Starts from the identity and repeatedly adds the candidate
// whose minimum distance to the chosen set is largest, ties to the lexicographically smallest.
// Candidates are every permutation when (N^2)! <= pool_size, else `pool_size` distinct
// seeded random permutations (plus the identity).
PermutationSet select_permutations(int grid_n, std::size_t k, std::uint64_t seed,
                                   std::size_t pool_size = kCandidatePool);

struct JigsawSample {
    std::vector<Raster> patches;  // patches[p] is original patch perm[p]
    std::size_t target = 0;       // the permutation's class index
};

// Row-major split into grid_n x grid_n equal patches; side must be divisible by grid_n.
std::vector<Raster> split_patches(const Raster& chip, int grid_n);
Raster join_patches(const std::vector<Raster>& patches, int grid_n);

JigsawSample jigsaw_targets(const Raster& chip, int grid_n, std::size_t perm_index, const PermutationSet& set);
// Undoes the permutation: returns patches in raster order.
std::vector<Raster> unpermute(const std::vector<Raster>& permuted, const Permutation& perm);

// One permutation per line, space-separated indices.
void write_permutations(std::ostream& out, const PermutationSet& set);

}  // namespace kw::ssl
