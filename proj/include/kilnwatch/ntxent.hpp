#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

namespace kw::ssl {

// 2N embedding rows of dimension d; rows 2k and 2k+1 are the two views of example k.
class EmbeddingBatch {
public:
    // Throws ValidationError on odd/zero row count, non-finite values, or a zero-norm row.
    EmbeddingBatch(std::size_t rows, std::size_t dim, std::vector<double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t dim() const noexcept { return dim_; }
    std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
    const std::vector<double>& values() const noexcept { return values_; }
    static std::size_t positive_of(std::size_t i) noexcept { return i ^ 1U; }

private:
    std::size_t rows_;
    std::size_t dim_;
    std::vector<double> values_;
};

struct NtXentParams {
    double temperature = 0.5;
};

struct NtXentResult {
    double total = 0.0;               // mean over all 2N anchors
    std::vector<double> per_anchor;   // -log softmax of the positive, denominator over k != i
};

// Cosine-similarity NT-Xent with max-subtracted log-sum-exp. OpenMP over anchors.
NtXentResult nt_xent_loss(const EmbeddingBatch& batch, NtXentParams params);

// Gradient of the total loss w.r.t. every entry, laid out like batch.values().
std::vector<double> nt_xent_grad(const EmbeddingBatch& batch, NtXentParams params);

// One embedding per line, comma-separated; `#` lines and blank lines are skipped.
EmbeddingBatch read_embeddings_csv(std::istream& in);

}  // namespace kw::ssl
