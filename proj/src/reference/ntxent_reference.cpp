#include <cmath>

#include "kilnwatch/reference.hpp"

namespace kw::reference {

ssl::NtXentResult nt_xent_loss(const ssl::EmbeddingBatch& batch, ssl::NtXentParams params) {
    const std::size_t n = batch.rows(), d = batch.dim();
    auto cosine = [&](std::size_t a, std::size_t b) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t t = 0; t < d; ++t) {
            dot += batch.row(a)[t] * batch.row(b)[t];
            na += batch.row(a)[t] * batch.row(a)[t];
            nb += batch.row(b)[t] * batch.row(b)[t];
        }
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };
    ssl::NtXentResult out;
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) denom += std::exp(cosine(i, k) / params.temperature);
        const double num = std::exp(cosine(i, ssl::EmbeddingBatch::positive_of(i)) / params.temperature);
        out.per_anchor.push_back(-std::log(num / denom));
        out.total += out.per_anchor.back();
    }
    out.total /= static_cast<double>(n);
    return out;
}

}  // namespace kw::reference
