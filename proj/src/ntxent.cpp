#include "kilnwatch/ntxent.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <sstream>
#include <string>

#include "kilnwatch/errors.hpp"

namespace kw::ssl {

EmbeddingBatch::EmbeddingBatch(std::size_t rows, std::size_t dim, std::vector<double> values)
    : rows_(rows), dim_(dim), values_(std::move(values)) {
    if (rows_ < 2 || rows_ % 2 != 0) throw ValidationError("embedding batch needs an even number (>= 2) of rows");
    if (dim_ == 0) throw ValidationError("embedding dimension must be positive");
    if (values_.size() != rows_ * dim_) throw ValidationError("embedding values do not match rows x dim");
    for (std::size_t i = 0; i < rows_; ++i) {
        double sq = 0.0;
        for (double v : row(i)) {
            if (!std::isfinite(v)) throw ValidationError("embedding contains a non-finite value");
            sq += v * v;
        }
        if (!(sq > 0.0)) throw ValidationError("embedding row " + std::to_string(i) + " has zero norm");
    }
}

namespace {

void check_params(const NtXentParams& p) {
    if (!(p.temperature > 0.0) || !std::isfinite(p.temperature)) throw ValidationError("temperature must be > 0");
}

struct Normalized {
    std::vector<double> unit;   // rows x dim
    std::vector<double> norms;  // rows
};

Normalized normalize(const EmbeddingBatch& b) {
    const auto n = b.rows(), d = b.dim();
    Normalized out{std::vector<double>(n * d), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = b.row(i);
        double sq = 0.0;
        for (double v : r) sq += v * v;
        const double norm = std::sqrt(sq);
        out.norms[i] = norm;
        for (std::size_t c = 0; c < d; ++c) out.unit[i * d + c] = r[c] / norm;
    }
    return out;
}

std::vector<double> similarities(const Normalized& u, std::size_t n, std::size_t d) {
    std::vector<double> sim(n * n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += u.unit[i * d + c] * u.unit[k * d + c];
            sim[i * n + k] = dot;
        }
    }
    return sim;
}

}  // namespace

NtXentResult nt_xent_loss(const EmbeddingBatch& batch, NtXentParams params) {
    check_params(params);
    const auto n = batch.rows(), d = batch.dim();
    const auto u = normalize(batch);
    const auto sim = similarities(u, n, d);
    const double inv_tau = 1.0 / params.temperature;

    NtXentResult out;
    out.per_anchor.assign(n, 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(n); ++si) {
        const auto i = static_cast<std::size_t>(si);
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) m = std::max(m, sim[i * n + k] * inv_tau);
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) acc += std::exp(sim[i * n + k] * inv_tau - m);
        const double pos = sim[i * n + EmbeddingBatch::positive_of(i)] * inv_tau;
        out.per_anchor[i] = std::log(acc) + (m - pos);
    }
    double sum = 0.0;
    for (double l : out.per_anchor) sum += l;
    out.total = sum / static_cast<double>(n);
    return out;
}

std::vector<double> nt_xent_grad(const EmbeddingBatch& batch, NtXentParams params) {
    check_params(params);
    const auto n = batch.rows(), d = batch.dim();
    const auto u = normalize(batch);
    const auto sim = similarities(u, n, d);
    const double inv_tau = 1.0 / params.temperature;
    const double scale = inv_tau / static_cast<double>(n);

    // coeff[i*n + k] = dL/ds_ik for anchor i (zero on the diagonal).
    std::vector<double> coeff(n * n, 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(n); ++si) {
        const auto i = static_cast<std::size_t>(si);
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) m = std::max(m, sim[i * n + k] * inv_tau);
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) acc += std::exp(sim[i * n + k] * inv_tau - m);
        const std::size_t p = EmbeddingBatch::positive_of(i);
        for (std::size_t k = 0; k < n; ++k) {
            if (k == i) continue;
            const double prob = std::exp(sim[i * n + k] * inv_tau - m) / acc;
            coeff[i * n + k] = scale * (prob - (k == p ? 1.0 : 0.0));
        }
    }

    std::vector<double> grad(n * d, 0.0);
#pragma omp parallel
    {
        std::vector<double> gu(d);
#pragma omp for schedule(static)
        for (std::ptrdiff_t sm = 0; sm < static_cast<std::ptrdiff_t>(n); ++sm) {
            const auto m = static_cast<std::size_t>(sm);
            std::fill(gu.begin(), gu.end(), 0.0);
            // s_mk appears in anchor m's loss and in anchor k's loss (as s_km).
            for (std::size_t k = 0; k < n; ++k) {
                if (k == m) continue;
                const double w = coeff[m * n + k] + coeff[k * n + m];
                for (std::size_t c = 0; c < d; ++c) gu[c] += w * u.unit[k * d + c];
            }
            // Project through the normalization: (I - u u^T) / |z|.
            double along = 0.0;
            for (std::size_t c = 0; c < d; ++c) along += gu[c] * u.unit[m * d + c];
            for (std::size_t c = 0; c < d; ++c)
                grad[m * d + c] = (gu[c] - along * u.unit[m * d + c]) / u.norms[m];
        }
    }
    return grad;
}

EmbeddingBatch read_embeddings_csv(std::istream& in) {
    std::vector<double> values;
    std::size_t dim = 0, rows = 0, line_no = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t count = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(cell, &used));
                if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw ParseError("non-numeric embedding value `" + cell + "`", line_no);
            }
            ++count;
        }
        if (rows == 0) dim = count;
        else if (count != dim) throw ParseError("embedding row has " + std::to_string(count) + " values, expected " + std::to_string(dim), line_no);
        ++rows;
    }
    return EmbeddingBatch(rows, dim, std::move(values));
}

}  // namespace kw::ssl
