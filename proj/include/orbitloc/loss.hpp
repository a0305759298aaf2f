#pragma once

// Neutral-aware multi-similarity loss and its plain multi-similarity
// baseline, with analytic gradients and a finite-difference checker.
//
// For a batch of BS images with similarity matrix S:
//
//   L = 1/BS * sum_i { 1/alpha * log(1 + sum_{k pos, k != i} exp(-alpha (S_ik - lambda)))
//                    + 1/beta  * log(1 + sum_{k neg}        exp(+beta  (S_ik - lambda))) }
//
// Neutral pairs (regions that intersect without being equal) appear in
// neither sum. Every S_ik is treated as an independent input, so the
// gradient matrix is not symmetric in general.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "features.hpp"
#include "geodesy.hpp"
#include "matrix.hpp"

namespace orbitloc {

struct LossParams {
    double alpha = 2.0;
    double beta = 50.0;
    double lambda = 1.0;

    void validate() const
    {
        if (!std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(lambda) || alpha <= 0 || beta <= 0)
            throw config_error("loss: alpha, beta must be finite and > 0, lambda finite");
    }
};

/// Pairwise relation labels for a batch.
struct RelationMatrix {
    std::size_t size = 0;
    std::vector<Relation> values;

    RelationMatrix() = default;
    explicit RelationMatrix(std::size_t n) : size(n), values(n * n, Relation::negative)
    {
        for (std::size_t i = 0; i < n; ++i)
            values[i * n + i] = Relation::positive;
    }

    Relation operator()(std::size_t i, std::size_t k) const { return values[i * size + k]; }
    Relation& operator()(std::size_t i, std::size_t k) { return values[i * size + k]; }

    /// Labels from region geometry: same region positive, intersecting
    /// regions neutral, the rest negative.
    static RelationMatrix from_regions(std::span<const RegionId> regions, const GridSpec& grid = {})
    {
        RelationMatrix m(regions.size());
        for (std::size_t i = 0; i < regions.size(); ++i)
            for (std::size_t k = i + 1; k < regions.size(); ++k)
                m(i, k) = m(k, i) = region_relation(regions[i], regions[k], grid);
        return m;
    }

    /// Class labels only: equal label positive, everything else negative.
    template <typename Label>
    static RelationMatrix from_labels(std::span<const Label> labels)
    {
        RelationMatrix m(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i)
            for (std::size_t k = i + 1; k < labels.size(); ++k)
                m(i, k) = m(k, i) = labels[i] == labels[k] ? Relation::positive : Relation::negative;
        return m;
    }

    std::size_t count(Relation r) const { return static_cast<std::size_t>(std::count(values.begin(), values.end(), r)); }
};

inline Matrix<double> similarity_matrix(std::span<const Embedding> e)
{
    const std::size_t n = e.size();
    Matrix<double> s(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        if (e[i].dim() != e[0].dim())
            throw invalid_argument_error("similarity_matrix: dimension mismatch");
        for (std::size_t k = i; k < n; ++k)
            s(i, k) = s(k, i) = dot(e[i].values(), e[k].values());
    }
    return s;
}

template <typename Real>
struct LossResult {
    Real loss{};
    Matrix<Real> grad; // dL/dS
};

namespace detail {

// Adds 1/c * log(1 + sum exp(a_k)) to `loss` and d/dS_ik into `grad_row`,
// where a_k = sign * c * (S_ik - lambda). Stable for large exponents.
template <typename Real>
void soft_term(std::span<const Real> s_row, std::span<const std::size_t> members, Real c, Real sign, Real lambda,
               Real scale, Real& loss, std::span<Real> grad_row)
{
    if (members.empty())
        return;
    Real m = 0;
    for (const auto k : members)
        m = std::max(m, sign * c * (s_row[k] - lambda));
    Real denom = std::exp(-m);
    for (const auto k : members)
        denom += std::exp(sign * c * (s_row[k] - lambda) - m);
    loss += scale * (m + std::log(denom)) / c;
    for (const auto k : members)
        grad_row[k] += scale * sign * std::exp(sign * c * (s_row[k] - lambda) - m) / denom;
}

} // namespace detail

/// Neutral-aware multi-similarity loss and exact dL/dS.
template <typename Real>
LossResult<Real> na_ms_loss(const Matrix<Real>& s, const RelationMatrix& rel, const LossParams& p)
{
    const std::size_t n = s.rows;
    if (s.cols != n || rel.size != n)
        throw invalid_argument_error("na_ms_loss: shape mismatch");
    for (const Real v : s.data)
        if (!std::isfinite(static_cast<double>(v)))
            throw invalid_argument_error("na_ms_loss: non-finite similarity");
    p.validate();

    LossResult<Real> out{Real{0}, Matrix<Real>(n, n)};
    if (n == 0)
        return out;
    const Real scale = Real{1} / static_cast<Real>(n);
    const Real alpha = static_cast<Real>(p.alpha), beta = static_cast<Real>(p.beta);
    const Real lambda = static_cast<Real>(p.lambda);
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) {
        pos.clear();
        neg.clear();
        for (std::size_t k = 0; k < n; ++k) {
            if (k == i)
                continue;
            switch (rel(i, k)) {
            case Relation::positive: pos.push_back(k); break;
            case Relation::negative: neg.push_back(k); break;
            case Relation::neutral: break;
            }
        }
        detail::soft_term<Real>(s.row(i), pos, alpha, Real{-1}, lambda, scale, out.loss, out.grad.row(i));
        detail::soft_term<Real>(s.row(i), neg, beta, Real{1}, lambda, scale, out.loss, out.grad.row(i));
    }
    return out;
}

/// Multi-similarity loss on class labels: every pair of distinct labels is
/// a negative.
template <typename Real, typename Label>
LossResult<Real> ms_loss(const Matrix<Real>& s, std::span<const Label> labels, const LossParams& p)
{
    if (labels.size() != s.rows)
        throw invalid_argument_error("ms_loss: label count mismatch");
    return na_ms_loss(s, RelationMatrix::from_labels(labels), p);
}

/// Gradient with respect to the embedding rows of E given dL/dS for S = E E^T:
/// dL/dE_i = sum_k (G_ik + G_ki) E_k.
template <typename Real>
Matrix<Real> chain_grad_to_embeddings(const Matrix<Real>& grad_s, const Matrix<Real>& e)
{
    const std::size_t n = e.rows, d = e.cols;
    if (grad_s.rows != n || grad_s.cols != n)
        throw invalid_argument_error("chain_grad_to_embeddings: shape mismatch");
    Matrix<Real> out(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) {
            const Real g = grad_s(i, k) + grad_s(k, i);
            if (g == Real{0})
                continue;
            for (std::size_t j = 0; j < d; ++j)
                out(i, j) += g * e(k, j);
        }
    return out;
}

/// Back-propagates through row-wise L2 normalisation e = u / |u|:
/// dL/du = (I - e e^T) dL/de / |u|.
template <typename Real>
Matrix<Real> normalize_backward(const Matrix<Real>& u, const Matrix<Real>& grad_e)
{
    if (u.rows != grad_e.rows || u.cols != grad_e.cols)
        throw invalid_argument_error("normalize_backward: shape mismatch");
    Matrix<Real> out(u.rows, u.cols);
    for (std::size_t i = 0; i < u.rows; ++i) {
        Real n2 = 0;
        for (const Real v : u.row(i))
            n2 += v * v;
        const Real norm = std::sqrt(n2);
        Real proj = 0;
        for (std::size_t j = 0; j < u.cols; ++j)
            proj += u(i, j) / norm * grad_e(i, j);
        for (std::size_t j = 0; j < u.cols; ++j)
            out(i, j) = (grad_e(i, j) - proj * u(i, j) / norm) / norm;
    }
    return out;
}

template <typename Real>
Matrix<Real> normalize_rows(const Matrix<Real>& u)
{
    Matrix<Real> e = u;
    for (std::size_t i = 0; i < u.rows; ++i) {
        Real n2 = 0;
        for (const Real v : u.row(i))
            n2 += v * v;
        if (!(n2 > 0))
            throw degenerate_input_error("normalize_rows: zero row");
        const Real norm = std::sqrt(n2);
        for (auto& v : e.row(i))
            v /= norm;
    }
    return e;
}

template <typename Real>
Matrix<Real> gram(const Matrix<Real>& e)
{
    Matrix<Real> s(e.rows, e.rows);
    for (std::size_t i = 0; i < e.rows; ++i)
        for (std::size_t k = i; k < e.rows; ++k) {
            Real acc = 0;
            for (std::size_t j = 0; j < e.cols; ++j)
                acc += e(i, j) * e(k, j);
            s(i, k) = s(k, i) = acc;
        }
    return s;
}

/// Central finite differences of `value` at `point` against `analytic`,
/// entrywise relative error |a - n| / max(|a|, |n|, 1e-8), maximum returned.
template <typename Real>
double grad_check(const std::function<Real(std::span<const Real>)>& value, std::span<const Real> point,
                  std::span<const Real> analytic, Real eps)
{
    if (!(eps > 0))
        throw invalid_argument_error("grad_check: eps must be > 0");
    if (analytic.size() != point.size())
        throw invalid_argument_error("grad_check: gradient size mismatch");
    std::vector<Real> x(point.begin(), point.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Real orig = x[i];
        x[i] = orig + eps;
        const Real fp = value(x);
        x[i] = orig - eps;
        const Real fm = value(x);
        x[i] = orig;
        const double numeric = static_cast<double>((fp - fm) / (2 * eps));
        const double a = static_cast<double>(analytic[i]);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

/// Same check for a function that returns (value, gradient).
template <typename Real>
double grad_check(const std::function<std::pair<Real, std::vector<Real>>(std::span<const Real>)>& fn,
                  std::span<const Real> point, Real eps)
{
    const auto analytic = fn(point).second;
    return grad_check<Real>([&](std::span<const Real> x) { return fn(x).first; }, point, analytic, eps);
}

} // namespace orbitloc
