#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "woodprune/errors.hpp"

namespace woodprune::oracle {

// Reference implementations used only by tests. Everything here is built
// from elementary routines (Gaussian elimination, Jacobi rotations) and
// shares no code with the estimators it validates. Internal arithmetic uses
// long double so the references stay trustworthy on ill-conditioned inputs
// (dampening 1e-5 pushes inverse entries to the 1e5 scale).
struct DenseMatrix {
    std::size_t n = 0;
    std::vector<double> a;  // row-major

    DenseMatrix() = default;
    explicit DenseMatrix(std::size_t size) : n(size), a(size * size, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return a[i * n + j]; }
    double at(std::size_t i, std::size_t j) const { return a[i * n + j]; }

    static DenseMatrix identity(std::size_t size) {
        DenseMatrix m(size);
        for (std::size_t i = 0; i < size; ++i) m.at(i, i) = 1.0;
        return m;
    }

    std::vector<double> matvec(std::span<const double> v) const {
        std::vector<double> out(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            long double acc = 0.0L;
            for (std::size_t j = 0; j < n; ++j) acc += static_cast<long double>(at(i, j)) * v[j];
            out[i] = static_cast<double>(acc);
        }
        return out;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : a) m = std::max(m, std::abs(v));
        return m;
    }
};

namespace detail {

// Gauss-Jordan with partial pivoting over an n x (n + k) tableau in
// long double. Throws on a vanishing pivot.
inline void gauss_jordan(std::vector<long double>& tab, std::size_t n, std::size_t cols) {
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        long double best = std::abs(tab[col * cols + col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const long double cand = std::abs(tab[r * cols + col]);
            if (cand > best) {
                best = cand;
                pivot = r;
            }
        }
        if (!(best > 0.0L)) throw NumericError("oracle: singular matrix (zero pivot)");
        if (pivot != col) {
            for (std::size_t j = 0; j < cols; ++j)
                std::swap(tab[col * cols + j], tab[pivot * cols + j]);
        }
        const long double inv_pivot = 1.0L / tab[col * cols + col];
        for (std::size_t j = 0; j < cols; ++j) tab[col * cols + j] *= inv_pivot;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const long double f = tab[r * cols + col];
            if (f == 0.0L) continue;
            for (std::size_t j = 0; j < cols; ++j) tab[r * cols + j] -= f * tab[col * cols + j];
        }
    }
}

}  // namespace detail

// lambda * I + (1/m) * sum of gradient outer products, formed explicitly.
// dim_hint sizes the matrix when the sample list is empty.
template <typename SampleRange>
DenseMatrix dense_empirical_fisher(const SampleRange& samples, double damp,
                                   std::size_t dim_hint = 0) {
    std::size_t d = dim_hint;
    std::size_t m = 0;
    for (const auto& s : samples) {
        if (d != 0 && s.grad.size() != d)
            throw StructuralError("oracle: inconsistent sample lengths");
        d = s.grad.size();
        ++m;
    }
    DenseMatrix fisher(d);
    for (std::size_t i = 0; i < d; ++i) fisher.at(i, i) = damp;
    if (m == 0) return fisher;
    const double inv_m = 1.0 / static_cast<double>(m);
    for (const auto& s : samples) {
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j)
                fisher.at(i, j) += (s.grad[i] * s.grad[j]) * inv_m;  // exactly symmetric
        }
    }
    return fisher;
}

// Inverse of the dampened empirical Fisher with the matrix FORMED in long
// double as well. Rounding the formed matrix to double first perturbs the
// stiff directions by ~1/damp^2 * eps, which at damp = 1e-5 already exceeds
// 1e-8 in the inverse; this path keeps the reference trustworthy there.
template <typename SampleRange>
DenseMatrix dense_fisher_inverse(const SampleRange& samples, double damp,
                                 std::size_t dim_hint = 0) {
    std::size_t d = dim_hint;
    std::size_t m = 0;
    for (const auto& s : samples) {
        if (d != 0 && s.grad.size() != d)
            throw StructuralError("oracle: inconsistent sample lengths");
        d = s.grad.size();
        ++m;
    }
    const std::size_t cols = 2 * d;
    std::vector<long double> tab(d * cols, 0.0L);
    for (std::size_t i = 0; i < d; ++i) {
        tab[i * cols + i] = damp;
        tab[i * cols + d + i] = 1.0L;
    }
    if (m > 0) {
        const long double inv_m = 1.0L / static_cast<long double>(m);
        for (const auto& s : samples) {
            for (std::size_t i = 0; i < d; ++i) {
                const long double gi = s.grad[i];
                for (std::size_t j = 0; j < d; ++j)
                    tab[i * cols + j] += gi * static_cast<long double>(s.grad[j]) * inv_m;
            }
        }
    }
    detail::gauss_jordan(tab, d, cols);
    DenseMatrix inv(d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            inv.at(i, j) = static_cast<double>(tab[i * cols + d + j]);
    return inv;
}

inline DenseMatrix dense_inverse(const DenseMatrix& m) {
    const std::size_t n = m.n;
    const std::size_t cols = 2 * n;
    std::vector<long double> tab(n * cols, 0.0L);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) tab[i * cols + j] = m.at(i, j);
        tab[i * cols + n + i] = 1.0L;
    }
    detail::gauss_jordan(tab, n, cols);
    DenseMatrix inv(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) inv.at(i, j) = static_cast<double>(tab[i * cols + n + j]);
    return inv;
}

inline std::vector<double> solve(const DenseMatrix& m, std::span<const double> b) {
    const std::size_t n = m.n;
    if (b.size() != n) throw StructuralError("oracle: rhs length mismatch");
    const std::size_t cols = n + 1;
    std::vector<long double> tab(n * cols, 0.0L);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) tab[i * cols + j] = m.at(i, j);
        tab[i * cols + n] = b[i];
    }
    detail::gauss_jordan(tab, n, cols);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(tab[i * cols + n]);
    return x;
}

// Cyclic Jacobi eigensolve for symmetric matrices; returns eigenvalues in
// ascending order.
inline std::vector<double> symmetric_eigenvalues(const DenseMatrix& m, std::size_t sweeps = 64) {
    const std::size_t n = m.n;
    std::vector<long double> a(n * n);
    for (std::size_t i = 0; i < n * n; ++i) a[i] = m.a[i];
    for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
        long double off = 0.0L;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        if (off < 1e-36L) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const long double apq = a[p * n + q];
                if (apq == 0.0L) continue;
                const long double theta = (a[q * n + q] - a[p * n + p]) / (2.0L * apq);
                const long double t = (theta >= 0.0L ? 1.0L : -1.0L) /
                                      (std::abs(theta) + std::sqrt(theta * theta + 1.0L));
                const long double c = 1.0L / std::sqrt(t * t + 1.0L);
                const long double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const long double akp = a[k * n + p];
                    const long double akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const long double apk = a[p * n + k];
                    const long double aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = static_cast<double>(a[i * n + i]);
    std::sort(eig.begin(), eig.end());
    return eig;
}

inline double smallest_eigenvalue(const DenseMatrix& m) { return symmetric_eigenvalues(m).front(); }

inline double condition_estimate(const DenseMatrix& m) {
    const auto eig = symmetric_eigenvalues(m);
    double lo = std::abs(eig.front());
    double hi = std::abs(eig.front());
    for (double e : eig) {
        lo = std::min(lo, std::abs(e));
        hi = std::max(hi, std::abs(e));
    }
    if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
    return hi / lo;
}

// Exact equality-constrained removal of one parameter: for every q solve
//   minimize (1/2) dw' H dw   subject to   e_q' dw + w_q = 0
// through the KKT linear system [[H, e_q], [e_q', 0]].
struct SingleRemovalTable {
    std::vector<double> delta_loss;            // per candidate q
    std::vector<std::vector<double>> delta_w;  // per candidate q
    std::size_t best = 0;                      // argmin with index tie-break
};

inline SingleRemovalTable exact_single_removal(std::span<const double> w, const DenseMatrix& h) {
    const std::size_t d = h.n;
    if (w.size() != d) throw StructuralError("oracle: weight length mismatch");
    SingleRemovalTable table;
    table.delta_loss.resize(d);
    table.delta_w.resize(d);

    DenseMatrix kkt(d + 1);
    for (std::size_t q = 0; q < d; ++q) {
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) kkt.at(i, j) = h.at(i, j);
        for (std::size_t i = 0; i < d; ++i) {
            kkt.at(i, d) = (i == q) ? 1.0 : 0.0;
            kkt.at(d, i) = (i == q) ? 1.0 : 0.0;
        }
        kkt.at(d, d) = 0.0;
        std::vector<double> rhs(d + 1, 0.0);
        rhs[d] = -w[q];
        const auto sol = solve(kkt, rhs);
        std::vector<double> dw(sol.begin(), sol.begin() + static_cast<std::ptrdiff_t>(d));
        const auto h_dw = h.matvec(dw);
        long double dl = 0.0L;
        for (std::size_t i = 0; i < d; ++i) dl += 0.5L * static_cast<long double>(dw[i]) * h_dw[i];
        table.delta_loss[q] = static_cast<double>(dl);
        table.delta_w[q] = std::move(dw);
    }
    table.best = 0;
    for (std::size_t q = 1; q < d; ++q) {
        if (table.delta_loss[q] < table.delta_loss[table.best]) table.best = q;
    }
    return table;
}

// Exact simultaneous removal of a pair via the 2x2 multiplier system
//   [ [H^-1]_q1q1  [H^-1]_q1q2 ] [l1]   [w_q1]
//   [ [H^-1]_q1q2  [H^-1]_q2q2 ] [l2] = [w_q2]
// followed by dw = -l1 H^-1 e_q1 - l2 H^-1 e_q2.
struct PairRemoval {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double delta_loss = 0.0;
    std::vector<double> delta_w;
};

inline PairRemoval exact_pair_removal(std::span<const double> w, const DenseMatrix& h,
                                      std::size_t q1, std::size_t q2) {
    if (q1 == q2) throw StructuralError("oracle: pair removal needs two distinct indices");
    const std::size_t d = h.n;
    const DenseMatrix hinv = dense_inverse(h);

    const double a11 = hinv.at(q1, q1);
    const double a12 = hinv.at(q1, q2);
    const double a22 = hinv.at(q2, q2);
    const long double det =
        static_cast<long double>(a11) * a22 - static_cast<long double>(a12) * a12;
    if (det == 0.0L) throw NumericError("oracle: singular pair system");

    PairRemoval out;
    out.lambda1 = static_cast<double>((static_cast<long double>(a22) * w[q1] -
                                       static_cast<long double>(a12) * w[q2]) /
                                      det);
    out.lambda2 = static_cast<double>((static_cast<long double>(a11) * w[q2] -
                                       static_cast<long double>(a12) * w[q1]) /
                                      det);
    out.delta_w.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        out.delta_w[i] = -out.lambda1 * hinv.at(i, q1) - out.lambda2 * hinv.at(i, q2);

    const auto h_dw = h.matvec(out.delta_w);
    long double dl = 0.0L;
    for (std::size_t i = 0; i < d; ++i)
        dl += 0.5L * static_cast<long double>(out.delta_w[i]) * h_dw[i];
    out.delta_loss = static_cast<double>(dl);
    return out;
}

// Central finite differences of an analytic gradient, symmetrized. Intended
// for tiny problems only.
inline DenseMatrix fd_hessian(const std::function<std::vector<double>(std::span<const double>)>& grad_fn,
                              std::span<const double> w, double step = 1e-4) {
    const std::size_t d = w.size();
    DenseMatrix h(d);
    std::vector<double> point(w.begin(), w.end());
    for (std::size_t j = 0; j < d; ++j) {
        const double saved = point[j];
        point[j] = saved + step;
        const auto plus = grad_fn(point);
        point[j] = saved - step;
        const auto minus = grad_fn(point);
        point[j] = saved;
        for (std::size_t i = 0; i < d; ++i) h.at(i, j) = (plus[i] - minus[i]) / (2.0 * step);
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i + 1; j < d; ++j) {
            const double sym = 0.5 * (h.at(i, j) + h.at(j, i));
            h.at(i, j) = sym;
            h.at(j, i) = sym;
        }
    }
    return h;
}

}  // namespace woodprune::oracle
