#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "woodprune/core.hpp"
#include "woodprune/errors.hpp"
#include "woodprune/fisher.hpp"
#include "woodprune/model.hpp"

namespace woodprune {

enum class StatMethod { woodfisher, obd, magnitude, woodtaylor, diagonal_fisher };
enum class SelectScope { independent, joint };

inline std::string to_string(StatMethod m) {
    switch (m) {
        case StatMethod::woodfisher: return "woodfisher";
        case StatMethod::obd: return "obd";
        case StatMethod::magnitude: return "magnitude";
        case StatMethod::woodtaylor: return "woodtaylor";
        case StatMethod::diagonal_fisher: return "diag-fisher";
    }
    return "?";
}

inline std::string to_string(SelectScope s) {
    return s == SelectScope::joint ? "joint" : "independent";
}

// Predicted loss increase for removing each parameter. rho has full length d;
// bias coordinates and already-masked coordinates carry +inf so they can
// never win a smallest-first selection.
struct PruneStat {
    std::vector<double> rho;
    StatMethod method = StatMethod::woodfisher;
};

struct PruneDecision {
    std::vector<std::size_t> removed;
    std::vector<double> delta_w;
    double predicted_delta_loss = 0.0;
};

struct GroupSpec {
    enum class Mode { sum, correlated };
    std::vector<std::vector<std::size_t>> groups;
    Mode mode = Mode::sum;
};

namespace detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

inline void seed_sentinels(std::vector<double>& rho, const ParamSpace& space, const Mask& mask) {
    if (mask.dim() != space.dim()) throw StructuralError("stat: mask length mismatch");
    for (std::size_t q = 0; q < space.dim(); ++q) {
        if (!space.prunable[q] || !mask.active[q]) rho[q] = kInf;
    }
}

}  // namespace detail

// rho_q = w_q^2 / (2 [H^-1]_qq)
inline PruneStat stat_woodfisher(const ParamSpace& space, const ChunkedFisherInverse& inv,
                                 const Mask& mask) {
    if (inv.dim() != space.dim()) throw StructuralError("stat: inverse dimension mismatch");
    PruneStat stat;
    stat.method = StatMethod::woodfisher;
    stat.rho.resize(space.dim());
    const auto diag = inv.inverse_diagonal();
    for (std::size_t q = 0; q < space.dim(); ++q) {
        if (!(diag[q] > 0.0))
            throw NumericError("stat: non-positive inverse diagonal at " + std::to_string(q));
        stat.rho[q] = space.values[q] * space.values[q] / (2.0 * diag[q]);
    }
    detail::seed_sentinels(stat.rho, space, mask);
    return stat;
}

// rho_q = (1/2) w_q^2 [H]_qq  (optimal brain damage, diagonal Hessian)
inline PruneStat stat_obd(const ParamSpace& space, std::span<const double> hess_diag,
                          const Mask& mask) {
    if (hess_diag.size() != space.dim()) throw StructuralError("stat: diagonal length mismatch");
    PruneStat stat;
    stat.method = StatMethod::obd;
    stat.rho.resize(space.dim());
    for (std::size_t q = 0; q < space.dim(); ++q) {
        if (!std::isfinite(hess_diag[q])) throw NumericError("stat: non-finite Hessian diagonal");
        stat.rho[q] = 0.5 * space.values[q] * space.values[q] * hess_diag[q];
    }
    detail::seed_sentinels(stat.rho, space, mask);
    return stat;
}

// rho_q = (1/2) w_q^2  (isotropic Hessian)
inline PruneStat stat_magnitude(const ParamSpace& space, const Mask& mask) {
    PruneStat stat;
    stat.method = StatMethod::magnitude;
    stat.rho.resize(space.dim());
    for (std::size_t q = 0; q < space.dim(); ++q)
        stat.rho[q] = 0.5 * space.values[q] * space.values[q];
    detail::seed_sentinels(stat.rho, space, mask);
    return stat;
}

// First-order-aware statistic. With t = H^-1 grad and D_q = [H^-1]_qq:
//   rho_q = w_q^2 / (2 D_q) + t_q^2 / (2 D_q) - w_q t_q / D_q
// The gradient-only constant -(1/2) grad' H^-1 grad is excluded: it does not
// depend on which parameter is removed.
inline PruneStat stat_woodtaylor(const ParamSpace& space, const ChunkedFisherInverse& inv,
                                 std::span<const double> grad, const Mask& mask) {
    if (grad.size() != space.dim()) throw StructuralError("stat: gradient length mismatch");
    PruneStat stat;
    stat.method = StatMethod::woodtaylor;
    stat.rho.resize(space.dim());
    const auto diag = inv.inverse_diagonal();
    const auto t = inv.ihvp(grad);
    for (std::size_t q = 0; q < space.dim(); ++q) {
        if (!(diag[q] > 0.0))
            throw NumericError("stat: non-positive inverse diagonal at " + std::to_string(q));
        const double w = space.values[q];
        stat.rho[q] = (w * w + t[q] * t[q]) / (2.0 * diag[q]) - w * t[q] / diag[q];
    }
    detail::seed_sentinels(stat.rho, space, mask);
    return stat;
}

// Per-group statistic. Sum mode adds the per-parameter statistics; correlated
// mode uses the combined-constraint solution
//   rho_Q = (w' e_Q)^2 / (2 e_Q' H^-1 e_Q)
// with e_Q the group indicator. Groups spanning several chunks see the
// block-diagonal approximation of e_Q' H^-1 e_Q.
inline std::vector<double> stat_structured(const ParamSpace& space,
                                           const ChunkedFisherInverse& inv, const GroupSpec& spec,
                                           const Mask& mask) {
    if (mask.dim() != space.dim()) throw StructuralError("stat: mask length mismatch");
    std::vector<std::uint8_t> seen(space.dim(), 0);
    for (const auto& group : spec.groups) {
        if (group.empty()) throw StructuralError("structured: empty group");
        for (std::size_t q : group) {
            if (q >= space.dim()) throw StructuralError("structured: index out of range");
            if (!space.prunable[q]) throw StructuralError("structured: group touches a bias");
            if (seen[q]) throw StructuralError("structured: groups overlap");
            seen[q] = 1;
        }
    }

    std::vector<double> rho(spec.groups.size(), 0.0);
    if (spec.mode == GroupSpec::Mode::sum) {
        const auto diag = inv.inverse_diagonal();
        for (std::size_t g = 0; g < spec.groups.size(); ++g) {
            double acc = 0.0;
            for (std::size_t q : spec.groups[g]) {
                if (!(diag[q] > 0.0)) throw NumericError("structured: non-positive diagonal");
                acc += space.values[q] * space.values[q] / (2.0 * diag[q]);
            }
            rho[g] = acc;
        }
        return rho;
    }

    std::vector<double> indicator(space.dim(), 0.0);
    for (std::size_t g = 0; g < spec.groups.size(); ++g) {
        for (std::size_t q : spec.groups[g]) indicator[q] = 1.0;
        const auto y = inv.ihvp(indicator);
        double denom = 0.0;
        double w_sum = 0.0;
        for (std::size_t q : spec.groups[g]) {
            denom += y[q];
            w_sum += space.values[q];
        }
        if (!(denom > 0.0)) throw NumericError("structured: non-positive group curvature");
        rho[g] = w_sum * w_sum / (2.0 * denom);
        for (std::size_t q : spec.groups[g]) indicator[q] = 0.0;
    }
    return rho;
}

// rho^FLOPs_q = rho_q / (flops-per-param_q)^beta; beta = 0 is the identity.
inline PruneStat flops_normalize(PruneStat stat, std::span<const double> fpp, double beta) {
    if (beta < 0.0) throw ConfigError("flops_normalize: beta must be >= 0");
    if (beta == 0.0) return stat;
    if (fpp.size() != stat.rho.size()) throw StructuralError("flops_normalize: length mismatch");
    for (std::size_t q = 0; q < stat.rho.size(); ++q) {
        if (!(fpp[q] > 0.0))
            throw NumericError("flops_normalize: non-positive flops-per-param at " +
                               std::to_string(q));
        stat.rho[q] /= std::pow(fpp[q], beta);
    }
    return stat;
}

namespace detail {

// Smallest-rho-first pick of exactly `count` indices from `candidates`,
// ties broken by ascending index.
inline std::vector<std::size_t> pick_smallest(const std::vector<double>& rho,
                                              std::vector<std::size_t>& candidates,
                                              std::size_t count) {
    std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
        if (rho[a] != rho[b]) return rho[a] < rho[b];
        return a < b;
    });
    candidates.resize(count);
    return candidates;
}

}  // namespace detail

namespace detail {

inline std::vector<std::size_t> select_impl(const PruneStat& stat, double target_sparsity,
                                            SelectScope scope, const ParamSpace& space,
                                            const Mask& mask, bool strict) {
    if (!(target_sparsity >= 0.0) || target_sparsity > 1.0)
        throw ConfigError("select: target sparsity must be in [0, 1]");
    if (stat.rho.size() != space.dim()) throw StructuralError("select: statistic length mismatch");
    if (mask.dim() != space.dim()) throw StructuralError("select: mask length mismatch");

    std::vector<std::size_t> removed;
    auto select_range = [&](std::size_t begin, std::size_t end) {
        std::size_t prunable = 0;
        std::size_t pruned = 0;
        std::vector<std::size_t> candidates;
        for (std::size_t q = begin; q < end; ++q) {
            if (!space.prunable[q]) continue;
            ++prunable;
            if (!mask.active[q])
                ++pruned;
            else
                candidates.push_back(q);
        }
        const auto target_count =
            static_cast<std::size_t>(target_sparsity * static_cast<double>(prunable));
        if (target_count < pruned) {
            if (strict) throw ConfigError("select: target sparsity below current sparsity");
            return;
        }
        const std::size_t need = target_count - pruned;
        if (need > candidates.size())
            throw ConfigError("select: target sparsity unreachable with remaining weights");
        if (need == 0) return;
        for (std::size_t q : pick_smallest(stat.rho, candidates, need)) removed.push_back(q);
    };

    if (scope == SelectScope::joint) {
        select_range(0, space.dim());
    } else {
        for (const auto& seg : space.layout.segments) {
            if (seg.kind != SegmentKind::dense_weight) continue;
            select_range(seg.offset, seg.offset + seg.length);
        }
    }
    std::sort(removed.begin(), removed.end());
    return removed;
}

}  // namespace detail

// Translate a sparsity target into removals. Joint mode ranks across the
// whole network; independent mode brings every layer to the target on its
// own. Fractions convert to counts by rounding down, so a requested sparsity
// is never exceeded.
inline std::vector<std::size_t> select(const PruneStat& stat, double target_sparsity,
                                       SelectScope scope, const ParamSpace& space,
                                       const Mask& mask) {
    return detail::select_impl(stat, target_sparsity, scope, space, mask, /*strict=*/true);
}

// Summed single-removal perturbations: dw = -H^-1 (sum_q w_q / D_q e_q),
// then removed coordinates land exactly at -w_q and previously masked
// coordinates stay untouched at zero.
inline std::vector<double> pruning_direction(const ParamSpace& space,
                                             const ChunkedFisherInverse& inv,
                                             std::span<const std::size_t> removed,
                                             const Mask& mask) {
    if (inv.dim() != space.dim()) throw StructuralError("direction: dimension mismatch");
    std::vector<double> weighted(space.dim(), 0.0);
    for (std::size_t q : removed) {
        if (q >= space.dim()) throw StructuralError("direction: index out of range");
        if (!mask.active[q]) throw StructuralError("direction: removing an already-masked index");
        const double d_q = inv.diag_entry(q);
        if (!(d_q > 0.0)) throw NumericError("direction: non-positive inverse diagonal");
        weighted[q] = space.values[q] / d_q;
    }
    auto delta = inv.ihvp(weighted);
    for (double& v : delta) v = -v;
    for (std::size_t q : removed) delta[q] = -space.values[q];
    for (std::size_t q = 0; q < space.dim(); ++q) {
        if (!mask.active[q]) delta[q] = 0.0;
    }
    return delta;
}

// WoodTaylor perturbation: the shared Newton step -H^-1 grad enters once,
// each removal contributes -(w_q - t_q)/D_q H^-1 e_q on top of it.
inline std::vector<double> woodtaylor_direction(const ParamSpace& space,
                                                const ChunkedFisherInverse& inv,
                                                std::span<const double> grad,
                                                std::span<const std::size_t> removed,
                                                const Mask& mask) {
    if (grad.size() != space.dim()) throw StructuralError("direction: gradient length mismatch");
    const auto newton = inv.ihvp(grad);
    std::vector<double> weighted(space.dim(), 0.0);
    for (std::size_t q : removed) {
        if (q >= space.dim()) throw StructuralError("direction: index out of range");
        if (!mask.active[q]) throw StructuralError("direction: removing an already-masked index");
        const double d_q = inv.diag_entry(q);
        if (!(d_q > 0.0)) throw NumericError("direction: non-positive inverse diagonal");
        weighted[q] = (space.values[q] - newton[q]) / d_q;
    }
    auto delta = inv.ihvp(weighted);
    for (std::size_t q = 0; q < space.dim(); ++q) delta[q] = -delta[q] - newton[q];
    for (std::size_t q : removed) delta[q] = -space.values[q];
    for (std::size_t q = 0; q < space.dim(); ++q) {
        if (!mask.active[q]) delta[q] = 0.0;
    }
    return delta;
}

// Combined-constraint group perturbation:
//   dw = -(w' e_Q) H^-1 e_Q / (e_Q' H^-1 e_Q)
inline std::vector<double> structured_direction(const ParamSpace& space,
                                                const ChunkedFisherInverse& inv,
                                                std::span<const std::size_t> group) {
    if (group.empty()) throw StructuralError("structured: empty group");
    std::vector<double> indicator(space.dim(), 0.0);
    double w_sum = 0.0;
    for (std::size_t q : group) {
        if (q >= space.dim()) throw StructuralError("structured: index out of range");
        indicator[q] = 1.0;
        w_sum += space.values[q];
    }
    auto y = inv.ihvp(indicator);
    double denom = 0.0;
    for (std::size_t q : group) denom += y[q];
    if (!(denom > 0.0)) throw NumericError("structured: non-positive group curvature");
    const double scale = -w_sum / denom;
    for (double& v : y) v *= scale;
    return y;
}

// ---- one-shot pruning protocol ----

struct OneShotOptions {
    double target_sparsity = 0.5;
    SelectScope scope = SelectScope::joint;
    StatMethod method = StatMethod::woodfisher;
    std::size_t recompute_steps = 1;
    double beta = 0.0;  // FLOPs-aware exponent; 0 disables normalization
    std::uint64_t seed = 1;
    // Base substream for gradient sampling; callers that prune repeatedly
    // (gradual schedule) bump this so every step sees fresh samples.
    std::uint64_t sample_round = 0;
    std::size_t threads = 1;
};

struct LayerSparsityRow {
    std::string layer;
    std::size_t dense_params = 0;
    std::size_t pruned = 0;
    double sparsity = 0.0;
};

struct OneShotReport {
    std::string method;
    std::string scope;
    double target = 0.0;
    std::uint64_t seed = 0;
    std::size_t recompute_steps = 1;
    double beta = 0.0;
    double acc_before = 0.0;
    double acc_after = 0.0;
    double loss_before = 0.0;
    double loss_after = 0.0;
    double predicted_delta_loss = 0.0;
    double final_sparsity = 0.0;
    std::vector<LayerSparsityRow> per_layer;
    FisherConfig fisher;
};

inline std::vector<LayerSparsityRow> per_layer_sparsity(const ParamSpace& space,
                                                        const Mask& mask) {
    std::vector<LayerSparsityRow> rows;
    for (const auto& seg : space.layout.segments) {
        if (seg.kind != SegmentKind::dense_weight) continue;
        LayerSparsityRow row;
        row.layer = seg.name;
        row.dense_params = seg.length;
        for (std::size_t q = seg.offset; q < seg.offset + seg.length; ++q)
            row.pruned += mask.active[q] ? 0 : 1;
        row.sparsity = static_cast<double>(row.pruned) / static_cast<double>(seg.length);
        rows.push_back(std::move(row));
    }
    return rows;
}

// Prune to the target in `recompute_steps` stages of equal pruned-weight
// increments; before each stage the estimator is rebuilt from fresh gradient
// samples on the current (already perturbed) weights. No retraining happens.
inline OneShotReport one_shot_prune(MlpModel& model, Mask& mask, const Dataset& fisher_data,
                                    const Dataset& eval_data, const FisherConfig& fisher_cfg,
                                    const OneShotOptions& opts) {
    if (opts.recompute_steps == 0) throw ConfigError("one-shot: recompute_steps must be >= 1");
    ParamSpace& space = model.space();
    if (mask.dim() != space.dim()) throw StructuralError("one-shot: mask length mismatch");

    OneShotReport report;
    report.method = to_string(opts.method);
    report.scope = to_string(opts.scope);
    report.target = opts.target_sparsity;
    report.seed = opts.seed;
    report.recompute_steps = opts.recompute_steps;
    report.beta = opts.beta;
    report.fisher = fisher_cfg;
    report.acc_before = model.accuracy(eval_data);
    report.loss_before = model.mean_loss(eval_data);

    const bool needs_samples = opts.method != StatMethod::magnitude;
    const bool needs_inverse =
        opts.method == StatMethod::woodfisher || opts.method == StatMethod::woodtaylor;

    const double start_sparsity = sparsity_of(mask, space);
    if (opts.target_sparsity < start_sparsity)
        throw ConfigError("one-shot: target sparsity below current sparsity");

    for (std::size_t stage = 1; stage <= opts.recompute_steps; ++stage) {
        // pruned-weight count interpolates linearly between the current and
        // the requested sparsity across stages
        const double frac = start_sparsity + (opts.target_sparsity - start_sparsity) *
                                                 static_cast<double>(stage) /
                                                 static_cast<double>(opts.recompute_steps);

        std::vector<GradSample> samples;
        ChunkedFisherInverse inv;
        if (needs_samples)
            samples = collect_grad_samples(model, fisher_data, fisher_cfg, opts.seed,
                                           opts.sample_round * 4096 + stage);
        if (needs_inverse)
            inv = woodfisher_build(samples, space.layout, fisher_cfg, opts.threads);

        PruneStat stat;
        std::vector<double> mean_grad;
        switch (opts.method) {
            case StatMethod::woodfisher:
                stat = stat_woodfisher(space, inv, mask);
                break;
            case StatMethod::woodtaylor: {
                mean_grad.assign(space.dim(), 0.0);
                for (const auto& s : samples)
                    for (std::size_t i = 0; i < space.dim(); ++i) mean_grad[i] += s.grad[i];
                const double inv_m = 1.0 / static_cast<double>(samples.size());
                for (double& g : mean_grad) g *= inv_m;
                stat = stat_woodtaylor(space, inv, mean_grad, mask);
                break;
            }
            case StatMethod::magnitude:
                stat = stat_magnitude(space, mask);
                break;
            case StatMethod::obd:
            case StatMethod::diagonal_fisher: {
                const auto diag = diagonal_fisher(samples, fisher_cfg.damp);
                stat = stat_obd(space, diag.diag, mask);
                stat.method = opts.method;
                break;
            }
        }

        PruneStat ranking = stat;
        if (opts.beta > 0.0) {
            const auto fpp = flops_per_param(dense_layer_flops(space.layout, mask), space.layout);
            ranking = flops_normalize(std::move(ranking), fpp, opts.beta);
        }

        // intermediate stages may undershoot a layer that is already sparser
        // than the interpolation point; only the final stage is strict
        const auto removed = detail::select_impl(ranking, frac, opts.scope, space, mask,
                                                 /*strict=*/stage == opts.recompute_steps);
        if (removed.empty()) continue;

        std::vector<double> delta;
        if (opts.method == StatMethod::woodfisher) {
            delta = pruning_direction(space, inv, removed, mask);
        } else if (opts.method == StatMethod::woodtaylor) {
            delta = woodtaylor_direction(space, inv, mean_grad, removed, mask);
        } else {
            // isotropic or diagonal curvature: the perturbation only zeroes
            // the removed coordinates
            delta.assign(space.dim(), 0.0);
            for (std::size_t q : removed) delta[q] = -space.values[q];
        }

        // predicted loss change always reports the unnormalized statistic
        for (std::size_t q : removed) report.predicted_delta_loss += stat.rho[q];

        for (std::size_t q = 0; q < space.dim(); ++q) space.values[q] += delta[q];
        for (std::size_t q : removed) mask.active[q] = 0;
        apply_mask(space, mask);
        space.check_finite();
    }

    report.acc_after = model.accuracy(eval_data);
    report.loss_after = model.mean_loss(eval_data);
    report.final_sparsity = sparsity_of(mask, space);
    report.per_layer = per_layer_sparsity(space, mask);
    return report;
}

// ---- local quadratic model scan ----

struct QuadScanRow {
    double t = 0.0;
    double actual = 0.0;
    double predicted = 0.0;
};

// Walks w + t * dw for t in [0, 1] and compares the true loss against
// L(w) + (1/2) t^2 dw' H dw with H the dampened empirical Fisher applied
// through its rank-one samples (exact for that operator, no chunking).
inline std::vector<QuadScanRow> quad_scan(
    const std::function<double(std::span<const double>)>& loss_fn, std::span<const double> w,
    std::span<const double> delta_w, std::size_t steps, const std::vector<GradSample>& samples,
    double damp) {
    if (steps == 0) throw ConfigError("quad_scan: steps must be >= 1");
    if (delta_w.size() != w.size()) throw StructuralError("quad_scan: length mismatch");

    const auto h_dw = fisher_matvec(samples, damp, delta_w);
    double curvature = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) curvature += delta_w[i] * h_dw[i];

    const double base_loss = loss_fn(w);
    std::vector<double> point(w.begin(), w.end());
    std::vector<QuadScanRow> rows;
    rows.reserve(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        const double t =
            (steps == 1) ? 0.0 : static_cast<double>(s) / static_cast<double>(steps - 1);
        QuadScanRow row;
        row.t = t;
        if (s == 0) {
            row.actual = base_loss;
        } else {
            for (std::size_t i = 0; i < w.size(); ++i) point[i] = w[i] + t * delta_w[i];
            row.actual = loss_fn(point);
        }
        row.predicted = base_loss + 0.5 * t * t * curvature;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace woodprune
