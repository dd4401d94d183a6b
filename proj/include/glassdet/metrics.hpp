#pragma once

#include "glassdet/tensor.hpp"

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

namespace glassdet {

struct MetricReport {
    double iou = 0.0;
    double f_beta = 0.0;
    double mae = 0.0;
    double ber = 0.0;  // percentage
    int64_t n_tp = 0, n_fp = 0, n_fn = 0, n_tn = 0;
    int64_t n_p() const { return n_tp + n_fn; }
    int64_t n_n() const { return n_tn + n_fp; }
};

namespace detail {

inline void check_same_size(size_t a, size_t b, const char* who) {
    if (a != b)
        throw ShapeError(std::string(who) + ": size mismatch " + std::to_string(a) + " vs " +
                         std::to_string(b));
}

inline void check_binary(const std::vector<uint8_t>& m, const char* who) {
    for (uint8_t v : m)
        if (v > 1) throw ValueError(std::string(who) + ": mask values must be 0 or 1");
}

struct Counts {
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts count(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
    Counts c;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        c.tp += p && g;
        c.fp += p && !g;
        c.fn += !p && g;
        c.tn += !p && !g;
    }
    return c;
}

}  // namespace detail

/// Mean absolute error between a probability map and a binary ground truth.
inline double mae(const std::vector<double>& pred_prob, const std::vector<uint8_t>& gt) {
    detail::check_same_size(pred_prob.size(), gt.size(), "mae");
    detail::check_binary(gt, "mae");
    double s = 0.0;
    for (size_t i = 0; i < pred_prob.size(); ++i)
        s += std::abs(pred_prob[i] - static_cast<double>(gt[i]));
    return s / static_cast<double>(pred_prob.size());
}

/// F-measure with beta^2 = 0.3; zero when either precision or recall has an
/// empty denominator.
inline double f_beta(const std::vector<uint8_t>& pred_bin, const std::vector<uint8_t>& gt,
                     double beta_sq = 0.3) {
    detail::check_same_size(pred_bin.size(), gt.size(), "f_beta");
    const auto c = detail::count(pred_bin, gt);
    if (c.tp + c.fp == 0 || c.tp + c.fn == 0) return 0.0;
    const double precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    const double recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    const double denom = beta_sq * precision + recall;
    if (denom == 0.0) return 0.0;
    return (1.0 + beta_sq) * precision * recall / denom;
}

/// Intersection over union; 1 when both masks are empty.
inline double iou(const std::vector<uint8_t>& pred_bin, const std::vector<uint8_t>& gt) {
    detail::check_same_size(pred_bin.size(), gt.size(), "iou");
    const auto c = detail::count(pred_bin, gt);
    const int64_t denom = c.tp + c.fp + c.fn;
    return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

/// Balanced error rate in percent; an empty class counts as perfect on it.
inline double ber(const std::vector<uint8_t>& pred_bin, const std::vector<uint8_t>& gt) {
    detail::check_same_size(pred_bin.size(), gt.size(), "ber");
    const auto c = detail::count(pred_bin, gt);
    const int64_t np = c.tp + c.fn, nn = c.tn + c.fp;
    const double tpr = np == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(np);
    const double tnr = nn == 0 ? 1.0 : static_cast<double>(c.tn) / static_cast<double>(nn);
    return 100.0 * (1.0 - 0.5 * (tpr + tnr));
}

inline std::vector<uint8_t> binarize(const std::vector<double>& prob, double threshold = 0.5) {
    std::vector<uint8_t> out(prob.size());
    for (size_t i = 0; i < prob.size(); ++i) out[i] = prob[i] >= threshold ? 1 : 0;
    return out;
}

/// Per-image metrics averaged over the set; MAE on the continuous maps,
/// IoU/F-beta/BER on the 0.5-binarized maps. Counts are summed raw totals.
inline MetricReport evaluate_set(const std::vector<std::vector<double>>& preds,
                                 const std::vector<std::vector<uint8_t>>& gts,
                                 double threshold = 0.5) {
    if (preds.size() != gts.size())
        throw ShapeError("evaluate_set: prediction/ground-truth count mismatch");
    if (preds.empty()) throw ValueError("evaluate_set: empty evaluation set");
    MetricReport r;
    for (size_t i = 0; i < preds.size(); ++i) {
        const auto bin = binarize(preds[i], threshold);
        r.mae += mae(preds[i], gts[i]);
        r.iou += iou(bin, gts[i]);
        r.f_beta += f_beta(bin, gts[i]);
        r.ber += ber(bin, gts[i]);
        const auto c = detail::count(bin, gts[i]);
        r.n_tp += c.tp;
        r.n_fp += c.fp;
        r.n_fn += c.fn;
        r.n_tn += c.tn;
    }
    const double n = static_cast<double>(preds.size());
    r.mae /= n;
    r.iou /= n;
    r.f_beta /= n;
    r.ber /= n;
    return r;
}

/// The report line used by the CLI: `iou=<f4> fbeta=<f4> mae=<f4> ber=<f2>`.
inline std::string format_report_line(const MetricReport& r) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "iou=%.4f fbeta=%.4f mae=%.4f ber=%.2f", r.iou, r.f_beta,
                  r.mae, r.ber);
    return buf;
}

}  // namespace glassdet
