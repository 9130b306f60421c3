#include "disperse/types.hpp"

#include <cmath>

namespace disperse {

void fit_loglog(ScalingReport& report, const std::vector<double>& weights) {
    std::vector<double> lx, ly, w;
    for (size_t i = 0; i < report.xs.size() && i < report.ys.size(); ++i) {
        if (!(report.xs[i] > 0.0) || !(report.ys[i] > 0.0)) continue;
        lx.push_back(std::log(report.xs[i]));
        ly.push_back(std::log(report.ys[i]));
        w.push_back(i < weights.size() && weights[i] > 0.0 ? weights[i] : 1.0);
    }
    if (lx.size() < 2) {
        report.slope = 0.0;
        report.intercept = 0.0;
        report.r2 = 0.0;
        report.degenerate = true;
        return;
    }
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < lx.size(); ++i) {
        sw += w[i];
        sx += w[i] * lx[i];
        sy += w[i] * ly[i];
        sxx += w[i] * lx[i] * lx[i];
        sxy += w[i] * lx[i] * ly[i];
    }
    const double denom = sw * sxx - sx * sx;
    report.slope = (sw * sxy - sx * sy) / denom;
    report.intercept = (sy - report.slope * sx) / sw;

    double ss_res = 0, ss_tot = 0;
    const double mean = sy / sw;
    for (size_t i = 0; i < lx.size(); ++i) {
        const double fit = report.intercept + report.slope * lx[i];
        ss_res += w[i] * (ly[i] - fit) * (ly[i] - fit);
        ss_tot += w[i] * (ly[i] - mean) * (ly[i] - mean);
    }
    report.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    report.degenerate = false;
}

}  // namespace disperse
