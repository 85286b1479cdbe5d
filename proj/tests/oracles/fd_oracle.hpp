#pragma once

// Central-difference check of the layer's backward pass through cold solves.

#include <algorithm>
#include <cmath>
#include <vector>

#include "tacmpc/mpc.hpp"

namespace oracle {

using namespace tacmpc;

// Scalar loss sum(gp .* openings) + ga . a_star, evaluated by a cold solve.
// The free-motion part of the openings does not depend on parameters and is
// subtracted so the central difference does not cancel large constants.
inline double probe_loss(const MpcLayer& layer, const MpcParams& p, const MpcInputs& in, const MatX& gp,
                  const Eigen::Vector2d& ga) {
    const MpcOutput o = layer.forward(p, in);
    const double dt = layer.config().dt;
    double acc = ga.dot(o.a_star);
    for (int k = 1; k <= o.predicted_openings.cols(); ++k) {
        acc += gp(0, k - 1) * (o.predicted_openings(0, k - 1) - in.s1.p - k * dt * in.s1.v);
        acc += gp(1, k - 1) * (o.predicted_openings(1, k - 1) - in.s2.p - k * dt * in.s2.v);
    }
    return acc;
}

struct FdReport {
    double max_rel = 0.0;
    int coords = 0;
    int worst_group = -1;
};

// Central differences on every flattened parameter and input coordinate.
inline FdReport fd_compare(const MpcLayer& layer, const MpcParams& p, const MpcInputs& in, const MatX& gp,
                    const Eigen::Vector2d& ga, const MpcParamGrads& g, double h = 1e-5) {
    const int M = layer.config().embed_dim;
    const VecX theta = p.flatten();
    const VecX ana_p = g.flatten_params();
    std::vector<double> ana, fd;
    for (int i = 0; i < theta.size(); ++i) {
        VecX tp = theta, tm = theta;
        tp[i] += h;
        tm[i] -= h;
        const double lp = probe_loss(layer, MpcParams::unflatten(tp, M), in, gp, ga);
        const double lm = probe_loss(layer, MpcParams::unflatten(tm, M), in, gp, ga);
        fd.push_back((lp - lm) / (2 * h));
        ana.push_back(ana_p[i]);
    }
    for (int agent = 0; agent < 2; ++agent) {
        for (int m = 0; m < M; ++m) {
            MpcInputs ip = in, im = in;
            (agent == 0 ? ip.f1 : ip.f2)[m] += h;
            (agent == 0 ? im.f1 : im.f2)[m] -= h;
            fd.push_back((probe_loss(layer, p, ip, gp, ga) - probe_loss(layer, p, im, gp, ga)) / (2 * h));
            ana.push_back((agent == 0 ? g.f1 : g.f2)[m]);
        }
    }
    // Relative error per parameter tensor: ||ana - fd||_inf / ||fd||_inf.
    const int groups[] = {M, M, M * (M + 1) / 2, M * (M + 1) / 2, M * M, 1, M, M};
    FdReport r;
    r.coords = static_cast<int>(fd.size());
    std::size_t at = 0;
    for (int gi = 0; gi < 8; ++gi) {
        double num = 0.0, den = 1e-12;
        for (int j = 0; j < groups[gi]; ++j, ++at) {
            num = std::max(num, std::abs(fd[at] - ana[at]));
            den = std::max(den, std::abs(fd[at]));
        }
        if (num / den > r.max_rel) {
            r.max_rel = num / den;
            r.worst_group = gi;
        }
    }
    return r;
}

}  // namespace oracle
