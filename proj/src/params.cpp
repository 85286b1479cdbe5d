#include <cmath>
#include <random>
#include <string>

#include "tacmpc/error.hpp"
#include "tacmpc/params.hpp"

namespace tacmpc {

void MpcConfig::validate() const {
    if (horizon < 1) throw Error(ErrorCode::InvalidConfig, "horizon must be >= 1");
    if (embed_dim < 1) throw Error(ErrorCode::InvalidConfig, "embedding dimension must be >= 1");
    if (!(dt > 0)) throw Error(ErrorCode::NonPositiveDt, "dt must be positive");
    if (!(q_v > 0) || !(q_a > 0) || !(p_q > 0) || !(eps > 0)) {
        throw Error(ErrorCode::InvalidConfig, "q_v, q_a, p_q and eps must be strictly positive");
    }
    if (!(p_min < p_max) || !(v_min < v_max) || !(a_min < a_max)) {
        throw Error(ErrorCode::InvalidConfig, "state and input bounds must be ordered");
    }
    solver.validate();
}

void MpcParams::validate(int m) const {
    if (A_f.size() != m || C_f.size() != m || Q1.rows() != m || Q1.cols() != m || Q2.rows() != m ||
        Q2.cols() != m || Qc.rows() != m || Qc.cols() != m) {
        throw Error(ErrorCode::DimensionMismatch,
                    "MpcParams shapes do not match embedding dimension " + std::to_string(m));
    }
    if (!A_f.allFinite() || !C_f.allFinite() || !Q1.allFinite() || !Q2.allFinite() || !Qc.allFinite() ||
        !std::isfinite(alpha)) {
        throw Error(ErrorCode::NonFinite, "MpcParams contain NaN/Inf");
    }
}

MpcParams MpcParams::init(int m, std::uint64_t seed, double q_scale, double sens_scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    MpcParams p;
    p.A_f.resize(m);
    p.C_f.resize(m);
    for (int i = 0; i < m; ++i) p.A_f[i] = sens_scale * n01(rng);
    for (int i = 0; i < m; ++i) p.C_f[i] = 0.1 * sens_scale * n01(rng);
    p.Q1 = q_scale * MatX::Identity(m, m);
    p.Q2 = q_scale * MatX::Identity(m, m);
    p.Qc = MatX::Zero(m, m);
    // alpha starts at 1 so the coupling block receives gradient from step one.
    p.alpha = 1.0;
    return p;
}

MpcParams MpcParams::decoupled() const {
    MpcParams p = *this;
    p.alpha = 0.0;
    p.C_f.setZero();
    return p;
}

int MpcParams::flat_size(int m) { return 2 * m + m * (m + 1) + m * m + 1; }

VecX MpcParams::flatten() const {
    const int m = embed_dim();
    VecX out(flat_size(m));
    int k = 0;
    for (int i = 0; i < m; ++i) out[k++] = A_f[i];
    for (int i = 0; i < m; ++i) out[k++] = C_f[i];
    for (int i = 0; i < m; ++i)
        for (int j = 0; j <= i; ++j) out[k++] = Q1(i, j);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j <= i; ++j) out[k++] = Q2(i, j);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) out[k++] = Qc(i, j);
    out[k++] = alpha;
    return out;
}

MpcParams MpcParams::unflatten(const VecX& flat, int m) {
    if (flat.size() != flat_size(m)) {
        throw Error(ErrorCode::DimensionMismatch, "flat parameter vector has wrong length");
    }
    MpcParams p;
    p.A_f.resize(m);
    p.C_f.resize(m);
    p.Q1 = MatX::Zero(m, m);
    p.Q2 = MatX::Zero(m, m);
    p.Qc.resize(m, m);
    int k = 0;
    for (int i = 0; i < m; ++i) p.A_f[i] = flat[k++];
    for (int i = 0; i < m; ++i) p.C_f[i] = flat[k++];
    for (int i = 0; i < m; ++i)
        for (int j = 0; j <= i; ++j) p.Q1(i, j) = flat[k++];
    for (int i = 0; i < m; ++i)
        for (int j = 0; j <= i; ++j) p.Q2(i, j) = flat[k++];
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) p.Qc(i, j) = flat[k++];
    p.alpha = flat[k++];
    return p;
}

MpcParamGrads MpcParamGrads::zeros(int m) {
    MpcParamGrads g;
    g.A_f = VecX::Zero(m);
    g.C_f = VecX::Zero(m);
    g.Q1 = MatX::Zero(m, m);
    g.Q2 = MatX::Zero(m, m);
    g.Qc = MatX::Zero(m, m);
    g.alpha = 0.0;
    g.f1 = VecX::Zero(m);
    g.f2 = VecX::Zero(m);
    return g;
}

VecX MpcParamGrads::flatten_params() const {
    MpcParams p{A_f, C_f, Q1, Q2, Qc, alpha};
    return p.flatten();
}

MpcParamGrads& MpcParamGrads::operator+=(const MpcParamGrads& o) {
    A_f += o.A_f;
    C_f += o.C_f;
    Q1 += o.Q1;
    Q2 += o.Q2;
    Qc += o.Qc;
    alpha += o.alpha;
    f1 += o.f1;
    f2 += o.f2;
    return *this;
}

MpcParamGrads& MpcParamGrads::operator*=(double s) {
    A_f *= s;
    C_f *= s;
    Q1 *= s;
    Q2 *= s;
    Qc *= s;
    alpha *= s;
    f1 *= s;
    f2 *= s;
    return *this;
}

}  // namespace tacmpc
