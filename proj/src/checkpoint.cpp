#include <fstream>
#include <string>

#include <Eigen/Eigenvalues>

#include "tacmpc/checkpoint.hpp"
#include "tacmpc/error.hpp"
#include "tacmpc/mpc.hpp"

namespace tacmpc {

using nlohmann::json;

namespace {

json vec_json(const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const MatX& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
    return rows;
}

VecX vec_from(const json& j, const char* what) {
    if (!j.is_array()) throw Error(ErrorCode::Parse, std::string(what) + " must be an array");
    VecX v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw Error(ErrorCode::Parse, std::string(what) + " holds a non-number");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

MatX mat_from(const json& j, const char* what, int m) {
    if (!j.is_array() || static_cast<int>(j.size()) != m) {
        throw Error(ErrorCode::DimensionMismatch, std::string(what) + " must have " + std::to_string(m) + " rows");
    }
    MatX out(m, m);
    for (int i = 0; i < m; ++i) {
        const VecX r = vec_from(j[static_cast<std::size_t>(i)], what);
        if (r.size() != m) throw Error(ErrorCode::DimensionMismatch, std::string(what) + " row has wrong length");
        out.row(i) = r.transpose();
    }
    return out;
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, std::string("config key '") + key + "': " + e.what());
    }
}

}  // namespace

json to_json(const qp::SolverSettings& s) {
    return {{"eps_abs", s.eps_abs},
            {"eps_rel", s.eps_rel},
            {"eps_prim_inf", s.eps_prim_inf},
            {"eps_dual_inf", s.eps_dual_inf},
            {"rho", s.rho},
            {"sigma", s.sigma},
            {"alpha", s.alpha},
            {"max_iter", s.max_iter},
            {"warm_start", s.warm_start},
            {"adaptive_rho", s.adaptive_rho},
            {"adaptive_rho_interval", s.adaptive_rho_interval},
            {"scaling_iters", s.scaling_iters},
            {"polish", s.polish},
            {"check_interval", s.check_interval}};
}

qp::SolverSettings solver_settings_from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::Parse, "solver settings must be an object");
    qp::SolverSettings s;
    read_opt(j, "eps_abs", s.eps_abs);
    read_opt(j, "eps_rel", s.eps_rel);
    read_opt(j, "eps_prim_inf", s.eps_prim_inf);
    read_opt(j, "eps_dual_inf", s.eps_dual_inf);
    read_opt(j, "rho", s.rho);
    read_opt(j, "sigma", s.sigma);
    read_opt(j, "alpha", s.alpha);
    read_opt(j, "max_iter", s.max_iter);
    read_opt(j, "warm_start", s.warm_start);
    read_opt(j, "adaptive_rho", s.adaptive_rho);
    read_opt(j, "adaptive_rho_interval", s.adaptive_rho_interval);
    read_opt(j, "scaling_iters", s.scaling_iters);
    read_opt(j, "polish", s.polish);
    read_opt(j, "check_interval", s.check_interval);
    s.validate();
    return s;
}

json to_json(const MpcConfig& c) {
    return {{"horizon", c.horizon}, {"embed_dim", c.embed_dim}, {"dt", c.dt},       {"q_v", c.q_v},
            {"q_a", c.q_a},         {"p_q", c.p_q},             {"eps", c.eps},     {"p_min", c.p_min},
            {"p_max", c.p_max},     {"v_min", c.v_min},         {"v_max", c.v_max}, {"a_min", c.a_min},
            {"a_max", c.a_max},     {"solver", to_json(c.solver)}};
}

MpcConfig config_from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::Parse, "MPC config must be an object");
    MpcConfig c;
    read_opt(j, "horizon", c.horizon);
    read_opt(j, "embed_dim", c.embed_dim);
    read_opt(j, "dt", c.dt);
    read_opt(j, "q_v", c.q_v);
    read_opt(j, "q_a", c.q_a);
    read_opt(j, "p_q", c.p_q);
    read_opt(j, "eps", c.eps);
    read_opt(j, "p_min", c.p_min);
    read_opt(j, "p_max", c.p_max);
    read_opt(j, "v_min", c.v_min);
    read_opt(j, "v_max", c.v_max);
    read_opt(j, "a_min", c.a_min);
    read_opt(j, "a_max", c.a_max);
    if (j.contains("solver")) c.solver = solver_settings_from_json(j.at("solver"));
    c.validate();
    return c;
}

json to_json(const MpcParams& p) {
    return {{"embed_dim", p.embed_dim()}, {"A_f", vec_json(p.A_f)}, {"C_f", vec_json(p.C_f)},
            {"Q1", mat_json(p.Q1)},       {"Q2", mat_json(p.Q2)},   {"Qc", mat_json(p.Qc)},
            {"alpha", p.alpha}};
}

MpcParams params_from_json(const json& j) {
    if (!j.is_object() || !j.contains("embed_dim")) throw Error(ErrorCode::Parse, "params must carry embed_dim");
    for (const char* k : {"A_f", "C_f", "Q1", "Q2", "Qc", "alpha"}) {
        if (!j.contains(k)) throw Error(ErrorCode::Parse, std::string("params missing '") + k + "'");
    }
    const int m = j.at("embed_dim").get<int>();
    if (m < 1) throw Error(ErrorCode::DimensionMismatch, "embed_dim must be positive");
    MpcParams p;
    p.A_f = vec_from(j.at("A_f"), "A_f");
    p.C_f = vec_from(j.at("C_f"), "C_f");
    p.Q1 = mat_from(j.at("Q1"), "Q1", m);
    p.Q2 = mat_from(j.at("Q2"), "Q2", m);
    p.Qc = mat_from(j.at("Qc"), "Qc", m);
    if (!j.at("alpha").is_number()) throw Error(ErrorCode::Parse, "alpha must be a number");
    p.alpha = j.at("alpha").get<double>();
    p.validate(m);
    return p;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    const json j = {{"format", "tacmpc-checkpoint"},
                    {"version", kCheckpointVersion},
                    {"config", to_json(ck.config)},
                    {"params", to_json(ck.params)},
                    {"extra", ck.extra}};
    // Write-then-rename so a crash never leaves a truncated checkpoint.
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp);
        if (!os) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
        os << j.dump(1) << '\n';
        if (!os) throw Error(ErrorCode::Io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::Io, "cannot open " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
    }
    if (!j.is_object() || j.value("format", "") != "tacmpc-checkpoint") {
        throw Error(ErrorCode::Parse, path.string() + " is not a checkpoint");
    }
    if (j.value("version", -1) != kCheckpointVersion) {
        throw Error(ErrorCode::Parse, "unsupported checkpoint version in " + path.string());
    }
    Checkpoint ck;
    ck.config = config_from_json(j.at("config"));
    ck.params = params_from_json(j.at("params"));
    if (ck.params.embed_dim() != ck.config.embed_dim) {
        throw Error(ErrorCode::DimensionMismatch, "checkpoint params do not match config embed_dim");
    }
    if (j.contains("extra")) ck.extra = j.at("extra");
    const MatX Q = assemble_qf(ck.params, ck.config);
    const double lmin = Eigen::SelfAdjointEigenSolver<MatX>(Q, Eigen::EigenvaluesOnly).eigenvalues()[0];
    if (lmin < 0.5 * ck.config.eps) {
        throw Error(ErrorCode::InvalidConfig, "checkpoint tactile penalty is not positive definite");
    }
    return ck;
}

}  // namespace tacmpc
