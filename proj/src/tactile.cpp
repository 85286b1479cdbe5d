#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <regex>

#include "tacmpc/error.hpp"
#include "tacmpc/tactile.hpp"

namespace tacmpc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kEmbMagic[4] = {'T', 'E', 'M', 'B'};
constexpr std::uint32_t kEmbVersion = 1;
constexpr int kDatasetVersion = 1;

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t h, std::int64_t v) { return splitmix(h ^ static_cast<std::uint64_t>(v)); }

std::int64_t milli(double v) { return std::llround(v * 1000.0); }

std::string fmt_mm(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

// Uniform jitter whose quantized result stays inside [-half, half].
double jittered(double base, double half, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-half, half);
    double q = quantize_mm(base + u(rng));
    while (q - base > half) q = quantize_mm(q - 1e-3);
    while (base - q > half) q = quantize_mm(q + 1e-3);
    return q;
}

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

json object_json(const ObjectSpec& o) {
    return {{"name", o.name}, {"width", o.width}, {"stiffness", o.stiffness}, {"load", o.load}, {"friction", o.friction}};
}

ObjectSpec object_from_json(const json& j) {
    ObjectSpec o;
    o.name = j.at("name").get<std::string>();
    o.width = j.at("width").get<double>();
    o.stiffness = j.at("stiffness").get<double>();
    o.load = j.at("load").get<double>();
    o.friction = j.at("friction").get<double>();
    return o;
}

}  // namespace

void ContactState::validate() const {
    if (!(depth >= 0.0) || !std::isfinite(depth)) throw Error(ErrorCode::InvalidConfig, "contact depth must be >= 0");
    if (!(stiffness > 0.0) || !std::isfinite(stiffness)) {
        throw Error(ErrorCode::InvalidConfig, "contact stiffness must be > 0");
    }
    if (!std::isfinite(shear)) throw Error(ErrorCode::InvalidConfig, "contact shear must be finite");
}

SyntheticEncoder::SyntheticEncoder(int embed_dim, std::uint64_t seed, double noise_sigma)
    : noise_sigma_(noise_sigma), seed_(seed) {
    if (embed_dim < 1) throw Error(ErrorCode::InvalidConfig, "encoder dimension must be >= 1");
    if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidConfig, "noise sigma must be >= 0");
    std::mt19937_64 rng(splitmix(seed));
    std::normal_distribution<double> n01(0.0, 1.0);
    const double s = 1.0 / std::sqrt(static_cast<double>(embed_dim));
    w_depth_.resize(embed_dim);
    w_shear_.resize(embed_dim);
    for (int i = 0; i < embed_dim; ++i) w_depth_[i] = s * n01(rng);
    for (int i = 0; i < embed_dim; ++i) w_shear_[i] = s * n01(rng);
}

VecX SyntheticEncoder::encode(const ContactState& c) const {
    c.validate();
    VecX f = std::tanh(c.stiffness * c.depth) * w_depth_ + c.shear * w_shear_;
    if (noise_sigma_ > 0.0) {
        std::uint64_t h = splitmix(seed_);
        h = mix(h, milli(c.depth));
        h = mix(h, milli(c.shear));
        h = mix(h, milli(c.stiffness));
        h = mix(h, c.slipping ? 1 : 0);
        std::mt19937_64 rng(h);
        std::normal_distribution<double> n(0.0, noise_sigma_);
        for (Eigen::Index i = 0; i < f.size(); ++i) f[i] += n(rng);
    }
    return f;
}

double GraspPhysics::slip_opening(int site) const { return width[site] - load / (friction * stiffness); }

std::array<ContactState, 2> GraspPhysics::contacts(double p1, double p2) const {
    const double p[2] = {p1, p2};
    std::array<ContactState, 2> c;
    double force[2];
    for (int i = 0; i < 2; ++i) {
        c[i].depth = std::max(0.0, 0.5 * (width[i] - p[i]));
        c[i].stiffness = stiffness;
        c[i].slipping = p[i] > slip_opening(i);
        force[i] = stiffness * c[i].depth;
    }
    const double total = force[0] + force[1];
    for (int i = 0; i < 2; ++i) c[i].shear = total > 0.0 ? shear_gain * load * force[i] / total : 0.0;
    return c;
}

GraspPhysics ObjectSpec::physics() const {
    GraspPhysics g;
    g.width = {width, width};
    g.stiffness = stiffness;
    g.load = load;
    g.friction = friction;
    return g;
}

std::vector<ObjectSpec> default_training_objects() {
    return {{"wood_block", 40.0, 1.4, 0.6, 1.0},
            {"rubber_block", 40.0, 1.0, 0.6, 1.0},
            {"gel_block", 40.0, 0.7, 0.6, 1.0},
            {"foam_block", 40.0, 0.5, 0.6, 1.0}};
}

void ProtocolConfig::validate() const {
    if (!(init_jitter >= 0) || !(slip_jitter >= 0) || !(sweep_span > 0)) {
        throw Error(ErrorCode::InvalidProtocol, "jitters must be >= 0 and the sweep span > 0");
    }
    if (frames < 2 || subtrials < 1) throw Error(ErrorCode::InvalidProtocol, "need >= 2 frames and >= 1 sub-trial");
}

double quantize_mm(double v) { return static_cast<double>(milli(v)) / 1000.0; }

void TrialRecord::validate(int embed_dim, int frames_expected) const {
    if (active_agent != 1 && active_agent != 2) throw Error(ErrorCode::InvalidProtocol, "active agent must be 1 or 2");
    if (static_cast<int>(frames.size()) != frames_expected) {
        throw Error(ErrorCode::InvalidProtocol, "sub-trial has " + std::to_string(frames.size()) + " frames, expected " +
                                                    std::to_string(frames_expected));
    }
    const int a = active_agent - 1;
    for (std::size_t k = 0; k < frames.size(); ++k) {
        const TrialFrame& f = frames[k];
        if (f.index != static_cast<int>(k)) throw Error(ErrorCode::InvalidProtocol, "frame indices must be 0..n-1");
        for (int i = 0; i < 2; ++i) {
            if (f.embedding[i].size() != embed_dim) throw Error(ErrorCode::ShapeMismatch, "embedding length mismatch");
        }
        if (k > 0 && f.opening[a] < frames[k - 1].opening[a]) {
            throw Error(ErrorCode::InvalidProtocol, "active gripper opening decreased within a sub-trial");
        }
    }
}

bool TrialRecord::operator==(const TrialRecord& o) const {
    if (trial_id != o.trial_id || subtrial != o.subtrial || slippage_opening != o.slippage_opening ||
        active_agent != o.active_agent || frames.size() != o.frames.size()) {
        return false;
    }
    for (std::size_t k = 0; k < frames.size(); ++k) {
        const auto& a = frames[k];
        const auto& b = o.frames[k];
        if (a.index != b.index || a.opening != b.opening) return false;
        for (int i = 0; i < 2; ++i) {
            if (a.embedding[i].size() != b.embedding[i].size() || a.embedding[i] != b.embedding[i]) return false;
        }
    }
    return true;
}

std::vector<TrialRecord> generate_trial(const ObjectSpec& object, const ProtocolConfig& protocol,
                                        const SyntheticEncoder& encoder, int trial_id, std::uint64_t seed) {
    protocol.validate();
    const GraspPhysics phys = object.physics();
    const double base_slip = phys.slip_opening(0);
    const double base_init = base_slip - protocol.sweep_span;
    std::mt19937_64 rng(splitmix(seed ^ splitmix(static_cast<std::uint64_t>(trial_id) + 1)));

    std::vector<TrialRecord> out;
    for (int k = 0; k < protocol.subtrials; ++k) {
        TrialRecord r;
        r.trial_id = trial_id;
        r.subtrial = k;
        r.active_agent = 1 + (trial_id + k) % 2;
        const double init_active = jittered(base_init, protocol.init_jitter, rng);
        const double hold = jittered(base_init, protocol.init_jitter, rng);
        r.slippage_opening = jittered(base_slip, protocol.slip_jitter, rng);
        if (!(r.slippage_opening > init_active)) {
            throw Error(ErrorCode::InvalidProtocol, "perturbed slippage opening does not exceed the initial opening");
        }
        const int a = r.active_agent - 1;
        for (int j = 0; j < protocol.frames; ++j) {
            TrialFrame f;
            f.index = j;
            const double t = static_cast<double>(j) / (protocol.frames - 1);
            f.opening[a] = quantize_mm(init_active + (r.slippage_opening - init_active) * t);
            f.opening[1 - a] = hold;
            const auto c = phys.contacts(f.opening[0], f.opening[1]);
            for (int i = 0; i < 2; ++i) f.embedding[i] = encoder.encode(c[i]).cast<float>();
            r.frames.push_back(std::move(f));
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::string subtrial_dir_name(const TrialRecord& r) {
    return "trial" + std::to_string(r.trial_id) + "_sub" + std::to_string(r.subtrial) + "_slip" +
           fmt_mm(r.slippage_opening);
}

std::string emb_file_name(int agent, double opening, int frame) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%d_%.3f_%02d.emb", agent, opening, frame);
    return buf;
}

EmbName parse_emb_name(const std::string& name) {
    static const std::regex re(R"(^([12])_([0-9]+\.[0-9]{3})_([0-9]{2,})\.emb$)");
    std::smatch m;
    if (!std::regex_match(name, m, re)) throw Error(ErrorCode::MalformedName, "bad embedding file name '" + name + "'");
    EmbName e;
    e.agent = std::stoi(m[1].str());
    e.opening = std::strtod(m[2].str().c_str(), nullptr);
    e.frame = std::stoi(m[3].str());
    return e;
}

void write_emb(const fs::path& path, const VecXf& v) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorCode::Io, "cannot write " + path.string());
    os.write(kEmbMagic, 4);
    put_u32(os, kEmbVersion);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        std::uint32_t bits;
        const float x = v[i];
        std::memcpy(&bits, &x, 4);
        put_u32(os, bits);
    }
    if (!os) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

VecXf read_emb(const fs::path& path, int embed_dim) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), kEmbMagic, 4) != 0 || get_u32(buf.data() + 4) != kEmbVersion) {
        throw Error(ErrorCode::BadMagic, path.string() + " lacks the embedding header");
    }
    if (buf.size() != 8 + 4 * static_cast<std::size_t>(embed_dim)) {
        throw Error(ErrorCode::ShapeMismatch, path.string() + " does not hold " + std::to_string(embed_dim) + " floats");
    }
    VecXf v(embed_dim);
    for (int i = 0; i < embed_dim; ++i) {
        const std::uint32_t bits = get_u32(buf.data() + 8 + 4 * i);
        float x;
        std::memcpy(&x, &bits, 4);
        v[i] = x;
    }
    return v;
}

fs::path write_trial(const fs::path& root, const TrialRecord& r) {
    const fs::path dir = root / subtrial_dir_name(r);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
    for (const TrialFrame& f : r.frames) {
        for (int i = 0; i < 2; ++i) write_emb(dir / emb_file_name(i + 1, f.opening[i], f.index), f.embedding[i]);
    }
    return dir;
}

TrialRecord read_trial(const fs::path& dir, int embed_dim, int frames_expected) {
    static const std::regex dre(R"(^trial([0-9]+)_sub([0-9]+)_slip([0-9]+\.[0-9]{3})$)");
    const std::string dname = dir.filename().string();
    std::smatch m;
    if (!std::regex_match(dname, m, dre)) {
        throw Error(ErrorCode::MalformedName, "bad sub-trial directory name '" + dname + "'");
    }
    TrialRecord r;
    r.trial_id = std::stoi(m[1].str());
    r.subtrial = std::stoi(m[2].str());
    r.slippage_opening = std::strtod(m[3].str().c_str(), nullptr);
    r.active_agent = 1 + (r.trial_id + r.subtrial) % 2;

    std::map<int, TrialFrame> frames;
    std::map<int, int> seen;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
        if (!entry.is_regular_file()) continue;
        const EmbName e = parse_emb_name(entry.path().filename().string());
        TrialFrame& f = frames[e.frame];
        f.index = e.frame;
        const int i = e.agent - 1;
        if (seen[e.frame] & (1 << i)) {
            throw Error(ErrorCode::InvalidProtocol, "duplicate agent file for frame " + std::to_string(e.frame));
        }
        seen[e.frame] |= 1 << i;
        f.opening[i] = e.opening;
        f.embedding[i] = read_emb(entry.path(), embed_dim);
    }
    if (ec) throw Error(ErrorCode::Io, "cannot list " + dir.string() + ": " + ec.message());
    for (auto& [idx, f] : frames) {
        if (seen[idx] != 3) throw Error(ErrorCode::InvalidProtocol, "frame " + std::to_string(idx) + " lacks an agent");
        r.frames.push_back(std::move(f));
    }
    r.validate(embed_dim, frames_expected);
    const int s = 2 - r.active_agent;
    for (const TrialFrame& f : r.frames) {
        if (f.opening[s] != r.frames.front().opening[s]) {
            throw Error(ErrorCode::InvalidProtocol, "stationary gripper moved; agent roles do not match the protocol");
        }
    }
    return r;
}

SyntheticEncoder Dataset::encoder() const {
    return SyntheticEncoder(config.embed_dim, config.encoder_seed, config.noise_sigma);
}

json to_json(const DatasetConfig& c) {
    json objs = json::array();
    for (const auto& o : c.objects) objs.push_back(object_json(o));
    return {{"trials", c.trials},
            {"seed", c.seed},
            {"embed_dim", c.embed_dim},
            {"encoder_seed", c.encoder_seed},
            {"noise_sigma", c.noise_sigma},
            {"protocol",
             {{"init_jitter", c.protocol.init_jitter},
              {"slip_jitter", c.protocol.slip_jitter},
              {"sweep_span", c.protocol.sweep_span},
              {"frames", c.protocol.frames},
              {"subtrials", c.protocol.subtrials}}},
            {"objects", objs}};
}

DatasetConfig dataset_config_from_json(const json& j) {
    try {
        DatasetConfig c;
        c.trials = j.at("trials").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.embed_dim = j.at("embed_dim").get<int>();
        c.encoder_seed = j.at("encoder_seed").get<std::uint64_t>();
        c.noise_sigma = j.at("noise_sigma").get<double>();
        const json& p = j.at("protocol");
        c.protocol.init_jitter = p.at("init_jitter").get<double>();
        c.protocol.slip_jitter = p.at("slip_jitter").get<double>();
        c.protocol.sweep_span = p.at("sweep_span").get<double>();
        c.protocol.frames = p.at("frames").get<int>();
        c.protocol.subtrials = p.at("subtrials").get<int>();
        c.objects.clear();
        for (const json& o : j.at("objects")) c.objects.push_back(object_from_json(o));
        return c;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, std::string("dataset config: ") + e.what());
    }
}

Dataset generate_dataset(const DatasetConfig& cfg) {
    if (cfg.trials < 1) throw Error(ErrorCode::InvalidConfig, "need at least one trial");
    if (cfg.objects.empty()) throw Error(ErrorCode::InvalidConfig, "need at least one object");
    cfg.protocol.validate();
    Dataset ds;
    ds.config = cfg;
    const SyntheticEncoder enc = ds.encoder();
    std::vector<std::vector<TrialRecord>> per_trial(static_cast<std::size_t>(cfg.trials));
    std::vector<std::string> errors(static_cast<std::size_t>(cfg.trials));
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < cfg.trials; ++t) {
        try {
            per_trial[t] = generate_trial(cfg.objects[t % cfg.objects.size()], cfg.protocol, enc, t, cfg.seed);
        } catch (const Error& e) {
            errors[t] = e.what();
        }
    }
    for (int t = 0; t < cfg.trials; ++t) {
        if (!errors[t].empty()) throw Error(ErrorCode::InvalidProtocol, "trial " + std::to_string(t) + ": " + errors[t]);
        for (auto& r : per_trial[t]) ds.records.push_back(std::move(r));
    }
    return ds;
}

void write_dataset(const fs::path& dir, const Dataset& ds, bool force) {
    std::error_code ec;
    if (fs::exists(dir, ec) && !fs::is_empty(dir, ec)) {
        if (!force) throw Error(ErrorCode::Io, dir.string() + " exists and is not empty (use force to overwrite)");
        fs::remove_all(dir, ec);
        if (ec) throw Error(ErrorCode::Io, "cannot clear " + dir.string() + ": " + ec.message());
    }
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());

    json subs = json::array();
    for (const TrialRecord& r : ds.records) {
        write_trial(dir, r);
        const ObjectSpec& o = ds.config.objects[static_cast<std::size_t>(r.trial_id) % ds.config.objects.size()];
        subs.push_back({{"dir", subtrial_dir_name(r)},
                        {"trial_id", r.trial_id},
                        {"subtrial", r.subtrial},
                        {"active_agent", r.active_agent},
                        {"slippage_opening", r.slippage_opening},
                        {"object", o.name}});
    }
    const json manifest = {{"format", "tacmpc-dataset"},
                           {"version", kDatasetVersion},
                           {"config", to_json(ds.config)},
                           {"subtrials", subs}};
    std::ofstream os(dir / "dataset.json");
    if (!os) throw Error(ErrorCode::Io, "cannot write manifest in " + dir.string());
    os << manifest.dump(1) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
    std::ifstream is(dir / "dataset.json");
    if (!is) throw Error(ErrorCode::Io, "no dataset.json in " + dir.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::Parse, (dir / "dataset.json").string() + ": " + e.what());
    }
    if (j.value("format", "") != "tacmpc-dataset" || j.value("version", -1) != kDatasetVersion) {
        throw Error(ErrorCode::Parse, "unsupported dataset manifest in " + dir.string());
    }
    Dataset ds;
    ds.config = dataset_config_from_json(j.at("config"));
    const json& subs = j.at("subtrials");
    ds.records.resize(subs.size());
    std::vector<std::string> errors(subs.size());
    const auto count = static_cast<std::ptrdiff_t>(subs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        try {
            const json& s = subs[static_cast<std::size_t>(i)];
            TrialRecord r = read_trial(dir / s.at("dir").get<std::string>(), ds.config.embed_dim,
                                       ds.config.protocol.frames);
            if (r.active_agent != s.at("active_agent").get<int>() ||
                r.slippage_opening != s.at("slippage_opening").get<double>()) {
                throw Error(ErrorCode::InvalidProtocol, "manifest entry disagrees with " + s.at("dir").get<std::string>());
            }
            ds.records[static_cast<std::size_t>(i)] = std::move(r);
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(i)] = e.what();
        }
    }
    for (const auto& e : errors) {
        if (!e.empty()) throw Error(ErrorCode::InvalidProtocol, e);
    }
    return ds;
}

}  // namespace tacmpc
