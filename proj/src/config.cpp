#include "varmap/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "varmap/rng.hpp"

namespace varmap {

using nlohmann::json;

void WindowConfig::validate() const {
    if (length < 2) throw ConfigError("window: length must be >= 2");
    if (stride < 1) throw ConfigError("window: stride must be >= 1");
    if (split.train_end < length || split.val_end < split.train_end)
        throw ConfigError("window: split days must satisfy length <= train_end <= val_end");
}

void ExperimentConfig::validate() const {
    if (tag.empty()) throw ConfigError("config: tag must be non-empty");
    if (out_dir.empty()) throw ConfigError("config: out_dir must be non-empty");
    if (direct_base < 1) throw ConfigError("config: direct_base must be >= 1");
    osse.validate();
    masks.validate();
    window.validate();
    cost.validate();
    solver.validate();
    train.validate();
    oi.validate();
    if (osse.grid.n_t < window.length)
        throw ConfigError("config: grid has fewer days than one window");
    if (cost.prior.n_t != window.length)
        throw ConfigError("config: prior n_t must equal the window length");
    if (window.split.val_end > osse.grid.n_t)
        throw ConfigError("config: val_end exceeds the day count");
}

// ---------------------------------------------------------------------------
// Parsing helpers

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
    throw ConfigError("config: " + where + ": " + what);
}

void check_keys(const json& j, const std::string& where, std::set<std::string> allowed) {
    if (!j.is_object()) bad(where, "expected an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) bad(where, "unknown key '" + k + "'");
}

void geti(const json& j, const char* key, int& out, const std::string& where) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_number_integer()) bad(where + "." + key, "expected an integer");
    out = v.get<int>();
}

void getu(const json& j, const char* key, std::uint64_t& out, const std::string& where) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_number_integer()) bad(where + "." + key, "expected an integer");
    out = v.get<std::uint64_t>();
}

void getd(const json& j, const char* key, double& out, const std::string& where) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_number()) bad(where + "." + key, "expected a number");
    out = v.get<double>();
}

void gets(const json& j, const char* key, std::string& out, const std::string& where) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_string()) bad(where + "." + key, "expected a string");
    out = v.get<std::string>();
}

void getb(const json& j, const char* key, bool& out, const std::string& where) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_boolean()) bad(where + "." + key, "expected a boolean");
    out = v.get<bool>();
}

const char* solver_mode_name(SolverMode m) { return m == SolverMode::GD ? "gd" : "lstm"; }
SolverMode solver_mode_from_name(const std::string& s, const std::string& where) {
    if (s == "gd") return SolverMode::GD;
    if (s == "lstm") return SolverMode::LSTM;
    bad(where, "unknown solver mode '" + s + "' (gd|lstm)");
}

const char* grad_norm_name(GradNorm g) { return g == GradNorm::None ? "none" : "per_field_rms"; }
GradNorm grad_norm_from_name(const std::string& s, const std::string& where) {
    if (s == "none") return GradNorm::None;
    if (s == "per_field_rms") return GradNorm::PerFieldRms;
    bad(where, "unknown grad normalization '" + s + "' (none|per_field_rms)");
}

GridSpec grid_from_json(const json& j, const std::string& where) {
    check_keys(j, where, {"n_t", "n_y", "n_x", "dx", "dt"});
    GridSpec g{60, 64, 64, 0.05, 1.0};
    geti(j, "n_t", g.n_t, where);
    geti(j, "n_y", g.n_y, where);
    geti(j, "n_x", g.n_x, where);
    getd(j, "dx", g.dx, where);
    getd(j, "dt", g.dt, where);
    return g;
}

json grid_to_json(const GridSpec& g) {
    return json{{"n_t", g.n_t}, {"n_y", g.n_y}, {"n_x", g.n_x}, {"dx", g.dx}, {"dt", g.dt}};
}

ObsTermSpec term_from_json(const json& j, const std::string& where) {
    check_keys(j, where,
               {"modality", "index", "kind", "weight", "params", "channels", "ksize", "c_g"});
    ObsTermSpec t;
    geti(j, "modality", t.modality, where);
    geti(j, "index", t.index, where);
    std::string kind = obs_term_kind_name(t.kind);
    gets(j, "kind", kind, where);
    try {
        t.kind = obs_term_kind_from_name(kind);
    } catch (const Error& e) {
        bad(where + ".kind", e.what());
    }
    getd(j, "weight", t.weight, where);
    gets(j, "params", t.params, where);
    geti(j, "channels", t.channels, where);
    geti(j, "ksize", t.ksize, where);
    getd(j, "c_g", t.c_g, where);
    if (t.params.empty())
        t.params = "g" + std::to_string(t.modality) + "_" + std::to_string(t.index);
    return t;
}

json term_to_json(const ObsTermSpec& t) {
    return json{{"modality", t.modality}, {"index", t.index},
                {"kind", obs_term_kind_name(t.kind)}, {"weight", t.weight},
                {"params", t.params},     {"channels", t.channels},
                {"ksize", t.ksize},       {"c_g", t.c_g}};
}

} // namespace

const char* model_kind_name(ModelKind m) { return m == ModelKind::VarNet ? "varnet" : "direct"; }

ModelKind model_kind_from_name(const std::string& s) {
    if (s == "varnet") return ModelKind::VarNet;
    if (s == "direct") return ModelKind::Direct;
    throw ConfigError("config: unknown model '" + s + "' (varnet|direct)");
}

void override_seed(ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.seed = seed;
    cfg.osse.seed = Rng::substream(seed, 0xa11ceu);
    cfg.train.seed = Rng::substream(seed, 0x7ea1u);
}

ExperimentConfig default_config() {
    ExperimentConfig c;
    c.cost.prior.n_t = c.window.length;
    c.cost.terms = {ObsTermSpec{1, 0, ObsTermKind::MaskedIdentity, 50.0, "g1_0", 8, 3, 1.0},
                    ObsTermSpec{2, 0, ObsTermKind::LargeScale, 1.0, "g2_0", 8, 3, 1.0},
                    ObsTermSpec{3, 0, ObsTermKind::FeaturePair, 1.0, "g3_0", 8, 3, 1.0}};
    c.solver.n_iters = 15;
    override_seed(c, c.seed);
    return c;
}

ExperimentConfig config_from_json(const json& j) {
    const ExperimentConfig defaults = default_config();
    ExperimentConfig c = defaults;
    check_keys(j, "root",
               {"tag", "seed", "out_dir", "model", "direct_base", "osse", "masks", "window",
                "cost", "solver", "train", "oi", "metrics"});
    gets(j, "tag", c.tag, "root");
    getu(j, "seed", c.seed, "root");
    gets(j, "out_dir", c.out_dir, "root");
    if (j.contains("model")) {
        std::string m;
        gets(j, "model", m, "root");
        c.model = model_kind_from_name(m);
    }
    geti(j, "direct_base", c.direct_base, "root");

    if (j.contains("osse")) {
        const json& o = j.at("osse");
        check_keys(o, "osse",
                   {"grid", "slope", "lambda0", "u0", "v0", "phase_diffusion", "sigma_obs",
                    "sigma_sst"});
        if (o.contains("grid")) c.osse.grid = grid_from_json(o.at("grid"), "osse.grid");
        getd(o, "slope", c.osse.slope, "osse");
        getd(o, "lambda0", c.osse.lambda0, "osse");
        getd(o, "u0", c.osse.u0, "osse");
        getd(o, "v0", c.osse.v0, "osse");
        getd(o, "phase_diffusion", c.osse.phase_diffusion, "osse");
        getd(o, "sigma_obs", c.osse.sigma_obs, "osse");
        getd(o, "sigma_sst", c.osse.sigma_sst, "osse");
    }
    if (j.contains("masks")) {
        const json& o = j.at("masks");
        check_keys(o, "masks",
                   {"n_nadir_tracks", "track_width", "swath_width", "swath_gap", "angle_min",
                    "angle_max", "target_coverage"});
        geti(o, "n_nadir_tracks", c.masks.n_nadir_tracks, "masks");
        geti(o, "track_width", c.masks.track_width, "masks");
        geti(o, "swath_width", c.masks.swath_width, "masks");
        geti(o, "swath_gap", c.masks.swath_gap, "masks");
        getd(o, "angle_min", c.masks.angle_min, "masks");
        getd(o, "angle_max", c.masks.angle_max, "masks");
        getd(o, "target_coverage", c.masks.target_coverage, "masks");
    }
    if (j.contains("window")) {
        const json& o = j.at("window");
        check_keys(o, "window", {"length", "stride", "train_end", "val_end"});
        geti(o, "length", c.window.length, "window");
        geti(o, "stride", c.window.stride, "window");
        geti(o, "train_end", c.window.split.train_end, "window");
        geti(o, "val_end", c.window.split.val_end, "window");
    }
    if (j.contains("cost")) {
        const json& o = j.at("cost");
        check_keys(o, "cost", {"gamma", "prior", "terms"});
        getd(o, "gamma", c.cost.gamma, "cost");
        if (o.contains("prior")) {
            const json& p = o.at("prior");
            check_keys(p, "cost.prior", {"n_t", "base_channels", "use_bilinear"});
            geti(p, "n_t", c.cost.prior.n_t, "cost.prior");
            geti(p, "base_channels", c.cost.prior.base_channels, "cost.prior");
            getb(p, "use_bilinear", c.cost.prior.use_bilinear, "cost.prior");
        } else {
            c.cost.prior.n_t = c.window.length;
        }
        if (o.contains("terms")) {
            if (!o.at("terms").is_array()) bad("cost.terms", "expected an array");
            c.cost.terms.clear();
            int i = 0;
            for (const json& t : o.at("terms"))
                c.cost.terms.push_back(
                    term_from_json(t, "cost.terms[" + std::to_string(i++) + "]"));
        }
    } else {
        c.cost.prior.n_t = c.window.length;
    }
    if (j.contains("solver")) {
        const json& o = j.at("solver");
        check_keys(o, "solver", {"mode", "n_iters", "alpha", "hidden_channels", "grad_normalization"});
        if (o.contains("mode")) {
            std::string m;
            gets(o, "mode", m, "solver");
            c.solver.mode = solver_mode_from_name(m, "solver.mode");
        }
        geti(o, "n_iters", c.solver.n_iters, "solver");
        getd(o, "alpha", c.solver.alpha, "solver");
        geti(o, "hidden_channels", c.solver.hidden_channels, "solver");
        if (o.contains("grad_normalization")) {
            std::string m;
            gets(o, "grad_normalization", m, "solver");
            c.solver.grad_normalization = grad_norm_from_name(m, "solver.grad_normalization");
        }
    }
    if (j.contains("train")) {
        const json& o = j.at("train");
        check_keys(o, "train",
                   {"weights", "lr", "lr_decay", "lr_period", "unroll", "batch", "epochs"});
        if (o.contains("weights")) {
            const json& w = o.at("weights");
            check_keys(w, "train.weights", {"w_x", "w_grad", "w_phi"});
            getd(w, "w_x", c.train.weights.w_x, "train.weights");
            getd(w, "w_grad", c.train.weights.w_grad, "train.weights");
            getd(w, "w_phi", c.train.weights.w_phi, "train.weights");
        }
        getd(o, "lr", c.train.lr, "train");
        getd(o, "lr_decay", c.train.lr_decay, "train");
        geti(o, "lr_period", c.train.lr_period, "train");
        if (o.contains("unroll")) {
            if (!o.at("unroll").is_array()) bad("train.unroll", "expected an array");
            c.train.unroll.clear();
            int i = 0;
            for (const json& s : o.at("unroll")) {
                const std::string where = "train.unroll[" + std::to_string(i++) + "]";
                check_keys(s, where, {"epoch", "iters"});
                UnrollStage st;
                geti(s, "epoch", st.epoch, where);
                geti(s, "iters", st.iters, where);
                c.train.unroll.push_back(st);
            }
        }
        geti(o, "batch", c.train.batch, "train");
        geti(o, "epochs", c.train.epochs, "train");
    }
    if (j.contains("oi")) {
        const json& o = j.at("oi");
        check_keys(o, "oi",
                   {"length_x", "length_t", "noise_var", "signal_var", "max_obs", "thinning",
                    "time_halfwindow"});
        getd(o, "length_x", c.oi.length_x, "oi");
        getd(o, "length_t", c.oi.length_t, "oi");
        getd(o, "noise_var", c.oi.noise_var, "oi");
        getd(o, "signal_var", c.oi.signal_var, "oi");
        geti(o, "max_obs", c.oi.max_obs, "oi");
        geti(o, "thinning", c.oi.thinning, "oi");
        geti(o, "time_halfwindow", c.oi.time_halfwindow, "oi");
    }
    if (j.contains("metrics")) {
        const json& o = j.at("metrics");
        check_keys(o, "metrics", {"write_nsr_csv"});
        getb(o, "write_nsr_csv", c.metrics.write_nsr_csv, "metrics");
    }

    override_seed(c, c.seed);
    c.validate();
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    json terms = json::array();
    for (const ObsTermSpec& t : c.cost.terms) terms.push_back(term_to_json(t));
    json unroll = json::array();
    for (const UnrollStage& s : c.train.unroll)
        unroll.push_back(json{{"epoch", s.epoch}, {"iters", s.iters}});

    json j;
    j["tag"] = c.tag;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["model"] = model_kind_name(c.model);
    j["direct_base"] = c.direct_base;
    j["osse"] = json{{"grid", grid_to_json(c.osse.grid)},
                     {"slope", c.osse.slope},
                     {"lambda0", c.osse.lambda0},
                     {"u0", c.osse.u0},
                     {"v0", c.osse.v0},
                     {"phase_diffusion", c.osse.phase_diffusion},
                     {"sigma_obs", c.osse.sigma_obs},
                     {"sigma_sst", c.osse.sigma_sst}};
    j["masks"] = json{{"n_nadir_tracks", c.masks.n_nadir_tracks},
                      {"track_width", c.masks.track_width},
                      {"swath_width", c.masks.swath_width},
                      {"swath_gap", c.masks.swath_gap},
                      {"angle_min", c.masks.angle_min},
                      {"angle_max", c.masks.angle_max},
                      {"target_coverage", c.masks.target_coverage}};
    j["window"] = json{{"length", c.window.length},
                       {"stride", c.window.stride},
                       {"train_end", c.window.split.train_end},
                       {"val_end", c.window.split.val_end}};
    j["cost"] = json{{"gamma", c.cost.gamma},
                     {"prior", json{{"n_t", c.cost.prior.n_t},
                                    {"base_channels", c.cost.prior.base_channels},
                                    {"use_bilinear", c.cost.prior.use_bilinear}}},
                     {"terms", terms}};
    j["solver"] = json{{"mode", solver_mode_name(c.solver.mode)},
                       {"n_iters", c.solver.n_iters},
                       {"alpha", c.solver.alpha},
                       {"hidden_channels", c.solver.hidden_channels},
                       {"grad_normalization", grad_norm_name(c.solver.grad_normalization)}};
    j["train"] = json{{"weights", json{{"w_x", c.train.weights.w_x},
                                       {"w_grad", c.train.weights.w_grad},
                                       {"w_phi", c.train.weights.w_phi}}},
                      {"lr", c.train.lr},
                      {"lr_decay", c.train.lr_decay},
                      {"lr_period", c.train.lr_period},
                      {"unroll", unroll},
                      {"batch", c.train.batch},
                      {"epochs", c.train.epochs}};
    j["oi"] = json{{"length_x", c.oi.length_x},
                   {"length_t", c.oi.length_t},
                   {"noise_var", c.oi.noise_var},
                   {"signal_var", c.oi.signal_var},
                   {"max_obs", c.oi.max_obs},
                   {"thinning", c.oi.thinning},
                   {"time_halfwindow", c.oi.time_halfwindow}};
    j["metrics"] = json{{"write_nsr_csv", c.metrics.write_nsr_csv}};
    return j;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: malformed JSON in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

void save_config(const std::string& path, const ExperimentConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw DataError("config: cannot write " + path);
    out << config_to_json(cfg).dump(2) << '\n';
    if (!out) throw DataError("config: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Hashing

std::uint64_t fnv1a(const void* data, std::size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[std::size_t(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("hash_file: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    return hash_hex(fnv1a(bytes.data(), bytes.size()));
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string dump = config_to_json(cfg).dump();
    return hash_hex(fnv1a(dump.data(), dump.size()));
}

} // namespace varmap
