#include "varmap/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <json.hpp>

#include "varmap/gradcheck.hpp"
#include "varmap/metrics.hpp"
#include "varmap/rng.hpp"

namespace varmap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const ExperimentConfig& cfg, const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
}

void ensure_out_dir(const ExperimentConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw DataError("cannot create out_dir '" + cfg.out_dir + "': " + ec.message());
}

void write_manifest(const ExperimentConfig& cfg, const std::string& command,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    json j;
    j["command"] = command;
    j["config_hash"] = config_hash(cfg);
    j["seed"] = cfg.seed;
    json in = json::object(), out = json::object();
    for (const std::string& n : inputs) in[n] = hash_file(join(cfg, n));
    for (const std::string& n : outputs) out[n] = hash_file(join(cfg, n));
    j["inputs"] = in;
    j["outputs"] = out;
    std::ofstream f(join(cfg, "manifest_" + command + ".json"));
    if (!f) throw DataError("cannot write manifest for " + command);
    f << j.dump(2) << '\n';
}

/// The artifact must exist; when the producer's manifest is present the
/// recorded content hash must match (a mismatch means a stale or foreign
/// file and the chain back to config+seed is broken).
void require_input(const ExperimentConfig& cfg, const std::string& producer,
                   const std::string& name) {
    const std::string path = join(cfg, name);
    if (!fs::exists(path))
        throw DataError("missing artifact '" + name + "'; run '" + producer + "' first");
    const std::string mpath = join(cfg, "manifest_" + producer + ".json");
    if (!fs::exists(mpath)) return; // hand-placed inputs are allowed
    std::ifstream f(mpath);
    json m;
    try {
        f >> m;
    } catch (const json::exception& e) {
        throw ParseError("malformed manifest " + mpath + ": " + e.what());
    }
    if (!m.contains("outputs") || !m["outputs"].contains(name)) return;
    const std::string recorded = m["outputs"][name].get<std::string>();
    const std::string actual = hash_file(path);
    if (recorded != actual)
        throw DataError("artifact '" + name + "' does not match the manifest of '" + producer +
                        "' (stale or modified); rerun '" + producer + "'");
}

FieldStack take_field(FieldMap& fm, const std::string& name, const std::string& file) {
    for (auto& [n, f] : fm)
        if (n == name) return std::move(f);
    throw DataError("field '" + name + "' not found in " + file);
}

struct Artifacts {
    FieldStack truth, sst, masks, oi;
};

Artifacts load_artifacts(const ExperimentConfig& cfg, bool need_oi) {
    require_input(cfg, "generate", "truth.fstk");
    FieldMap fm = read_fstk(join(cfg, "truth.fstk"));
    Artifacts a;
    a.truth = take_field(fm, "truth", "truth.fstk");
    a.sst = take_field(fm, "sst", "truth.fstk");
    a.masks = take_field(fm, "masks", "truth.fstk");
    if (!(a.truth.grid == cfg.osse.grid))
        throw DataError("truth.fstk grid does not match the config; rerun 'generate'");
    if (need_oi) {
        require_input(cfg, "baseline-oi", "oi.fstk");
        FieldMap om = read_fstk(join(cfg, "oi.fstk"));
        a.oi = take_field(om, "oi", "oi.fstk");
        if (!(a.oi.grid == a.truth.grid)) throw DataError("oi.fstk grid mismatch");
    }
    return a;
}

Dataset assemble(const ExperimentConfig& cfg, const Artifacts& a) {
    return make_dataset(a.truth, a.sst, a.masks, cfg.window.length, cfg.window.stride,
                        cfg.osse.sigma_obs, a.oi, cfg.window.split, cfg.osse.seed);
}

ParamStore init_params(const ExperimentConfig& cfg) {
    if (cfg.model == ModelKind::Direct)
        return direct_init(cfg.window.length, cfg.direct_base,
                           Rng::substream(cfg.train.seed, 0x120));
    ParamStore P = phi_init(cfg.cost.prior, Rng::substream(cfg.train.seed, 0x100));
    P.merge(solver_init(cfg.solver, Rng::substream(cfg.train.seed, 0x101)));
    for (const ObsTermSpec& t : cfg.cost.terms)
        if (t.kind == ObsTermKind::FeaturePair && t.weight > 0.0)
            P.merge(feature_pair_init(
                t, Rng::substream(cfg.train.seed,
                                  0x110 + std::uint64_t(t.modality) * 8 + std::uint64_t(t.index))));
    return P;
}

double coverage_fraction(const FieldStack& masks) {
    double s = 0.0;
    for (float v : masks.data) s += double(v);
    return s / double(masks.data.size());
}

} // namespace

void run_generate(const ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    FieldStack truth = synth_truth(cfg.osse);
    FieldStack sst = derive_sst(truth, cfg.osse.sigma_sst, cfg.osse.seed);
    FieldStack masks = make_masks(cfg.masks, cfg.osse.grid, cfg.osse.seed);
    write_fstk(join(cfg, "truth.fstk"),
               FieldMap{{"truth", truth}, {"sst", sst}, {"masks", masks}});
    write_manifest(cfg, "generate", {}, {"truth.fstk"});
    std::printf("generate: %d days of %dx%d, mean daily coverage %.2f%%\n", cfg.osse.grid.n_t,
                cfg.osse.grid.n_y, cfg.osse.grid.n_x, 100.0 * coverage_fraction(masks));
}

void run_baseline_oi(const ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    Artifacts a = load_artifacts(cfg, false);
    ObsModality y1 = make_obs_ssh(a.truth, a.masks, cfg.osse.sigma_obs, cfg.osse.seed);
    OIResult oi = optimal_interp(y1, cfg.oi, a.truth.grid);
    if (oi.empty_obs)
        std::cerr << "[warn] baseline-oi: no observations anywhere; wrote the prior mean\n";
    write_fstk(join(cfg, "oi.fstk"), FieldMap{{"oi", oi.field}});
    write_manifest(cfg, "baseline-oi", {"truth.fstk"}, {"oi.fstk"});
    std::printf("baseline-oi: mapped %d frames\n", a.truth.grid.n_t);
}

void run_train(const ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    Artifacts a = load_artifacts(cfg, true);
    Dataset ds = assemble(cfg, a);
    std::printf("train: model=%s tag=%s, %zu train / %zu val windows\n",
                model_kind_name(cfg.model), cfg.tag.c_str(), ds.train.size(), ds.val.size());
    TrainResult r =
        train_loop(ds, cfg.model, cfg.train, cfg.cost, cfg.solver, cfg.direct_base, init_params(cfg));
    const std::string model_file = "model_" + cfg.tag + ".ck";
    const std::string history_file = "history_" + cfg.tag + ".csv";
    save_checkpoint(join(cfg, model_file), r.params, r.opt);
    write_history_csv(join(cfg, history_file), r.history);
    write_manifest(cfg, "train", {"truth.fstk", "oi.fstk"}, {model_file, history_file});
    if (!r.history.empty()) {
        const EpochStats& last = r.history.back();
        std::printf("train: %zu epochs, best epoch %d, final train loss %.6g, val mu %.4f\n",
                    r.history.size(), r.best_epoch, last.train_loss, last.val_mu);
    }
    if (r.diverged)
        throw DivergenceError("train: run diverged; last good checkpoint saved",
                              int(r.history.size()));
}

void run_reconstruct(const ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    Artifacts a = load_artifacts(cfg, true);
    Dataset ds = assemble(cfg, a);
    const std::string model_file = "model_" + cfg.tag + ".ck";
    require_input(cfg, "train", model_file);
    Checkpoint ck = load_checkpoint(join(cfg, model_file));

    const GridSpec& g = a.truth.grid;
    const int t0 = cfg.window.split.val_end;
    GridSpec test_grid = g;
    test_grid.n_t = g.n_t - t0;
    if (test_grid.n_t < 2) throw DataError("reconstruct: test block has fewer than 2 days");
    FieldStack recon(test_grid);
    std::vector<int> hits(std::size_t(test_grid.n_t), 0);
    const std::size_t plane = g.frame_size();
    for (const TrainSample& s : ds.test) {
        FieldStack comp =
            composite(model_predict(s, cfg.model, cfg.cost, cfg.solver, cfg.direct_base, ck.params));
        for (int f = 0; f < cfg.window.length; ++f) {
            const int day = s.start_day + f;
            if (day < t0) continue;
            const int idx = day - t0;
            ++hits[std::size_t(idx)];
            float* dst = recon.data.data() + std::size_t(idx) * plane;
            const float* src = comp.data.data() + std::size_t(f) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
        }
    }
    for (int t = 0; t < test_grid.n_t; ++t) {
        if (hits[std::size_t(t)] == 0)
            throw DataError("reconstruct: test day " + std::to_string(t0 + t) +
                            " is not covered by any window");
        float* dst = recon.data.data() + std::size_t(t) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] /= float(hits[std::size_t(t)]);
    }
    const std::string recon_file = "recon_" + cfg.tag + ".fstk";
    write_fstk(join(cfg, recon_file), FieldMap{{"recon", recon}});
    write_manifest(cfg, "reconstruct", {"truth.fstk", "oi.fstk", model_file}, {recon_file});
    std::printf("reconstruct: %s over days [%d,%d)\n", recon_file.c_str(), t0, g.n_t);
}

void run_evaluate(const ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    Artifacts a = load_artifacts(cfg, true);
    const int t0 = cfg.window.split.val_end;
    const int nt = a.truth.grid.n_t - t0;
    if (nt < 2) throw DataError("evaluate: test block has fewer than 2 days");
    FieldStack truth_test = window_stack(a.truth, t0, nt);

    std::vector<std::pair<std::string, FieldStack>> methods;
    methods.emplace_back("oi", window_stack(a.oi, t0, nt));
    std::vector<std::string> recon_files;
    for (const auto& e : fs::directory_iterator(cfg.out_dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("recon_", 0) == 0 && name.size() > 11 &&
            name.substr(name.size() - 5) == ".fstk")
            recon_files.push_back(name);
    }
    std::sort(recon_files.begin(), recon_files.end());
    for (const std::string& name : recon_files) {
        FieldMap fm = read_fstk(join(cfg, name));
        FieldStack r = take_field(fm, "recon", name);
        if (!(r.grid == truth_test.grid))
            throw DataError("evaluate: " + name + " grid does not match the test block");
        methods.emplace_back(name.substr(6, name.size() - 11), std::move(r));
    }

    json scores = json::object();
    std::vector<std::string> outputs;
    std::printf("%-14s %8s %8s %12s %12s\n", "method", "mu", "sigma", "lambda_x", "lambda_t");
    for (const auto& [name, field] : methods) {
        const ScoreReport rep = score_report(field, truth_test);
        json row;
        row["mu"] = rep.mu;
        row["sigma"] = rep.sigma;
        row["lambda_x"] = rep.lambda_x;
        row["lambda_t"] = rep.lambda_t;
        row["unresolved_x"] = rep.unresolved_x;
        row["unresolved_t"] = rep.unresolved_t;
        scores[name] = row;
        char lx[32], lt[32];
        if (rep.unresolved_x) std::snprintf(lx, sizeof lx, "%12s", "unresolved");
        else std::snprintf(lx, sizeof lx, "%9.4f deg", rep.lambda_x);
        if (rep.unresolved_t) std::snprintf(lt, sizeof lt, "%12s", "unresolved");
        else std::snprintf(lt, sizeof lt, "%8.2f days", rep.lambda_t);
        std::printf("%-14s %8.4f %8.4f %s %s\n", name.c_str(), rep.mu, rep.sigma, lx, lt);

        if (cfg.metrics.write_nsr_csv) {
            for (SpectralAxis ax : {SpectralAxis::X, SpectralAxis::T}) {
                const ResolvedScale rs = resolved_scale(field, truth_test, ax);
                const std::string csv =
                    "nsr_" + name + (ax == SpectralAxis::X ? "_x.csv" : "_t.csv");
                std::ofstream f(join(cfg, csv));
                if (!f) throw DataError("evaluate: cannot write " + csv);
                f << "k,nsr\n" << std::setprecision(17);
                for (std::size_t i = 0; i < rs.k.size(); ++i)
                    f << rs.k[i] << ',' << rs.nsr[i] << '\n';
                outputs.push_back(csv);
            }
        }
    }
    {
        std::ofstream f(join(cfg, "scores.json"));
        if (!f) throw DataError("evaluate: cannot write scores.json");
        f << scores.dump(2) << '\n';
    }
    outputs.push_back("scores.json");
    std::vector<std::string> inputs{"truth.fstk", "oi.fstk"};
    inputs.insert(inputs.end(), recon_files.begin(), recon_files.end());
    write_manifest(cfg, "evaluate", inputs, outputs);
}

bool run_gradcheck(const ExperimentConfig& cfg) {
    bool ok = true;
    for (const GradCheckEntry& e : gradcheck_all(cfg.seed)) {
        std::printf("%-26s max_rel_err %.3e  tol %.0e  %s\n", e.name.c_str(), e.max_rel_err,
                    e.tolerance, e.ok() ? "pass" : "FAIL");
        ok = ok && e.ok();
    }
    return ok;
}

void run_features(const ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    const ObsTermSpec* term = nullptr;
    for (const ObsTermSpec& t : cfg.cost.terms)
        if (t.kind == ObsTermKind::FeaturePair && t.weight > 0.0) {
            term = &t;
            break;
        }
    if (!term) throw ConfigError("features: the cost has no active feature-pair term");
    const std::string model_file = "model_" + cfg.tag + ".ck";
    require_input(cfg, "train", model_file);
    Checkpoint ck = load_checkpoint(join(cfg, model_file));

    Artifacts a = load_artifacts(cfg, true);
    Dataset ds = assemble(cfg, a);
    if (ds.test.empty()) throw DataError("features: no test windows");
    const TrainSample& s = ds.test.front();
    const ObsModality* y = s.obs.find(term->modality);
    if (!y) throw DataError("features: modality " + std::to_string(term->modality) + " missing");

    std::vector<FieldStack> maps = feature_maps(*y, ck.params, *term);
    FieldMap fm;
    for (std::size_t c = 0; c < maps.size(); ++c) {
        char name[32];
        std::snprintf(name, sizeof name, "feat_%02zu", c);
        fm.emplace_back(name, std::move(maps[c]));
    }
    write_fstk(join(cfg, "features.fstk"), fm);
    write_manifest(cfg, "features", {"truth.fstk", "oi.fstk", model_file}, {"features.fstk"});
    std::printf("features: wrote %zu channel maps of modality %d (window at day %d)\n", fm.size(),
                term->modality, s.start_day);
}

} // namespace varmap
