#include "varmap/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "varmap/bridge.hpp"
#include "varmap/metrics.hpp"
#include "varmap/rng.hpp"

namespace varmap {

using nlohmann::json;

void LossWeights::validate() const {
    if (w_x < 0.0 || w_grad < 0.0 || w_phi < 0.0)
        throw ConfigError("train: loss weights must be >= 0");
    if (w_x == 0.0 && w_grad == 0.0 && w_phi == 0.0)
        throw ConfigError("train: at least one loss weight must be positive");
}

void TrainConfig::validate() const {
    weights.validate();
    if (lr <= 0.0) throw ConfigError("train: lr must be > 0");
    if (lr_decay <= 0.0 || lr_decay > 1.0) throw ConfigError("train: lr_decay must be in (0,1]");
    if (lr_period < 1) throw ConfigError("train: lr_period must be >= 1");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (unroll.empty() || unroll.front().epoch != 0)
        throw ConfigError("train: unroll schedule must start at epoch 0");
    for (std::size_t i = 0; i < unroll.size(); ++i) {
        if (unroll[i].iters < 1) throw ConfigError("train: unroll depth must be >= 1");
        if (i > 0 && (unroll[i].epoch <= unroll[i - 1].epoch || unroll[i].iters < unroll[i - 1].iters))
            throw ConfigError("train: unroll schedule must be increasing in epoch and non-decreasing in depth");
    }
}

double TrainConfig::lr_at(int epoch) const {
    return lr * std::pow(lr_decay, double(epoch / lr_period));
}

int TrainConfig::unroll_at(int epoch) const {
    int k = unroll.front().iters;
    for (const UnrollStage& s : unroll)
        if (s.epoch <= epoch) k = s.iters;
    return k;
}

// ---------------------------------------------------------------------------
// Loss

Var loss_node(Graph& g, const ParamBind& params, const PhiConfig& phi, const StateVars& xhat,
              Var truth, const LossWeights& w, double inv_dx) {
    w.validate();
    const Shape s = g.shape(truth);
    Var comp = state_composite(g, xhat);
    if (!(g.shape(comp) == s)) throw ShapeError("loss_node: truth and state shapes differ");
    Var ones = g.constant(s, 1.0);
    Var total{};
    auto push = [&](Var term, double weight) {
        Var scaled = g.affine(term, weight, 0.0);
        total = total.valid() ? g.add(total, scaled) : scaled;
    };
    if (w.w_x > 0.0) push(g.masked_sq_norm(g.sub(truth, comp), ones), w.w_x);
    if (w.w_grad > 0.0) {
        Var diff = g.sub(truth, comp);
        Var gx = g.masked_sq_norm(g.ddx(diff, inv_dx), ones);
        Var gy = g.masked_sq_norm(g.ddy(diff, inv_dx), ones);
        push(g.add(gx, gy), w.w_grad);
    }
    if (w.w_phi > 0.0) {
        StateVars truth_state{truth, g.constant(s, 0.0)};
        push(g.add(phi_residual_node(g, params, phi, truth_state),
                   phi_residual_node(g, params, phi, xhat)),
             w.w_phi);
    }
    return total;
}

double loss_total(const StateSeq& xhat, const FieldStack& x_true, const ParamStore& P,
                  const PhiConfig& phi, const LossWeights& w) {
    xhat.validate();
    if (!(xhat.xbar.grid == x_true.grid)) throw ShapeError("loss_total: grids differ");
    Graph g;
    ParamBind pb = bind_params(g, P, false);
    StateVars sv = bind_state(g, xhat, false);
    Var truth = leaf_stack(g, x_true, false);
    Var L = loss_node(g, pb, phi, sv, truth, w, 1.0 / x_true.grid.dx);
    return g.scalar_value(L);
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(ParamStore& P, const std::map<std::string, Tensor>& grads, AdamState& st, double lr,
               double beta1, double beta2, double eps) {
    ++st.step;
    const double bc1 = 1.0 - std::pow(beta1, double(st.step));
    const double bc2 = 1.0 - std::pow(beta2, double(st.step));
    for (auto& [name, t] : P.slices()) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const std::vector<double>& gd = it->second.data;
        if (gd.size() != t.data.size())
            throw ShapeError("adam_step: gradient size mismatch for slice '" + name + "'");
        std::vector<double>& m = st.m[name];
        std::vector<double>& v = st.v[name];
        if (m.empty()) m.assign(gd.size(), 0.0);
        if (v.empty()) v.assign(gd.size(), 0.0);
        for (std::size_t i = 0; i < gd.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * gd[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * gd[i] * gd[i];
            t.data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Initialization and forward passes

StateSeq init_state(const ObsSet& obs, const GridSpec& grid) {
    StateSeq s;
    s.dx = FieldStack(grid);
    if (const ObsModality* m = obs.find(2)) {
        if (!(m->values.grid == grid)) throw ShapeError("init_state: modality 2 grid differs");
        s.xbar = m->values;
    } else {
        std::cerr << "[warn] init_state: no gap-free modality 2; starting from a zero state\n";
        s.xbar = FieldStack(grid);
    }
    return s;
}

namespace {

struct SampleTape {
    double loss = 0.0;
    std::map<std::string, Tensor> grads;
};

SampleTape run_sample(const TrainSample& s, ModelKind kind, const LossWeights& w,
                      const CostConfig& cc, const SolverConfig& sc, int direct_base, int k_iters,
                      const ParamStore& P, bool want_grads) {
    const GridSpec grid = s.x_true.grid;
    Graph g;
    ParamBind pb = bind_params(g, P, want_grads);
    BoundObs ob = bind_obs_set(g, s.obs);
    StateVars xhat{};
    if (kind == ModelKind::VarNet) {
        StateVars x0 = bind_state(g, s.x0, false);
        SolverConfig sck = sc;
        sck.n_iters = k_iters;
        xhat = solve_unrolled(g, x0, ob, pb, cc, sck, grid, false).x;
    } else {
        Var out = unet_apply(g, pb, direct_unet_spec(grid.n_t, direct_base),
                             direct_input_node(g, ob, grid.n_t));
        const Shape tchw = Shape::nchw(grid.n_t, 1, grid.n_y, grid.n_x);
        xhat = StateVars{g.reshape(out, tchw), g.constant(tchw, 0.0)};
    }
    Var truth = leaf_stack(g, s.x_true, false);
    Var L = loss_node(g, pb, cc.prior, xhat, truth, w, 1.0 / grid.dx);

    SampleTape tape;
    tape.loss = g.scalar_value(L);
    if (!std::isfinite(tape.loss)) throw DivergenceError("train: non-finite loss", k_iters);
    if (want_grads) {
        g.backward(L);
        tape.grads = collect_param_grads(g, pb);
    }
    return tape;
}

} // namespace

StateSeq model_predict(const TrainSample& s, ModelKind kind, const CostConfig& cc,
                       const SolverConfig& sc, int direct_base, const ParamStore& P) {
    if (kind == ModelKind::VarNet) return solve(s.x0, s.obs, P, cc, sc).xhat;
    StateSeq out;
    out.xbar = direct_inversion(P, s.obs, direct_base);
    out.dx = FieldStack(out.xbar.grid);
    return out;
}

// ---------------------------------------------------------------------------
// The loop

TrainResult train_loop(const Dataset& ds, ModelKind kind, const TrainConfig& tc,
                       const CostConfig& cc, const SolverConfig& sc, int direct_base,
                       const ParamStore& init) {
    tc.validate();
    sc.validate();
    LossWeights w = tc.weights;
    if (kind == ModelKind::Direct) w.w_phi = 0.0; // no prior operator to regularize against
    w.validate();

    TrainResult res;
    res.params = init;
    ParamStore cur = init;
    AdamState opt;
    double best_score = std::numeric_limits<double>::infinity();

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const double lr = tc.lr_at(epoch);
        const int K = tc.unroll_at(epoch);

        std::vector<std::size_t> order(ds.train.size());
        std::iota(order.begin(), order.end(), std::size_t(0));
        Rng shuffle_rng(Rng::substream(tc.seed, 0x7e0000u + std::uint64_t(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[std::size_t(shuffle_rng.uniform() * double(i))]);

        double train_loss = 0.0;
        std::size_t n_done = 0;
        bool diverged = false;
        for (std::size_t b0 = 0; b0 < order.size() && !diverged; b0 += std::size_t(tc.batch)) {
            const std::size_t b1 = std::min(order.size(), b0 + std::size_t(tc.batch));
            const int nb = int(b1 - b0);
            const std::size_t nbz = b1 - b0;
            std::vector<SampleTape> tapes(nbz);
            std::vector<std::exception_ptr> errs(nbz);
            bool blew_up = false;
#pragma omp parallel for schedule(dynamic)
            for (int i = 0; i < nb; ++i) {
                try {
                    tapes[std::size_t(i)] = run_sample(ds.train[order[b0 + std::size_t(i)]], kind,
                                                       w, cc, sc, direct_base, K, cur, true);
                } catch (const DivergenceError&) {
#pragma omp atomic write
                    blew_up = true;
                } catch (...) {
                    errs[std::size_t(i)] = std::current_exception();
                }
            }
            for (const std::exception_ptr& e : errs)
                if (e) std::rethrow_exception(e);
            if (blew_up) {
                diverged = true;
                break;
            }

            std::map<std::string, Tensor> acc;
            for (int i = 0; i < nb; ++i) { // fixed sample order keeps the sum deterministic
                train_loss += tapes[std::size_t(i)].loss;
                for (const auto& [name, gt] : tapes[std::size_t(i)].grads) {
                    auto [it, fresh] = acc.emplace(name, gt);
                    if (!fresh)
                        for (std::size_t j = 0; j < gt.data.size(); ++j)
                            it->second.data[j] += gt.data[j];
                }
            }
            for (auto& [name, gt] : acc)
                for (double& v : gt.data) v /= double(nb);
            adam_step(cur, acc, opt, lr);
            n_done += std::size_t(nb);
        }
        if (diverged) {
            std::cerr << "[warn] train: non-finite loss at epoch " << epoch
                      << "; keeping the last good checkpoint\n";
            res.diverged = true;
            break;
        }
        train_loss = n_done ? train_loss / double(n_done) : 0.0;

        double val_loss = std::numeric_limits<double>::quiet_NaN();
        double val_mu = std::numeric_limits<double>::quiet_NaN();
        bool val_bad = false;
        if (!ds.val.empty()) {
            double lsum = 0.0, msum = 0.0;
            try {
                SolverConfig sck = sc;
                sck.n_iters = K;
                for (const TrainSample& s : ds.val) {
                    StateSeq xhat = model_predict(s, kind, cc, sck, direct_base, cur);
                    lsum += loss_total(xhat, s.x_true, cur, cc.prior, w);
                    msum += mu_sigma(composite(xhat), s.x_true).mu;
                }
                val_loss = lsum / double(ds.val.size());
                val_mu = msum / double(ds.val.size());
                if (!std::isfinite(val_loss)) val_bad = true;
            } catch (const DivergenceError&) {
                val_bad = true;
            }
        }
        if (val_bad) {
            std::cerr << "[warn] train: non-finite validation loss at epoch " << epoch
                      << "; keeping the last good checkpoint\n";
            res.diverged = true;
            break;
        }

        res.history.push_back(EpochStats{epoch, lr, K, train_loss, val_loss, val_mu});
        const double score = ds.val.empty() ? train_loss : val_loss;
        if (score < best_score) {
            best_score = score;
            res.params = cur;
            res.opt = opt;
            res.best_epoch = epoch;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints and history

void save_checkpoint(const std::string& path, const ParamStore& P, const AdamState& opt) {
    const bool with_opt = opt.step > 0 || !opt.m.empty();
    json hdr;
    hdr["magic"] = "VMCK1";
    hdr["byteorder"] = "LE";
    json slices = json::array();
    for (const auto& [name, t] : P.slices()) {
        json s;
        s["name"] = name;
        json dims = json::array();
        for (int i = 0; i < t.shape.rank; ++i) dims.push_back(t.shape.d[i]);
        s["shape"] = dims;
        slices.push_back(s);
    }
    hdr["slices"] = slices;
    hdr["adam"] = {{"present", with_opt}, {"step", opt.step}};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_checkpoint: cannot open " + path);
    out << hdr.dump() << '\n';
    auto put = [&](const std::vector<double>& v) {
        out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(double)));
    };
    for (const auto& [name, t] : P.slices()) put(t.data);
    if (with_opt) {
        for (const auto& [name, t] : P.slices()) {
            auto im = opt.m.find(name);
            auto iv = opt.v.find(name);
            std::vector<double> zeros;
            if (im == opt.m.end() || iv == opt.v.end()) zeros.assign(t.data.size(), 0.0);
            put(im != opt.m.end() ? im->second : zeros);
            put(iv != opt.v.end() ? iv->second : zeros);
        }
    }
    if (!out) throw DataError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("load_checkpoint: missing header line");
    json hdr;
    try {
        hdr = json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(std::string("load_checkpoint: malformed header: ") + e.what());
    }
    if (!hdr.contains("magic") || hdr["magic"] != "VMCK1")
        throw ParseError("load_checkpoint: bad magic");
    if (hdr.value("byteorder", "LE") != "LE")
        throw ParseError("load_checkpoint: unsupported byte order");

    Checkpoint ck;
    auto get = [&](std::vector<double>& v, std::size_t n, const std::string& what) {
        v.resize(n);
        in.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(double)));
        if (std::size_t(in.gcount()) != n * sizeof(double))
            throw ParseError("load_checkpoint: truncated payload for " + what);
    };
    for (const auto& s : hdr.at("slices")) {
        const std::string name = s.at("name").get<std::string>();
        const auto& dims = s.at("shape");
        Shape shape;
        shape.rank = int(dims.size());
        if (shape.rank > 4) throw ParseError("load_checkpoint: slice rank > 4");
        for (int i = 0; i < shape.rank; ++i) shape.d[i] = dims[std::size_t(i)].get<int>();
        std::vector<double> data;
        get(data, shape.numel(), "slice '" + name + "'");
        ck.params.set(name, Tensor::from(shape, std::move(data)));
    }
    const auto& adam = hdr.at("adam");
    if (adam.at("present").get<bool>()) {
        ck.opt.step = adam.at("step").get<std::int64_t>();
        for (const auto& [name, t] : ck.params.slices()) {
            get(ck.opt.m[name], t.data.size(), "adam m of '" + name + "'");
            get(ck.opt.v[name], t.data.size(), "adam v of '" + name + "'");
        }
    }
    return ck;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
    std::ofstream out(path);
    if (!out) throw DataError("write_history_csv: cannot open " + path);
    out << "epoch,lr,unroll,train_loss,val_loss,val_mu\n";
    out << std::setprecision(17);
    for (const EpochStats& e : history)
        out << e.epoch << ',' << e.lr << ',' << e.unroll << ',' << e.train_loss << ','
            << e.val_loss << ',' << e.val_mu << '\n';
    if (!out) throw DataError("write_history_csv: write failed for " + path);
}

} // namespace varmap
