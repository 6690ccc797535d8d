// varmap: multimodal variational reconstruction of gridded space-time fields.
//
// Subcommands run one pipeline stage each from a declarative JSON config:
//   generate | baseline-oi | train | reconstruct | evaluate | gradcheck | features
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical divergence.

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "varmap/kernels.hpp"
#include "varmap/pipeline.hpp"

namespace {

struct GlobalOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    int threads = 0;
};

varmap::ExperimentConfig resolve_config(const GlobalOpts& g) {
    varmap::ExperimentConfig cfg =
        g.config_path.empty() ? varmap::default_config() : varmap::load_config(g.config_path);
    if (g.seed) varmap::override_seed(cfg, *g.seed);
    if (g.out_dir) cfg.out_dir = *g.out_dir;
    cfg.validate();
    if (g.threads > 0) varmap::set_threads(g.threads);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal variational inversion toolkit"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "experiment config JSON (built-in defaults if omitted)");
    app.add_option("--seed", g.seed, "override the master seed (re-derives section substreams)");
    app.add_option("--out-dir", g.out_dir, "override the artifact directory");
    app.add_option("--threads", g.threads, "cap worker threads (0 = library default)");

    const struct {
        const char* name;
        const char* help;
    } cmds[] = {
        {"generate", "synthesize truth, tracer, and sampling masks"},
        {"baseline-oi", "optimal-interpolation baseline over the full period"},
        {"train", "train the configured model end to end"},
        {"reconstruct", "reconstruct the test block with the trained model"},
        {"evaluate", "score all reconstructions against the truth"},
        {"gradcheck", "finite-difference audit of every registered operator"},
        {"features", "dump the learned feature maps of the tracer modality"},
    };
    for (const auto& c : cmds) app.add_subcommand(c.name, c.help)->fallthrough();

    CLI11_PARSE(app, argc, argv);
    const std::string cmd = app.get_subcommands().front()->get_name();

    try {
        varmap::ExperimentConfig cfg = resolve_config(g);
        if (cmd == "generate") varmap::run_generate(cfg);
        else if (cmd == "baseline-oi") varmap::run_baseline_oi(cfg);
        else if (cmd == "train") varmap::run_train(cfg);
        else if (cmd == "reconstruct") varmap::run_reconstruct(cfg);
        else if (cmd == "evaluate") varmap::run_evaluate(cfg);
        else if (cmd == "features") varmap::run_features(cfg);
        else if (cmd == "gradcheck") {
            if (!varmap::run_gradcheck(cfg)) {
                std::fprintf(stderr, "error[numerical]: gradcheck failed\n");
                return 4;
            }
        }
    } catch (const varmap::ConfigError& e) {
        std::fprintf(stderr, "error[config]: %s\n", e.what());
        return 2;
    } catch (const varmap::DivergenceError& e) {
        std::fprintf(stderr, "error[divergence]: %s (iteration %d)\n", e.what(), e.iteration);
        return 4;
    } catch (const varmap::Error& e) {
        std::fprintf(stderr, "error[data]: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
