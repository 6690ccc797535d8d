#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "varmap/baselines.hpp"
#include "varmap/osse.hpp"
#include "varmap/solver.hpp"
#include "varmap/train.hpp"
#include "varmap/varcost.hpp"

namespace varmap {

/// Windowing of the daily record into 7-frame samples plus the split days.
struct WindowConfig {
    int length = 7;
    int stride = 5;
    SplitSpec split;

    void validate() const;
};

struct MetricsOptions {
    bool write_nsr_csv = true;
};

/// One declarative experiment. The file schema carries a single top-level
/// seed; the generator and trainer substreams are derived from it, so a
/// config plus seed pins every artifact.
struct ExperimentConfig {
    std::string tag = "varnet"; // artifact suffix: model_<tag>.ck, recon_<tag>.fstk
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    ModelKind model = ModelKind::VarNet;
    int direct_base = 16; // direct-inversion U-Net width

    SynthConfig osse;
    MaskConfig masks;
    WindowConfig window;
    CostConfig cost;
    SolverConfig solver;
    TrainConfig train;
    OIConfig oi;
    MetricsOptions metrics;

    void validate() const;
};

/// Built-in defaults: the desk-scale experiment (64x64, 60 days).
ExperimentConfig default_config();

/// Strict parse: unknown keys and type mismatches raise ConfigError with the
/// offending path. parse(serialize(c)) == c.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);
void save_config(const std::string& path, const ExperimentConfig& cfg);

/// Re-derives the section substreams from a new master seed.
void override_seed(ExperimentConfig& cfg, std::uint64_t seed);

const char* model_kind_name(ModelKind m);
ModelKind model_kind_from_name(const std::string& s);

/// FNV-1a over bytes; config hashes go over the canonical JSON dump.
std::uint64_t fnv1a(const void* data, std::size_t n);
std::string hash_hex(std::uint64_t h);
std::string hash_file(const std::string& path); // DataError if unreadable
std::string config_hash(const ExperimentConfig& cfg);

} // namespace varmap
