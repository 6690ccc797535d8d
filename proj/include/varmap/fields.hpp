#pragma once

#include <string>
#include <utility>
#include <vector>

#include "varmap/errors.hpp"

namespace varmap {

/// Uniform space-time grid: n_t daily frames of n_y x n_x cells.
struct GridSpec {
    int n_t = 1;
    int n_y = 4;
    int n_x = 4;
    double dx = 1.0; ///< spatial step, degrees (square cells)
    double dt = 1.0; ///< time step, days

    void validate() const;
    std::size_t frame_size() const { return std::size_t(n_y) * n_x; }
    std::size_t size() const { return std::size_t(n_t) * frame_size(); }
    bool operator==(const GridSpec& o) const {
        return n_t == o.n_t && n_y == o.n_y && n_x == o.n_x && dx == o.dx && dt == o.dt;
    }
};

/// T x H x W raster of 32-bit reals, row-major with time slowest.
/// Values are immutable by convention once a stack leaves its producer;
/// missing data lives in masks, never as NaN.
struct FieldStack {
    GridSpec grid;
    std::vector<float> data;

    FieldStack() = default;
    explicit FieldStack(const GridSpec& g, float fill = 0.0f)
        : grid(g), data(g.size(), fill) {
        g.validate();
    }

    float& at(int t, int y, int x) { return data[(std::size_t(t) * grid.n_y + y) * grid.n_x + x]; }
    float at(int t, int y, int x) const { return data[(std::size_t(t) * grid.n_y + y) * grid.n_x + x]; }

    bool all_finite() const;
    /// Throws ShapeError if data length disagrees with the grid,
    /// DataError if a non-finite value is stored.
    void validate() const;
};

/// Two-scale state x = (xbar, dx); the physical field is their sum.
struct StateSeq {
    FieldStack xbar; ///< large-scale component
    FieldStack dx;   ///< fine-scale anomaly

    void validate() const;
};

/// One observation modality: values plus a {0,1} sampling mask.
/// Canonical form keeps values zero wherever the mask is zero.
struct ObsModality {
    int id = 0;
    FieldStack values;
    FieldStack mask;

    void canonicalize();
    void validate() const;
};

struct ObsSet {
    std::vector<ObsModality> modalities;

    const ObsModality* find(int id) const;
    void validate() const;
};

/// Elementwise sum of the two state components.
FieldStack composite(const StateSeq& s);

/// Per-frame spatial derivatives: central differences in the interior,
/// one-sided at the boundary, both divided by dx. gx is d/dx (columns),
/// gy is d/dy (rows).
void spatial_gradient(const FieldStack& f, FieldStack& gx, FieldStack& gy);

/// Forward time difference (f[t+1]-f[t])/dt; the last frame repeats the
/// previous difference. Requires n_t >= 2.
FieldStack temporal_difference(const FieldStack& f);

/// Named stacks in file order; all entries share one grid.
using FieldMap = std::vector<std::pair<std::string, FieldStack>>;

/// FSTK container: one JSON header line
///   {"magic":"FSTK1","dims":[T,H,W],"dx":..,"dt":..,"byteorder":"LE","fields":[...]}
/// followed by concatenated little-endian float32 payloads in field order.
void write_fstk(const std::string& path, const FieldMap& fields);
FieldMap read_fstk(const std::string& path);

/// Convenience for single-field files.
void write_fstk(const std::string& path, const std::string& name, const FieldStack& f);
FieldStack read_fstk_one(const std::string& path, const std::string& name);

} // namespace varmap
