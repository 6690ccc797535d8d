#include "varmap/fields.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace varmap {

static_assert(std::endian::native == std::endian::little,
              "FSTK payloads are written as raw little-endian floats");

void GridSpec::validate() const {
    if (n_t < 1) throw ShapeError("GridSpec: n_t must be >= 1");
    if (n_y < 4 || n_x < 4) throw ShapeError("GridSpec: raster must be at least 4x4");
    if (!(dx > 0.0) || !(dt > 0.0)) throw ShapeError("GridSpec: dx and dt must be positive");
}

bool FieldStack::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

void FieldStack::validate() const {
    grid.validate();
    if (data.size() != grid.size()) throw ShapeError("FieldStack: data length does not match grid");
    if (!all_finite()) throw DataError("FieldStack: non-finite value stored");
}

void StateSeq::validate() const {
    xbar.validate();
    dx.validate();
    if (!(xbar.grid == dx.grid)) throw ShapeError("StateSeq: components disagree on grid");
}

void ObsModality::canonicalize() {
    for (std::size_t i = 0; i < values.data.size(); ++i)
        if (mask.data[i] == 0.0f) values.data[i] = 0.0f;
}

void ObsModality::validate() const {
    values.validate();
    mask.validate();
    if (!(values.grid == mask.grid)) throw ShapeError("ObsModality: values and mask disagree on grid");
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        float m = mask.data[i];
        if (m != 0.0f && m != 1.0f) throw DataError("ObsModality: mask entries must be 0 or 1");
        if (m == 0.0f && values.data[i] != 0.0f)
            throw DataError("ObsModality: values must be zero outside the mask");
    }
}

const ObsModality* ObsSet::find(int id) const {
    for (const auto& m : modalities)
        if (m.id == id) return &m;
    return nullptr;
}

void ObsSet::validate() const {
    std::set<int> ids;
    for (const auto& m : modalities) {
        m.validate();
        if (!ids.insert(m.id).second) throw DataError("ObsSet: duplicate modality id");
        if (!(m.values.grid == modalities.front().values.grid))
            throw ShapeError("ObsSet: modalities disagree on grid");
    }
}

FieldStack composite(const StateSeq& s) {
    if (!(s.xbar.grid == s.dx.grid)) throw ShapeError("composite: components disagree on grid");
    FieldStack out(s.xbar.grid);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = s.xbar.data[i] + s.dx.data[i];
    return out;
}

void spatial_gradient(const FieldStack& f, FieldStack& gx, FieldStack& gy) {
    const GridSpec& g = f.grid;
    if (g.n_y < 2 || g.n_x < 2) throw ShapeError("spatial_gradient: raster must be at least 2x2");
    gx = FieldStack(g);
    gy = FieldStack(g);
    const double inv_dx = 1.0 / g.dx;
    for (int t = 0; t < g.n_t; ++t) {
        for (int y = 0; y < g.n_y; ++y) {
            for (int x = 0; x < g.n_x; ++x) {
                double dfx, dfy;
                if (x == 0)
                    dfx = double(f.at(t, y, 1)) - f.at(t, y, 0);
                else if (x == g.n_x - 1)
                    dfx = double(f.at(t, y, x)) - f.at(t, y, x - 1);
                else
                    dfx = 0.5 * (double(f.at(t, y, x + 1)) - f.at(t, y, x - 1));
                if (y == 0)
                    dfy = double(f.at(t, 1, x)) - f.at(t, 0, x);
                else if (y == g.n_y - 1)
                    dfy = double(f.at(t, y, x)) - f.at(t, y - 1, x);
                else
                    dfy = 0.5 * (double(f.at(t, y + 1, x)) - f.at(t, y - 1, x));
                gx.at(t, y, x) = float(dfx * inv_dx);
                gy.at(t, y, x) = float(dfy * inv_dx);
            }
        }
    }
}

FieldStack temporal_difference(const FieldStack& f) {
    const GridSpec& g = f.grid;
    if (g.n_t < 2) throw ShapeError("temporal_difference: needs at least two frames");
    FieldStack out(g);
    const double inv_dt = 1.0 / g.dt;
    const std::size_t fs = g.frame_size();
    for (int t = 0; t + 1 < g.n_t; ++t)
        for (std::size_t i = 0; i < fs; ++i)
            out.data[t * fs + i] =
                float((double(f.data[(t + 1) * fs + i]) - f.data[t * fs + i]) * inv_dt);
    // last frame: replicate the previous difference
    std::memcpy(out.data.data() + (g.n_t - 1) * fs, out.data.data() + (g.n_t - 2) * fs,
                fs * sizeof(float));
    return out;
}

// ---------------------------------------------------------------------------
// FSTK I/O

using nlohmann::json;

void write_fstk(const std::string& path, const FieldMap& fields) {
    json hdr;
    hdr["magic"] = "FSTK1";
    hdr["byteorder"] = "LE";
    if (fields.empty()) {
        hdr["dims"] = {0, 0, 0};
        hdr["dx"] = 0.0;
        hdr["dt"] = 0.0;
    } else {
        const GridSpec& g = fields.front().second.grid;
        for (const auto& [name, f] : fields) {
            f.validate();
            if (!(f.grid == g)) throw ShapeError("write_fstk: fields disagree on grid");
        }
        hdr["dims"] = {g.n_t, g.n_y, g.n_x};
        hdr["dx"] = g.dx;
        hdr["dt"] = g.dt;
    }
    json names = json::array();
    for (const auto& [name, f] : fields) names.push_back(name);
    hdr["fields"] = names;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_fstk: cannot open " + path);
    out << hdr.dump() << '\n';
    for (const auto& [name, f] : fields)
        out.write(reinterpret_cast<const char*>(f.data.data()),
                  std::streamsize(f.data.size() * sizeof(float)));
    if (!out) throw DataError("write_fstk: write failed for " + path);
}

FieldMap read_fstk(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_fstk: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("read_fstk: missing header line");
    json hdr;
    try {
        hdr = json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(std::string("read_fstk: malformed header: ") + e.what());
    }
    if (!hdr.contains("magic") || hdr["magic"] != "FSTK1")
        throw ParseError("read_fstk: bad magic");
    if (!hdr.contains("dims") || !hdr["dims"].is_array() || hdr["dims"].size() != 3)
        throw ParseError("read_fstk: bad dims");
    if (hdr.value("byteorder", "LE") != "LE")
        throw ParseError("read_fstk: unsupported byte order");

    FieldMap out;
    auto names = hdr.at("fields");
    if (names.empty()) return out;

    GridSpec g;
    g.n_t = hdr["dims"][0].get<int>();
    g.n_y = hdr["dims"][1].get<int>();
    g.n_x = hdr["dims"][2].get<int>();
    g.dx = hdr.at("dx").get<double>();
    g.dt = hdr.at("dt").get<double>();
    g.validate();

    for (const auto& n : names) {
        FieldStack f(g);
        in.read(reinterpret_cast<char*>(f.data.data()), std::streamsize(f.data.size() * sizeof(float)));
        if (std::size_t(in.gcount()) != f.data.size() * sizeof(float))
            throw ParseError("read_fstk: truncated payload for field '" + n.get<std::string>() + "'");
        if (!f.all_finite()) throw DataError("read_fstk: non-finite value in field '" + n.get<std::string>() + "'");
        out.emplace_back(n.get<std::string>(), std::move(f));
    }
    return out;
}

void write_fstk(const std::string& path, const std::string& name, const FieldStack& f) {
    FieldMap m;
    m.emplace_back(name, f);
    write_fstk(path, m);
}

FieldStack read_fstk_one(const std::string& path, const std::string& name) {
    FieldMap m = read_fstk(path);
    for (auto& [n, f] : m)
        if (n == name) return std::move(f);
    throw DataError("read_fstk_one: field '" + name + "' not in " + path);
}

} // namespace varmap
