#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "varmap/errors.hpp"

namespace varmap {

/// Tensor extents, up to rank 4 (NCHW for rank-4 data).
struct Shape {
    int d[4] = {1, 1, 1, 1};
    int rank = 0;

    static Shape scalar() { return Shape{}; }
    static Shape vec(int n) {
        Shape s;
        s.rank = 1;
        s.d[0] = n;
        return s;
    }
    static Shape nchw(int n, int c, int h, int w) {
        Shape s;
        s.rank = 4;
        s.d[0] = n;
        s.d[1] = c;
        s.d[2] = h;
        s.d[3] = w;
        return s;
    }
    std::size_t numel() const {
        std::size_t p = 1;
        for (int i = 0; i < rank; ++i) p *= std::size_t(d[i]);
        return p;
    }
    int n() const { return d[0]; }
    int c() const { return d[1]; }
    int h() const { return d[2]; }
    int w() const { return d[3]; }
    bool operator==(const Shape& o) const {
        if (rank != o.rank) return false;
        for (int i = 0; i < rank; ++i)
            if (d[i] != o.d[i]) return false;
        return true;
    }
};

/// Dense 64-bit value carrier at the engine boundary.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(const Shape& s, double fill = 0.0) : shape(s), data(s.numel(), fill) {}
    static Tensor from(const Shape& s, std::vector<double> d, bool rg = false) {
        if (d.size() != s.numel()) throw ShapeError("Tensor: data length does not match shape");
        Tensor t;
        t.shape = s;
        t.data = std::move(d);
        t.requires_grad = rg;
        return t;
    }
};

/// Named trainable slices with deterministic (sorted) iteration order.
class ParamStore {
public:
    void set(const std::string& name, Tensor t) { slices_[name] = std::move(t); }
    bool has(const std::string& name) const { return slices_.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    const std::map<std::string, Tensor>& slices() const { return slices_; }
    std::map<std::string, Tensor>& slices() { return slices_; }

    std::size_t total_params() const;
    std::vector<std::pair<std::string, std::size_t>> per_slice_counts() const;
    void merge(const ParamStore& other); // fails on duplicate names

private:
    std::map<std::string, Tensor> slices_;
};

/// Handle to a node on a Graph.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

enum class Op : uint8_t {
    Leaf,
    Add, Sub, Hadamard, Affine,
    Relu, Step, Tanh, Sigmoid, Sqrt, Recip,
    Conv2d, ConvDInput, ConvDWeight,
    BiasAdd, ChannelSum,
    AvgPool2, AvgPool2Adj, UpBilin2, UpBilin2Adj,
    ConcatC, SliceC,
    Ddx, Ddy, DdxAdj, DdyAdj,
    MaskedSqNorm, Dot, ScaleByNode,
    Reshape,
};

const char* op_name(Op op);

/// Recorded evaluation trace. Nodes are created eagerly (forward values are
/// computed at construction) in topological order. backward() runs a plain
/// reverse sweep into gradient buffers; backward_graph() instead emits the
/// vector-Jacobian products as new nodes, so the resulting gradients can be
/// differentiated again by a later plain sweep.
class Graph {
public:
    // leaves
    Var leaf(const Tensor& t);
    Var leaf(const Shape& s, const double* data, bool requires_grad);
    Var constant(const Shape& s, double fill);
    Var scalar(double v);

    // elementwise
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var hadamard(Var a, Var b);
    Var affine(Var a, double m, double c); // m*a + c
    Var scale(Var a, double s) { return affine(a, s, 0.0); }
    Var relu(Var a);
    Var step(Var a); // 1[x>0], zero derivative
    Var tanh(Var a);
    Var sigmoid(Var a);
    Var sqrt(Var a);
    Var recip(Var a);

    // conv family (same zero padding, stride 1, odd kernels)
    Var conv2d(Var x, Var k);
    Var conv2d_dinput(Var g, Var k);
    Var conv2d_dweight(Var x, Var g, int kh, int kw);
    Var bias_add(Var x, Var b);
    Var channel_sum(Var x);

    // resolution changes
    Var avgpool2(Var x);
    Var avgpool2_adj(Var g);
    Var up_bilinear2(Var x);
    Var up_bilinear2_adj(Var g);

    // channel wiring
    Var concat_channels(Var a, Var b);
    Var slice_channels(Var x, int offset, int count);
    Var reshape(Var x, const Shape& s);

    // spatial derivatives (per plane, central/one-sided, scaled by inv_d)
    Var ddx(Var x, double inv_d);
    Var ddy(Var x, double inv_d);
    Var ddx_adj(Var g, double inv_d);
    Var ddy_adj(Var g, double inv_d);

    // reductions and scalar coupling
    Var masked_sq_norm(Var r, Var mask); // sum mask .* r.^2 -> scalar
    Var dot(Var a, Var b);               // -> scalar
    Var scale_by_node(Var x, Var s);     // x * scalar node

    /// conv(u) .* conv(v) convenience composition
    Var bilinear(Var u, Var k1, Var v, Var k2) { return hadamard(conv2d(u, k1), conv2d(v, k2)); }

    // inspection
    const Shape& shape(Var v) const { return node(v).shape; }
    const std::vector<double>& value(Var v) const { return node(v).val; }
    double scalar_value(Var v) const;
    std::size_t size() const { return nodes_.size(); }
    Tensor tensor(Var v) const;

    /// Plain reverse sweep from a scalar output; fills gradient buffers for
    /// every node with requires_grad on a path to the output. Leaves without
    /// a path keep zero gradients.
    void backward(Var out);
    /// Gradient buffer of a node after backward(); zeros if untouched.
    Tensor grad_tensor(Var v) const;

    /// Reverse sweep that emits VJPs as nodes: returns one gradient node per
    /// target (zero constants for disconnected targets).
    std::vector<Var> backward_graph(Var out, const std::vector<Var>& targets);

private:
    struct Node {
        Op op = Op::Leaf;
        int a = -1, b = -1;
        Shape shape;
        double p0 = 0.0, p1 = 0.0;
        int i0 = 0, i1 = 0;
        bool rg = false;
        std::vector<double> val;
        std::vector<double> grad;
    };

    Node& node(Var v) { return nodes_.at(std::size_t(v.id)); }
    const Node& node(Var v) const { return nodes_.at(std::size_t(v.id)); }
    Var push(Node n);
    void run_forward(Node& n);
    void accumulate_plain(int id);                      // plain VJP of one node
    Var emit_vjp(int id, Var g, bool wrt_b);            // VJP as nodes
    std::vector<double>& grad_buf(int id);

    std::vector<Node> nodes_;
    std::vector<double> scratch_;
};

/// Bind every ParamStore slice as a leaf; lookups by slice name.
struct ParamBind {
    std::map<std::string, Var> vars;
    Var at(const std::string& name) const;
};
ParamBind bind_params(Graph& g, const ParamStore& store, bool requires_grad);

/// Read one gradient per bound slice after a plain backward.
std::map<std::string, Tensor> collect_param_grads(const Graph& g, const ParamBind& bind);

/// Coordinate where a finite-difference comparison was worst.
struct GradCheckDetail {
    std::size_t input = 0;       ///< index into the inputs vector
    std::size_t coord = 0;       ///< flat coordinate within that tensor
    double analytic = 0.0;
    double central = 0.0;
};

/// Max over coordinates of |analytic - central difference| /
/// max(1e-12, |central difference|) for a scalar-valued builder. Meaningful
/// only on well-scaled instances: terms of comparable magnitude, relu
/// arguments bounded away from kinks, gradients bounded away from zero.
double grad_check(const std::function<Var(Graph&, const std::vector<Var>&)>& fn,
                  const std::vector<Tensor>& inputs, double eps,
                  GradCheckDetail* detail = nullptr);

} // namespace varmap
