#include "varmap/gradcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "varmap/kernels.hpp"

namespace varmap {

namespace {

std::string shape_str(const Shape& s) {
    if (s.rank == 0) return "[]";
    std::string r = "[";
    for (int i = 0; i < s.rank; ++i) r += std::to_string(s.d[i]) + (i + 1 < s.rank ? "," : "");
    return r + "]";
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

} // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Hadamard: return "hadamard";
        case Op::Affine: return "affine";
        case Op::Relu: return "relu";
        case Op::Step: return "step";
        case Op::Tanh: return "tanh";
        case Op::Sigmoid: return "sigmoid";
        case Op::Sqrt: return "sqrt";
        case Op::Recip: return "recip";
        case Op::Conv2d: return "conv2d";
        case Op::ConvDInput: return "conv2d_dinput";
        case Op::ConvDWeight: return "conv2d_dweight";
        case Op::BiasAdd: return "bias_add";
        case Op::ChannelSum: return "channel_sum";
        case Op::AvgPool2: return "avgpool2";
        case Op::AvgPool2Adj: return "avgpool2_adj";
        case Op::UpBilin2: return "up_bilinear2";
        case Op::UpBilin2Adj: return "up_bilinear2_adj";
        case Op::ConcatC: return "concat_channels";
        case Op::SliceC: return "slice_channels";
        case Op::Ddx: return "ddx";
        case Op::Ddy: return "ddy";
        case Op::DdxAdj: return "ddx_adj";
        case Op::DdyAdj: return "ddy_adj";
        case Op::MaskedSqNorm: return "masked_sq_norm";
        case Op::Dot: return "dot";
        case Op::ScaleByNode: return "scale_by_node";
        case Op::Reshape: return "reshape";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// ParamStore

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = slices_.find(name);
    if (it == slices_.end()) throw Error("ParamStore: unknown slice '" + name + "'");
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = slices_.find(name);
    if (it == slices_.end()) throw Error("ParamStore: unknown slice '" + name + "'");
    return it->second;
}

std::size_t ParamStore::total_params() const {
    std::size_t n = 0;
    for (const auto& [k, t] : slices_) n += t.data.size();
    return n;
}

std::vector<std::pair<std::string, std::size_t>> ParamStore::per_slice_counts() const {
    std::vector<std::pair<std::string, std::size_t>> out;
    out.reserve(slices_.size());
    for (const auto& [k, t] : slices_) out.emplace_back(k, t.data.size());
    return out;
}

void ParamStore::merge(const ParamStore& other) {
    for (const auto& [k, t] : other.slices_) {
        if (slices_.count(k)) throw Error("ParamStore: duplicate slice '" + k + "' in merge");
        slices_[k] = t;
    }
}

// ---------------------------------------------------------------------------
// Graph: construction and forward evaluation

Var Graph::push(Node n) {
    run_forward(n);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

Var Graph::leaf(const Tensor& t) {
    Node n;
    n.op = Op::Leaf;
    n.shape = t.shape;
    n.rg = t.requires_grad;
    n.val = t.data;
    if (n.val.size() != t.shape.numel()) throw ShapeError("leaf: data length does not match shape");
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

Var Graph::leaf(const Shape& s, const double* data, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.shape = s;
    n.rg = requires_grad;
    n.val.assign(data, data + s.numel());
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

Var Graph::constant(const Shape& s, double fill) {
    Node n;
    n.op = Op::Leaf;
    n.shape = s;
    n.rg = false;
    n.val.assign(s.numel(), fill);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

Var Graph::scalar(double v) { return constant(Shape::scalar(), v); }

namespace {
Shape conv_out_shape(const Shape& x, const Shape& k, const char* who) {
    require(x.rank == 4 && k.rank == 4, std::string(who) + ": rank-4 operands required");
    require(k.c() == x.c(), std::string(who) + ": kernel input channels " + std::to_string(k.c()) +
                                " do not match tensor channels " + std::to_string(x.c()));
    require(k.h() % 2 == 1 && k.w() % 2 == 1, std::string(who) + ": kernel extents must be odd");
    return Shape::nchw(x.n(), k.n(), x.h(), x.w());
}
} // namespace

Var Graph::add(Var a, Var b) {
    require(shape(a) == shape(b), "add: shape mismatch " + shape_str(shape(a)) + " vs " + shape_str(shape(b)));
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.shape = shape(a);
    return push(std::move(n));
}

Var Graph::sub(Var a, Var b) {
    require(shape(a) == shape(b), "sub: shape mismatch " + shape_str(shape(a)) + " vs " + shape_str(shape(b)));
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.shape = shape(a);
    return push(std::move(n));
}

Var Graph::hadamard(Var a, Var b) {
    require(shape(a) == shape(b), "hadamard: shape mismatch " + shape_str(shape(a)) + " vs " + shape_str(shape(b)));
    Node n;
    n.op = Op::Hadamard;
    n.a = a.id;
    n.b = b.id;
    n.shape = shape(a);
    return push(std::move(n));
}

Var Graph::affine(Var a, double m, double c) {
    Node n;
    n.op = Op::Affine;
    n.a = a.id;
    n.shape = shape(a);
    n.p0 = m;
    n.p1 = c;
    return push(std::move(n));
}

#define VARMAP_UNARY_BUILDER(fname, opv)   \
    Var Graph::fname(Var a) {              \
        Node n;                            \
        n.op = opv;                        \
        n.a = a.id;                        \
        n.shape = shape(a);                \
        return push(std::move(n));         \
    }

VARMAP_UNARY_BUILDER(relu, Op::Relu)
VARMAP_UNARY_BUILDER(step, Op::Step)
VARMAP_UNARY_BUILDER(tanh, Op::Tanh)
VARMAP_UNARY_BUILDER(sigmoid, Op::Sigmoid)
VARMAP_UNARY_BUILDER(sqrt, Op::Sqrt)
VARMAP_UNARY_BUILDER(recip, Op::Recip)
#undef VARMAP_UNARY_BUILDER

Var Graph::conv2d(Var x, Var k) {
    Node n;
    n.op = Op::Conv2d;
    n.a = x.id;
    n.b = k.id;
    n.shape = conv_out_shape(shape(x), shape(k), "conv2d");
    return push(std::move(n));
}

Var Graph::conv2d_dinput(Var g, Var k) {
    const Shape &gs = shape(g), &ks = shape(k);
    require(gs.rank == 4 && ks.rank == 4, "conv2d_dinput: rank-4 operands required");
    require(gs.c() == ks.n(), "conv2d_dinput: cotangent channels must match kernel output channels");
    require(ks.h() % 2 == 1 && ks.w() % 2 == 1, "conv2d_dinput: kernel extents must be odd");
    Node n;
    n.op = Op::ConvDInput;
    n.a = g.id;
    n.b = k.id;
    n.shape = Shape::nchw(gs.n(), ks.c(), gs.h(), gs.w());
    return push(std::move(n));
}

Var Graph::conv2d_dweight(Var x, Var g, int kh, int kw) {
    const Shape &xs = shape(x), &gs = shape(g);
    require(xs.rank == 4 && gs.rank == 4, "conv2d_dweight: rank-4 operands required");
    require(xs.n() == gs.n() && xs.h() == gs.h() && xs.w() == gs.w(),
            "conv2d_dweight: tensor and cotangent extents must match");
    require(kh % 2 == 1 && kw % 2 == 1 && kh > 0 && kw > 0, "conv2d_dweight: kernel extents must be odd");
    Node n;
    n.op = Op::ConvDWeight;
    n.a = x.id;
    n.b = g.id;
    n.i0 = kh;
    n.i1 = kw;
    n.shape = Shape::nchw(gs.c(), xs.c(), kh, kw);
    return push(std::move(n));
}

Var Graph::bias_add(Var x, Var b) {
    const Shape &xs = shape(x), &bs = shape(b);
    require(xs.rank == 4, "bias_add: rank-4 tensor required");
    require(bs.rank == 1 && bs.d[0] == xs.c(), "bias_add: bias length must equal channel count");
    Node n;
    n.op = Op::BiasAdd;
    n.a = x.id;
    n.b = b.id;
    n.shape = xs;
    return push(std::move(n));
}

Var Graph::channel_sum(Var x) {
    require(shape(x).rank == 4, "channel_sum: rank-4 tensor required");
    Node n;
    n.op = Op::ChannelSum;
    n.a = x.id;
    n.shape = Shape::vec(shape(x).c());
    return push(std::move(n));
}

Var Graph::avgpool2(Var x) {
    const Shape& s = shape(x);
    require(s.rank == 4 && s.h() % 2 == 0 && s.w() % 2 == 0, "avgpool2: rank-4 tensor with even extents required");
    Node n;
    n.op = Op::AvgPool2;
    n.a = x.id;
    n.shape = Shape::nchw(s.n(), s.c(), s.h() / 2, s.w() / 2);
    return push(std::move(n));
}

Var Graph::avgpool2_adj(Var g) {
    const Shape& s = shape(g);
    require(s.rank == 4, "avgpool2_adj: rank-4 tensor required");
    Node n;
    n.op = Op::AvgPool2Adj;
    n.a = g.id;
    n.shape = Shape::nchw(s.n(), s.c(), 2 * s.h(), 2 * s.w());
    return push(std::move(n));
}

Var Graph::up_bilinear2(Var x) {
    const Shape& s = shape(x);
    require(s.rank == 4, "up_bilinear2: rank-4 tensor required");
    Node n;
    n.op = Op::UpBilin2;
    n.a = x.id;
    n.shape = Shape::nchw(s.n(), s.c(), 2 * s.h(), 2 * s.w());
    return push(std::move(n));
}

Var Graph::up_bilinear2_adj(Var g) {
    const Shape& s = shape(g);
    require(s.rank == 4 && s.h() % 2 == 0 && s.w() % 2 == 0,
            "up_bilinear2_adj: rank-4 tensor with even extents required");
    Node n;
    n.op = Op::UpBilin2Adj;
    n.a = g.id;
    n.shape = Shape::nchw(s.n(), s.c(), s.h() / 2, s.w() / 2);
    return push(std::move(n));
}

Var Graph::concat_channels(Var a, Var b) {
    const Shape &sa = shape(a), &sb = shape(b);
    require(sa.rank == 4 && sb.rank == 4, "concat_channels: rank-4 tensors required");
    require(sa.n() == sb.n() && sa.h() == sb.h() && sa.w() == sb.w(),
            "concat_channels: batch and spatial extents must match");
    Node n;
    n.op = Op::ConcatC;
    n.a = a.id;
    n.b = b.id;
    n.i0 = sa.c();
    n.shape = Shape::nchw(sa.n(), sa.c() + sb.c(), sa.h(), sa.w());
    return push(std::move(n));
}

Var Graph::slice_channels(Var x, int offset, int count) {
    const Shape& s = shape(x);
    require(s.rank == 4, "slice_channels: rank-4 tensor required");
    require(offset >= 0 && count >= 1 && offset + count <= s.c(),
            "slice_channels: channel range [" + std::to_string(offset) + "," +
                std::to_string(offset + count) + ") out of bounds for C=" + std::to_string(s.c()));
    Node n;
    n.op = Op::SliceC;
    n.a = x.id;
    n.i0 = offset;
    n.i1 = count;
    n.shape = Shape::nchw(s.n(), count, s.h(), s.w());
    return push(std::move(n));
}

Var Graph::reshape(Var x, const Shape& s) {
    require(s.numel() == shape(x).numel(),
            "reshape: element count mismatch " + shape_str(shape(x)) + " -> " + shape_str(s));
    Node n;
    n.op = Op::Reshape;
    n.a = x.id;
    n.shape = s;
    return push(std::move(n));
}

namespace {
void require_deriv_shape(const Shape& s, const char* who) {
    require(s.rank == 4 && s.h() >= 2 && s.w() >= 2,
            std::string(who) + ": rank-4 tensor with extents >= 2 required");
}
} // namespace

#define VARMAP_DERIV_BUILDER(fname, opv)                 \
    Var Graph::fname(Var a, double inv_d) {              \
        require_deriv_shape(shape(a), #fname);           \
        Node n;                                          \
        n.op = opv;                                      \
        n.a = a.id;                                      \
        n.shape = shape(a);                              \
        n.p0 = inv_d;                                    \
        return push(std::move(n));                       \
    }

VARMAP_DERIV_BUILDER(ddx, Op::Ddx)
VARMAP_DERIV_BUILDER(ddy, Op::Ddy)
VARMAP_DERIV_BUILDER(ddx_adj, Op::DdxAdj)
VARMAP_DERIV_BUILDER(ddy_adj, Op::DdyAdj)
#undef VARMAP_DERIV_BUILDER

Var Graph::masked_sq_norm(Var r, Var mask) {
    require(shape(r) == shape(mask),
            "masked_sq_norm: shape mismatch " + shape_str(shape(r)) + " vs " + shape_str(shape(mask)));
    Node n;
    n.op = Op::MaskedSqNorm;
    n.a = r.id;
    n.b = mask.id;
    n.shape = Shape::scalar();
    return push(std::move(n));
}

Var Graph::dot(Var a, Var b) {
    require(shape(a) == shape(b), "dot: shape mismatch " + shape_str(shape(a)) + " vs " + shape_str(shape(b)));
    Node n;
    n.op = Op::Dot;
    n.a = a.id;
    n.b = b.id;
    n.shape = Shape::scalar();
    return push(std::move(n));
}

Var Graph::scale_by_node(Var x, Var s) {
    require(shape(s).numel() == 1, "scale_by_node: scale operand must be a scalar node");
    Node n;
    n.op = Op::ScaleByNode;
    n.a = x.id;
    n.b = s.id;
    n.shape = shape(x);
    return push(std::move(n));
}

double Graph::scalar_value(Var v) const {
    if (node(v).shape.numel() != 1) throw ShapeError("scalar_value: node is not scalar");
    return node(v).val[0];
}

Tensor Graph::tensor(Var v) const {
    Tensor t;
    t.shape = node(v).shape;
    t.data = node(v).val;
    return t;
}

void Graph::run_forward(Node& n) {
    const Node* na = n.a >= 0 ? &nodes_[std::size_t(n.a)] : nullptr;
    const Node* nb = n.b >= 0 ? &nodes_[std::size_t(n.b)] : nullptr;
    n.rg = (na && na->rg) || (nb && nb->rg);
    n.val.assign(n.shape.numel(), 0.0);
    const std::size_t cnt = n.val.size();
    const double* A = na ? na->val.data() : nullptr;
    const double* B = nb ? nb->val.data() : nullptr;
    double* Y = n.val.data();
    switch (n.op) {
        case Op::Leaf: break;
        case Op::Add: kern::add(A, B, Y, cnt); break;
        case Op::Sub: kern::sub(A, B, Y, cnt); break;
        case Op::Hadamard: kern::hadamard(A, B, Y, cnt); break;
        case Op::Affine: kern::affine(A, n.p0, n.p1, Y, cnt); break;
        case Op::Relu: kern::relu(A, Y, cnt); break;
        case Op::Step: kern::relu_step(A, Y, cnt); break;
        case Op::Tanh: kern::tanh_(A, Y, cnt); break;
        case Op::Sigmoid: kern::sigmoid(A, Y, cnt); break;
        case Op::Sqrt: kern::sqrt_(A, Y, cnt); break;
        case Op::Recip: kern::recip(A, Y, cnt); break;
        case Op::Conv2d: {
            const Shape &x = na->shape, &k = nb->shape;
            kern::conv2d_fwd(A, B, Y, x.n(), x.c(), x.h(), x.w(), k.n(), k.h(), k.w());
            break;
        }
        case Op::ConvDInput: {
            const Shape &g = na->shape, &k = nb->shape;
            kern::conv2d_dinput(A, B, Y, g.n(), k.c(), g.h(), g.w(), k.n(), k.h(), k.w());
            break;
        }
        case Op::ConvDWeight: {
            const Shape &x = na->shape, &g = nb->shape;
            kern::conv2d_dweight(A, B, Y, x.n(), x.c(), x.h(), x.w(), g.c(), n.i0, n.i1);
            break;
        }
        case Op::BiasAdd: {
            const Shape& x = na->shape;
            kern::bias_add(A, B, Y, x.n(), x.c(), std::size_t(x.h()) * x.w());
            break;
        }
        case Op::ChannelSum: {
            const Shape& x = na->shape;
            kern::channel_sum(A, Y, x.n(), x.c(), std::size_t(x.h()) * x.w());
            break;
        }
        case Op::AvgPool2: {
            const Shape& x = na->shape;
            kern::avgpool2(A, Y, x.n(), x.c(), x.h(), x.w());
            break;
        }
        case Op::AvgPool2Adj: {
            kern::avgpool2_adj(A, Y, n.shape.n(), n.shape.c(), n.shape.h(), n.shape.w());
            break;
        }
        case Op::UpBilin2: {
            const Shape& x = na->shape;
            kern::up_bilinear2(A, Y, x.n(), x.c(), x.h(), x.w());
            break;
        }
        case Op::UpBilin2Adj: {
            kern::up_bilinear2_adj(A, Y, n.shape.n(), n.shape.c(), n.shape.h(), n.shape.w());
            break;
        }
        case Op::ConcatC: {
            const Shape &sa = na->shape, &sb = nb->shape;
            const std::size_t plane = std::size_t(sa.h()) * sa.w();
            const std::size_t ca = std::size_t(sa.c()) * plane, cb = std::size_t(sb.c()) * plane;
            for (int i = 0; i < sa.n(); ++i) {
                std::memcpy(Y + std::size_t(i) * (ca + cb), A + std::size_t(i) * ca, ca * sizeof(double));
                std::memcpy(Y + std::size_t(i) * (ca + cb) + ca, B + std::size_t(i) * cb, cb * sizeof(double));
            }
            break;
        }
        case Op::SliceC: {
            const Shape& s = na->shape;
            const std::size_t plane = std::size_t(s.h()) * s.w();
            const std::size_t in_batch = std::size_t(s.c()) * plane;
            const std::size_t out_batch = std::size_t(n.i1) * plane;
            for (int i = 0; i < s.n(); ++i)
                std::memcpy(Y + std::size_t(i) * out_batch,
                            A + std::size_t(i) * in_batch + std::size_t(n.i0) * plane,
                            out_batch * sizeof(double));
            break;
        }
        case Op::Ddx: kern::ddx(A, Y, na->shape.n(), na->shape.c(), na->shape.h(), na->shape.w(), n.p0); break;
        case Op::Ddy: kern::ddy(A, Y, na->shape.n(), na->shape.c(), na->shape.h(), na->shape.w(), n.p0); break;
        case Op::DdxAdj: kern::ddx_adj(A, Y, na->shape.n(), na->shape.c(), na->shape.h(), na->shape.w(), n.p0); break;
        case Op::DdyAdj: kern::ddy_adj(A, Y, na->shape.n(), na->shape.c(), na->shape.h(), na->shape.w(), n.p0); break;
        case Op::MaskedSqNorm: Y[0] = kern::masked_sq_norm(A, B, na->val.size()); break;
        case Op::Dot: Y[0] = kern::dot(A, B, na->val.size()); break;
        case Op::ScaleByNode: kern::affine(A, B[0], 0.0, Y, cnt); break;
        case Op::Reshape: std::memcpy(Y, A, cnt * sizeof(double)); break;
    }
}

// ---------------------------------------------------------------------------
// Plain reverse sweep

std::vector<double>& Graph::grad_buf(int id) {
    Node& n = nodes_[std::size_t(id)];
    if (n.grad.empty()) n.grad.assign(n.shape.numel(), 0.0);
    return n.grad;
}

void Graph::backward(Var out) {
    if (!out.valid() || std::size_t(out.id) >= nodes_.size())
        throw Error("backward: invalid output node");
    if (node(out).shape.numel() != 1) throw ShapeError("backward: output node must be scalar");
    grad_buf(out.id)[0] += 1.0;
    for (int i = out.id; i >= 0; --i) {
        Node& n = nodes_[std::size_t(i)];
        if (!n.rg || n.grad.empty()) continue;
        accumulate_plain(i);
    }
}

Tensor Graph::grad_tensor(Var v) const {
    const Node& n = node(v);
    Tensor t;
    t.shape = n.shape;
    if (n.grad.empty())
        t.data.assign(n.shape.numel(), 0.0);
    else
        t.data = n.grad;
    return t;
}

void Graph::accumulate_plain(int id) {
    Node& n = nodes_[std::size_t(id)];
    const double* G = n.grad.data();
    const std::size_t cnt = n.val.size();
    Node* na = n.a >= 0 ? &nodes_[std::size_t(n.a)] : nullptr;
    Node* nb = n.b >= 0 ? &nodes_[std::size_t(n.b)] : nullptr;
    const bool wa = na && na->rg;
    const bool wb = nb && nb->rg;
    if (!wa && !wb) return;
    double* GA = wa ? grad_buf(n.a).data() : nullptr;
    double* GB = wb ? grad_buf(n.b).data() : nullptr;

    auto scratch = [&](std::size_t m) -> double* {
        if (scratch_.size() < m) scratch_.resize(m);
        return scratch_.data();
    };

    switch (n.op) {
        case Op::Leaf: break;
        case Op::Add:
            if (wa) kern::axpy(1.0, G, GA, cnt);
            if (wb) kern::axpy(1.0, G, GB, cnt);
            break;
        case Op::Sub:
            if (wa) kern::axpy(1.0, G, GA, cnt);
            if (wb) kern::axpy(-1.0, G, GB, cnt);
            break;
        case Op::Hadamard:
            if (wa) kern::mul_acc(G, nb->val.data(), GA, cnt);
            if (wb) kern::mul_acc(G, na->val.data(), GB, cnt);
            break;
        case Op::Affine:
            if (wa) kern::axpy(n.p0, G, GA, cnt);
            break;
        case Op::Relu:
            if (wa) {
                const double* X = na->val.data();
#pragma omp parallel for schedule(static)
                for (long long i = 0; i < (long long)cnt; ++i)
                    if (X[i] > 0.0) GA[i] += G[i];
            }
            break;
        case Op::Step: break;
        case Op::Tanh:
            if (wa) {
                const double* T = n.val.data();
#pragma omp parallel for schedule(static)
                for (long long i = 0; i < (long long)cnt; ++i) GA[i] += G[i] * (1.0 - T[i] * T[i]);
            }
            break;
        case Op::Sigmoid:
            if (wa) {
                const double* S = n.val.data();
#pragma omp parallel for schedule(static)
                for (long long i = 0; i < (long long)cnt; ++i) GA[i] += G[i] * S[i] * (1.0 - S[i]);
            }
            break;
        case Op::Sqrt:
            if (wa) {
                const double* T = n.val.data();
#pragma omp parallel for schedule(static)
                for (long long i = 0; i < (long long)cnt; ++i) GA[i] += G[i] * 0.5 / T[i];
            }
            break;
        case Op::Recip:
            if (wa) {
                const double* R = n.val.data();
#pragma omp parallel for schedule(static)
                for (long long i = 0; i < (long long)cnt; ++i) GA[i] -= G[i] * R[i] * R[i];
            }
            break;
        case Op::Conv2d: {
            const Shape &x = na->shape, &k = nb->shape;
            if (wa) {
                double* S = scratch(na->val.size());
                kern::conv2d_dinput(G, nb->val.data(), S, x.n(), x.c(), x.h(), x.w(), k.n(), k.h(), k.w());
                kern::axpy(1.0, S, GA, na->val.size());
            }
            if (wb) {
                double* S = scratch(nb->val.size());
                kern::conv2d_dweight(na->val.data(), G, S, x.n(), x.c(), x.h(), x.w(), k.n(), k.h(), k.w());
                kern::axpy(1.0, S, GB, nb->val.size());
            }
            break;
        }
        case Op::ConvDInput: {
            // value = dinput(a=g0, b=K); <V, dinput(g0,K)> = <conv(V,K), g0> = <dweight(V,g0), K>
            const Shape &g0 = na->shape, &k = nb->shape;
            if (wa) {
                double* S = scratch(na->val.size());
                kern::conv2d_fwd(G, nb->val.data(), S, n.shape.n(), n.shape.c(), n.shape.h(), n.shape.w(),
                                 k.n(), k.h(), k.w());
                kern::axpy(1.0, S, GA, na->val.size());
            }
            if (wb) {
                double* S = scratch(nb->val.size());
                kern::conv2d_dweight(G, na->val.data(), S, n.shape.n(), n.shape.c(), n.shape.h(), n.shape.w(),
                                     g0.c(), k.h(), k.w());
                kern::axpy(1.0, S, GB, nb->val.size());
            }
            break;
        }
        case Op::ConvDWeight: {
            // value = dweight(a=x, b=g0); <V, dweight(x,g0)> = <dinput(g0,V), x> = <conv(x,V), g0>
            const Shape& x = na->shape;
            if (wa) {
                double* S = scratch(na->val.size());
                kern::conv2d_dinput(nb->val.data(), G, S, x.n(), x.c(), x.h(), x.w(),
                                    n.shape.n(), n.shape.h(), n.shape.w());
                kern::axpy(1.0, S, GA, na->val.size());
            }
            if (wb) {
                double* S = scratch(nb->val.size());
                kern::conv2d_fwd(na->val.data(), G, S, x.n(), x.c(), x.h(), x.w(),
                                 n.shape.n(), n.shape.h(), n.shape.w());
                kern::axpy(1.0, S, GB, nb->val.size());
            }
            break;
        }
        case Op::BiasAdd: {
            const Shape& x = na->shape;
            if (wa) kern::axpy(1.0, G, GA, cnt);
            if (wb) {
                double* S = scratch(nb->val.size());
                kern::channel_sum(G, S, x.n(), x.c(), std::size_t(x.h()) * x.w());
                kern::axpy(1.0, S, GB, nb->val.size());
            }
            break;
        }
        case Op::ChannelSum: {
            const Shape& x = na->shape;
            if (wa) {
                const std::size_t plane = std::size_t(x.h()) * x.w();
#pragma omp parallel for collapse(2) schedule(static)
                for (int i = 0; i < x.n(); ++i)
                    for (int c = 0; c < x.c(); ++c) {
                        double* dst = GA + (std::size_t(i) * x.c() + c) * plane;
                        const double gc = G[c];
                        for (std::size_t p = 0; p < plane; ++p) dst[p] += gc;
                    }
            }
            break;
        }
        case Op::AvgPool2: {
            const Shape& x = na->shape;
            if (wa) {
                double* S = scratch(na->val.size());
                kern::avgpool2_adj(G, S, x.n(), x.c(), x.h(), x.w());
                kern::axpy(1.0, S, GA, na->val.size());
            }
            break;
        }
        case Op::AvgPool2Adj: {
            if (wa) {
                double* S = scratch(na->val.size());
                kern::avgpool2(G, S, n.shape.n(), n.shape.c(), n.shape.h(), n.shape.w());
                kern::axpy(1.0, S, GA, na->val.size());
            }
            break;
        }
        case Op::UpBilin2: {
            const Shape& x = na->shape;
            if (wa) {
                double* S = scratch(na->val.size());
                kern::up_bilinear2_adj(G, S, x.n(), x.c(), x.h(), x.w());
                kern::axpy(1.0, S, GA, na->val.size());
            }
            break;
        }
        case Op::UpBilin2Adj: {
            if (wa) {
                double* S = scratch(na->val.size());
                kern::up_bilinear2(G, S, n.shape.n(), n.shape.c(), n.shape.h(), n.shape.w());
                kern::axpy(1.0, S, GA, na->val.size());
            }
            break;
        }
        case Op::ConcatC: {
            const Shape &sa = na->shape, &sb = nb->shape;
            const std::size_t plane = std::size_t(sa.h()) * sa.w();
            const std::size_t ca = std::size_t(sa.c()) * plane, cb = std::size_t(sb.c()) * plane;
            for (int i = 0; i < sa.n(); ++i) {
                if (wa) kern::axpy(1.0, G + std::size_t(i) * (ca + cb), GA + std::size_t(i) * ca, ca);
                if (wb) kern::axpy(1.0, G + std::size_t(i) * (ca + cb) + ca, GB + std::size_t(i) * cb, cb);
            }
            break;
        }
        case Op::SliceC: {
            const Shape& s = na->shape;
            if (wa) {
                const std::size_t plane = std::size_t(s.h()) * s.w();
                const std::size_t in_batch = std::size_t(s.c()) * plane;
                const std::size_t out_batch = std::size_t(n.i1) * plane;
                for (int i = 0; i < s.n(); ++i)
                    kern::axpy(1.0, G + std::size_t(i) * out_batch,
                               GA + std::size_t(i) * in_batch + std::size_t(n.i0) * plane, out_batch);
            }
            break;
        }
        case Op::Ddx:
        case Op::Ddy:
        case Op::DdxAdj:
        case Op::DdyAdj: {
            if (wa) {
                const Shape& x = na->shape;
                double* S = scratch(na->val.size());
                if (n.op == Op::Ddx) kern::ddx_adj(G, S, x.n(), x.c(), x.h(), x.w(), n.p0);
                else if (n.op == Op::Ddy) kern::ddy_adj(G, S, x.n(), x.c(), x.h(), x.w(), n.p0);
                else if (n.op == Op::DdxAdj) kern::ddx(G, S, x.n(), x.c(), x.h(), x.w(), n.p0);
                else kern::ddy(G, S, x.n(), x.c(), x.h(), x.w(), n.p0);
                kern::axpy(1.0, S, GA, na->val.size());
            }
            break;
        }
        case Op::MaskedSqNorm: {
            const double gs = G[0];
            const double* R = na->val.data();
            const double* M = nb->val.data();
            const std::size_t m = na->val.size();
            if (wa) {
#pragma omp parallel for schedule(static)
                for (long long i = 0; i < (long long)m; ++i) GA[i] += 2.0 * gs * M[i] * R[i];
            }
            if (wb) {
#pragma omp parallel for schedule(static)
                for (long long i = 0; i < (long long)m; ++i) GB[i] += gs * R[i] * R[i];
            }
            break;
        }
        case Op::Dot: {
            const double gs = G[0];
            const std::size_t m = na->val.size();
            if (wa) kern::axpy(gs, nb->val.data(), GA, m);
            if (wb) kern::axpy(gs, na->val.data(), GB, m);
            break;
        }
        case Op::ScaleByNode: {
            const double s = nb->val[0];
            if (wa) kern::axpy(s, G, GA, cnt);
            if (wb) GB[0] += kern::dot(G, na->val.data(), cnt);
            break;
        }
        case Op::Reshape:
            if (wa) kern::axpy(1.0, G, GA, cnt);
            break;
    }
}

// ---------------------------------------------------------------------------
// Reverse sweep emitted as nodes (differentiable gradients)

Var Graph::emit_vjp(int id, Var g, bool wrt_b) {
    // Copy the header fields; taking references into nodes_ is unsafe here
    // because emitting nodes reallocates the vector.
    const Node& n0 = nodes_[std::size_t(id)];
    const Op op = n0.op;
    const Var a{n0.a}, b{n0.b};
    const double p0 = n0.p0;
    const int i0 = n0.i0, i1 = n0.i1;
    const Shape self_shape = n0.shape;
    const Var self{id};

    switch (op) {
        case Op::Leaf: return Var{};
        case Op::Add: return g;
        case Op::Sub: return wrt_b ? affine(g, -1.0, 0.0) : g;
        case Op::Hadamard: return wrt_b ? hadamard(g, a) : hadamard(g, b);
        case Op::Affine: return affine(g, p0, 0.0);
        case Op::Relu: return hadamard(g, step(a));
        case Op::Step: return Var{};
        case Op::Tanh: return hadamard(g, affine(hadamard(self, self), -1.0, 1.0));
        case Op::Sigmoid: return hadamard(g, hadamard(self, affine(self, -1.0, 1.0)));
        case Op::Sqrt: return hadamard(g, affine(recip(self), 0.5, 0.0));
        case Op::Recip: return affine(hadamard(g, hadamard(self, self)), -1.0, 0.0);
        case Op::Conv2d:
            return wrt_b ? conv2d_dweight(a, g, shape(b).h(), shape(b).w()) : conv2d_dinput(g, b);
        case Op::ConvDInput:
            return wrt_b ? conv2d_dweight(g, a, shape(b).h(), shape(b).w()) : conv2d(g, b);
        case Op::ConvDWeight:
            return wrt_b ? conv2d(a, g) : conv2d_dinput(b, g);
        case Op::BiasAdd: return wrt_b ? channel_sum(g) : g;
        case Op::ChannelSum: return bias_add(constant(shape(a), 0.0), g);
        case Op::AvgPool2: return avgpool2_adj(g);
        case Op::AvgPool2Adj: return avgpool2(g);
        case Op::UpBilin2: return up_bilinear2_adj(g);
        case Op::UpBilin2Adj: return up_bilinear2(g);
        case Op::ConcatC:
            return wrt_b ? slice_channels(g, i0, shape(b).c()) : slice_channels(g, 0, i0);
        case Op::SliceC: {
            const Shape& s = shape(a);
            Var acc = g;
            if (i0 > 0) acc = concat_channels(constant(Shape::nchw(s.n(), i0, s.h(), s.w()), 0.0), acc);
            const int rest = s.c() - i0 - i1;
            if (rest > 0) acc = concat_channels(acc, constant(Shape::nchw(s.n(), rest, s.h(), s.w()), 0.0));
            return acc;
        }
        case Op::Ddx: return ddx_adj(g, p0);
        case Op::Ddy: return ddy_adj(g, p0);
        case Op::DdxAdj: return ddx(g, p0);
        case Op::DdyAdj: return ddy(g, p0);
        case Op::MaskedSqNorm:
            if (wrt_b) return scale_by_node(hadamard(a, a), g);
            return affine(scale_by_node(hadamard(b, a), g), 2.0, 0.0);
        case Op::Dot: return wrt_b ? scale_by_node(a, g) : scale_by_node(b, g);
        case Op::ScaleByNode: return wrt_b ? dot(g, a) : scale_by_node(g, b);
        case Op::Reshape: return reshape(g, shape(a));
    }
    (void)self_shape;
    (void)i1;
    return Var{};
}

std::vector<Var> Graph::backward_graph(Var out, const std::vector<Var>& targets) {
    if (!out.valid() || std::size_t(out.id) >= nodes_.size())
        throw Error("backward_graph: invalid output node");
    if (node(out).shape.numel() != 1) throw ShapeError("backward_graph: output node must be scalar");
    const std::size_t n0 = nodes_.size();
    std::vector<char> need(n0, 0);
    for (Var t : targets) {
        if (!t.valid() || std::size_t(t.id) >= n0) throw Error("backward_graph: invalid target node");
        need[std::size_t(t.id)] = 1;
    }
    for (std::size_t i = 0; i < n0; ++i) {
        const Node& n = nodes_[i];
        if (need[i]) continue;
        if (n.a >= 0 && need[std::size_t(n.a)]) need[i] = 1;
        else if (n.b >= 0 && need[std::size_t(n.b)]) need[i] = 1;
    }

    std::vector<Var> gm(n0, Var{});
    if (need[std::size_t(out.id)]) gm[std::size_t(out.id)] = scalar(1.0);
    for (int i = out.id; i >= 0; --i) {
        const Var gi = gm[std::size_t(i)];
        if (!gi.valid()) continue;
        const int ia = nodes_[std::size_t(i)].a;
        const int ib = nodes_[std::size_t(i)].b;
        if (ia >= 0 && need[std::size_t(ia)]) {
            Var c = emit_vjp(i, gi, false);
            if (c.valid()) gm[std::size_t(ia)] = gm[std::size_t(ia)].valid() ? add(gm[std::size_t(ia)], c) : c;
        }
        if (ib >= 0 && need[std::size_t(ib)]) {
            Var c = emit_vjp(i, gi, true);
            if (c.valid()) gm[std::size_t(ib)] = gm[std::size_t(ib)].valid() ? add(gm[std::size_t(ib)], c) : c;
        }
    }

    std::vector<Var> out_grads;
    out_grads.reserve(targets.size());
    for (Var t : targets) {
        Var gv = gm[std::size_t(t.id)];
        out_grads.push_back(gv.valid() ? gv : constant(node(t).shape, 0.0));
    }
    return out_grads;
}

// ---------------------------------------------------------------------------
// Parameter binding and finite-difference checking

Var ParamBind::at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw Error("ParamBind: unknown slice '" + name + "'");
    return it->second;
}

ParamBind bind_params(Graph& g, const ParamStore& store, bool requires_grad) {
    ParamBind bind;
    for (const auto& [name, t] : store.slices()) {
        Tensor tt = t;
        tt.requires_grad = requires_grad;
        bind.vars[name] = g.leaf(tt);
    }
    return bind;
}

std::map<std::string, Tensor> collect_param_grads(const Graph& g, const ParamBind& bind) {
    std::map<std::string, Tensor> grads;
    for (const auto& [name, v] : bind.vars) grads[name] = g.grad_tensor(v);
    return grads;
}

double grad_check(const std::function<Var(Graph&, const std::vector<Var>&)>& fn,
                  const std::vector<Tensor>& inputs, double eps, GradCheckDetail* detail) {
    if (eps <= 0.0) throw Error("grad_check: eps must be positive");
    std::vector<Tensor> work = inputs;
    for (auto& t : work) t.requires_grad = true;

    auto evaluate = [&](bool want_grads, std::vector<Tensor>* grads) -> double {
        Graph g;
        std::vector<Var> leaves;
        leaves.reserve(work.size());
        for (const auto& t : work) leaves.push_back(g.leaf(t));
        Var out = fn(g, leaves);
        if (g.shape(out).numel() != 1) throw Error("grad_check: builder must return a scalar node");
        const double v = g.scalar_value(out);
        if (want_grads) {
            g.backward(out);
            grads->clear();
            for (Var l : leaves) grads->push_back(g.grad_tensor(l));
        }
        return v;
    };

    std::vector<Tensor> analytic;
    evaluate(true, &analytic);

    double max_rel = 0.0;
    for (std::size_t ti = 0; ti < work.size(); ++ti) {
        for (std::size_t j = 0; j < work[ti].data.size(); ++j) {
            const double saved = work[ti].data[j];
            work[ti].data[j] = saved + eps;
            const double fp = evaluate(false, nullptr);
            work[ti].data[j] = saved - eps;
            const double fm = evaluate(false, nullptr);
            work[ti].data[j] = saved;
            const double cd = (fp - fm) / (2.0 * eps);
            const double an = analytic[ti].data[j];
            const double rel = std::abs(an - cd) / std::max(1e-12, std::abs(cd));
            if (rel > max_rel) {
                max_rel = rel;
                if (detail != nullptr) *detail = GradCheckDetail{ti, j, an, cd};
            }
        }
    }
    return max_rel;
}

} // namespace varmap
