#pragma once

#include "varmap/fields.hpp"
#include "varmap/gradcore.hpp"

// Conversions between the 32-bit field containers and the 64-bit engine
// tensors. Field stacks enter graphs frames-as-batch: [T,1,H,W].

namespace varmap {

inline Tensor tensor_tchw(const FieldStack& f) {
    Tensor t;
    t.shape = Shape::nchw(f.grid.n_t, 1, f.grid.n_y, f.grid.n_x);
    t.data.assign(f.data.begin(), f.data.end());
    return t;
}

inline FieldStack stack_from_tchw(const Tensor& t, const GridSpec& grid) {
    if (t.shape.numel() != grid.size())
        throw ShapeError("stack_from_tchw: tensor size does not match grid");
    FieldStack f(grid);
    for (std::size_t i = 0; i < t.data.size(); ++i) f.data[i] = float(t.data[i]);
    return f;
}

inline Var leaf_stack(Graph& g, const FieldStack& f, bool requires_grad = false) {
    Tensor t = tensor_tchw(f);
    t.requires_grad = requires_grad;
    return g.leaf(t);
}

} // namespace varmap
