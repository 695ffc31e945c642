// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over dense row-major double matrices.
//
// A Graph records one forward pass. Every op appends a node holding its value
// and a closure that pushes the node's gradient into its parents. Nodes are
// created in topological order, so backward() is a single reverse sweep.
// Graphs are single-use and not shared across threads; parameters live in a
// ParamSet that the graph only reads.
#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "avdf/random.hpp"

namespace avdf::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Named tensors in insertion order. Used for parameters, gradients and
// optimizer moments alike.
class ParamSet {
public:
    int add(std::string name, Mat value);
    int index(std::string_view name) const;
    bool contains(std::string_view name) const;

    Mat& operator[](int i) { return values_[i]; }
    const Mat& operator[](int i) const { return values_[i]; }
    Mat& at(std::string_view name) { return values_[index(name)]; }
    const Mat& at(std::string_view name) const { return values_[index(name)]; }
    const std::string& name(int i) const { return names_[i]; }
    int size() const { return static_cast<int>(values_.size()); }
    std::size_t scalar_count() const;

    ParamSet zeros_like() const;
    void set_zero();
    // this += other (same layout).
    void accumulate(const ParamSet& other, double scale = 1.0);
    double squared_norm() const;
    bool same_layout(const ParamSet& other) const;

private:
    std::vector<std::string> names_;
    std::vector<Mat> values_;
    std::unordered_map<std::string, int> index_;
};

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Graph {
public:
    using BackwardFn = std::function<void(Graph&, int self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Mat value);
    // Leaf bound to params[index]; its gradient lands in (*grads)[index]
    // after backward(). A null `grads` makes the leaf a constant.
    Var param(const ParamSet& params, int index, ParamSet* grads);
    Var param(const ParamSet& params, std::string_view name, ParamSet* grads) {
        return param(params, params.index(name), grads);
    }

    // Generic node constructor used by ops.
    Var push(Mat value, std::span<const Var> parents, BackwardFn fn);
    Var push(Mat value, std::initializer_list<Var> parents, BackwardFn fn) {
        return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
    }

    const Mat& value(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    // Gradient of the node currently being back-propagated (valid inside a BackwardFn).
    const Mat& grad(int id) const { return nodes_[id].grad; }
    // grad(v) += delta, ignoring constants.
    void accumulate(Var v, const Mat& delta);
    template <class Expr>
    void accumulate_expr(Var v, const Expr& delta) {
        auto& n = nodes_[v.id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) n.grad = delta;
        else n.grad += delta;
    }

    // Back-propagates from a 1x1 node, seeding its gradient with `seed`.
    void backward(Var loss, double seed = 1.0);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Mat own;
        const Mat* ref = nullptr;
        Mat grad;
        BackwardFn backward;
        bool requires_grad = false;
        ParamSet* grad_sink = nullptr;
        int param_index = -1;
    };
    std::vector<Node> nodes_;
};

// ---- ops -------------------------------------------------------------------

Var matmul(Graph& g, Var a, Var b);
// a * b^T
Var matmul_nt(Graph& g, Var a, Var b);
// x * w + bias (bias is 1 x cols broadcast over rows)
Var linear(Graph& g, Var x, Var w, Var bias);
Var add(Graph& g, Var a, Var b);
// x + row, with row 1 x cols broadcast over rows.
Var add_row(Graph& g, Var x, Var row);
Var scale(Graph& g, Var x, double s);
// Element-wise product with a constant mask of the same shape.
Var mul_const(Graph& g, Var x, const Mat& mask);
Var gelu(Graph& g, Var x);
Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax_rows(Graph& g, Var x);
Var slice_rows(Graph& g, Var x, int start, int count);
Var slice_cols(Graph& g, Var x, int start, int count);
Var concat_rows(Graph& g, std::span<const Var> parts);
Var concat_cols(Graph& g, std::span<const Var> parts);
// x_t / max(||x_t||_2, eps) for every row.
Var l2_normalize_rows(Graph& g, Var x, double eps = 1e-8);
Var sum(Graph& g, Var x);
// Inverted dropout; identity when rate == 0.
Var dropout(Graph& g, Var x, double rate, Rng& rng);

// Sinusoidal positional encoding table (rows x dim).
Mat sinusoidal_positions(int rows, int dim);

}  // namespace avdf::nn
