// SPDX-License-Identifier: Apache-2.0
#include "avdf/nn.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "avdf/errors.hpp"

namespace avdf::nn {

int ParamSet::add(std::string name, Mat value) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
    const int i = size();
    index_.emplace(name, i);
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return i;
}

int ParamSet::index(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
    return it->second;
}

bool ParamSet::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (int i = 0; i < size(); ++i) out.add(names_[i], Mat::Zero(values_[i].rows(), values_[i].cols()));
    return out;
}

void ParamSet::set_zero() {
    for (auto& v : values_) v.setZero();
}

void ParamSet::accumulate(const ParamSet& other, double s) {
    for (int i = 0; i < size(); ++i) values_[i] += s * other.values_[i];
}

double ParamSet::squared_norm() const {
    double n = 0;
    for (const auto& v : values_) n += v.squaredNorm();
    return n;
}

bool ParamSet::same_layout(const ParamSet& o) const {
    if (size() != o.size()) return false;
    for (int i = 0; i < size(); ++i)
        if (names_[i] != o.names_[i] || values_[i].rows() != o.values_[i].rows() ||
            values_[i].cols() != o.values_[i].cols())
            return false;
    return true;
}

// ---------------------------------------------------------------------------

Var Graph::constant(Mat value) {
    Node n;
    n.own = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(const ParamSet& params, int index, ParamSet* grads) {
    Node n;
    n.ref = &params[index];
    n.requires_grad = grads != nullptr;
    n.grad_sink = grads;
    n.param_index = index;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::push(Mat value, std::span<const Var> parents, BackwardFn fn) {
    Node n;
    n.own = std::move(value);
    for (auto p : parents) n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Mat& Graph::value(Var v) const {
    const auto& n = nodes_[v.id];
    return n.ref ? *n.ref : n.own;
}

void Graph::accumulate(Var v, const Mat& delta) { accumulate_expr(v, delta); }

void Graph::backward(Var loss, double seed) {
    const Mat& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw NumericError("backward() needs a scalar node");
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Mat::Constant(1, 1, seed);
    for (int id = loss.id; id >= 0; --id) {
        auto& n = nodes_[id];
        if (!n.requires_grad || n.grad.size() == 0) continue;
        if (n.backward) n.backward(*this, id);
        if (n.grad_sink) (*n.grad_sink)[n.param_index] += n.grad;
    }
}

// ---------------------------------------------------------------------------

namespace {

std::string shape(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require(bool ok, const char* op, const Mat& a, const Mat& b) {
    if (!ok) throw ConfigError(std::string(op) + ": incompatible shapes " + shape(a) + " and " + shape(b));
}

}  // namespace

Var matmul(Graph& g, Var a, Var b) {
    require(g.value(a).cols() == g.value(b).rows(), "matmul", g.value(a), g.value(b));
    return g.push(g.value(a) * g.value(b), {a, b}, [a, b](Graph& g, int self) {
        const Mat& dy = g.grad(self);
        if (g.requires_grad(a)) g.accumulate_expr(a, dy * g.value(b).transpose());
        if (g.requires_grad(b)) g.accumulate_expr(b, g.value(a).transpose() * dy);
    });
}

Var matmul_nt(Graph& g, Var a, Var b) {
    require(g.value(a).cols() == g.value(b).cols(), "matmul_nt", g.value(a), g.value(b));
    return g.push(g.value(a) * g.value(b).transpose(), {a, b}, [a, b](Graph& g, int self) {
        const Mat& dy = g.grad(self);
        if (g.requires_grad(a)) g.accumulate_expr(a, dy * g.value(b));
        if (g.requires_grad(b)) g.accumulate_expr(b, dy.transpose() * g.value(a));
    });
}

Var linear(Graph& g, Var x, Var w, Var bias) {
    require(g.value(x).cols() == g.value(w).rows(), "linear", g.value(x), g.value(w));
    require(g.value(bias).rows() == 1 && g.value(bias).cols() == g.value(w).cols(), "linear bias", g.value(w),
            g.value(bias));
    Mat y = g.value(x) * g.value(w);
    y.rowwise() += g.value(bias).row(0);
    return g.push(std::move(y), {x, w, bias}, [x, w, bias](Graph& g, int self) {
        const Mat& dy = g.grad(self);
        if (g.requires_grad(x)) g.accumulate_expr(x, dy * g.value(w).transpose());
        if (g.requires_grad(w)) g.accumulate_expr(w, g.value(x).transpose() * dy);
        if (g.requires_grad(bias)) g.accumulate_expr(bias, dy.colwise().sum());
    });
}

Var add(Graph& g, Var a, Var b) {
    require(g.value(a).rows() == g.value(b).rows() && g.value(a).cols() == g.value(b).cols(), "add", g.value(a),
            g.value(b));
    return g.push(g.value(a) + g.value(b), {a, b}, [a, b](Graph& g, int self) {
        g.accumulate(a, g.grad(self));
        g.accumulate(b, g.grad(self));
    });
}

Var add_row(Graph& g, Var x, Var row) {
    require(g.value(row).rows() == 1 && g.value(row).cols() == g.value(x).cols(), "add_row", g.value(x),
            g.value(row));
    Mat y = g.value(x);
    y.rowwise() += g.value(row).row(0);
    return g.push(std::move(y), {x, row}, [x, row](Graph& g, int self) {
        g.accumulate(x, g.grad(self));
        if (g.requires_grad(row)) g.accumulate_expr(row, g.grad(self).colwise().sum());
    });
}

Var scale(Graph& g, Var x, double s) {
    return g.push(s * g.value(x), {x}, [x, s](Graph& g, int self) { g.accumulate_expr(x, s * g.grad(self)); });
}

Var mul_const(Graph& g, Var x, const Mat& mask) {
    require(g.value(x).rows() == mask.rows() && g.value(x).cols() == mask.cols(), "mul_const", g.value(x), mask);
    return g.push(g.value(x).cwiseProduct(mask), {x}, [x, mask](Graph& g, int self) {
        g.accumulate_expr(x, g.grad(self).cwiseProduct(mask));
    });
}

Var gelu(Graph& g, Var x) {
    const Mat& xv = g.value(x);
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    Mat y = xv.unaryExpr([inv_sqrt2](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
    return g.push(std::move(y), {x}, [x, inv_sqrt2](Graph& g, int self) {
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        Mat d = g.value(x).unaryExpr([&](double v) {
            return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
        g.accumulate_expr(x, g.grad(self).cwiseProduct(d));
    });
}

Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps) {
    require(g.value(gamma).size() == g.value(x).cols() && g.value(beta).size() == g.value(x).cols(), "layer_norm",
            g.value(x), g.value(gamma));
    const Mat& xv = g.value(x);
    const auto n = xv.cols();
    Mat xhat(xv.rows(), n);
    Eigen::VectorXd inv_std(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const double mean = xv.row(r).mean();
        const double var = (xv.row(r).array() - mean).square().mean();
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (xv.row(r).array() - mean) * inv_std[r];
    }
    Mat y = xhat.array().rowwise() * g.value(gamma).row(0).array();
    y.rowwise() += g.value(beta).row(0);
    return g.push(std::move(y), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, int self) {
                      const Mat& dy = g.grad(self);
                      if (g.requires_grad(gamma)) g.accumulate_expr(gamma, dy.cwiseProduct(xhat).colwise().sum());
                      if (g.requires_grad(beta)) g.accumulate_expr(beta, dy.colwise().sum());
                      if (!g.requires_grad(x)) return;
                      Mat dxhat = dy.array().rowwise() * g.value(gamma).row(0).array();
                      const double n = double(dxhat.cols());
                      Mat dx(dxhat.rows(), dxhat.cols());
                      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                          const double m1 = dxhat.row(r).mean();
                          const double m2 = dxhat.row(r).dot(xhat.row(r)) / n;
                          dx.row(r) = inv_std[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                      }
                      g.accumulate_expr(x, dx);
                  });
}

Var softmax_rows(Graph& g, Var x) {
    Mat y = g.value(x);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double m = y.row(r).maxCoeff();
        y.row(r) = (y.row(r).array() - m).exp();
        y.row(r) /= y.row(r).sum();
    }
    return g.push(y, {x}, [x, y](Graph& g, int self) {
        const Mat& dy = g.grad(self);
        Mat dx = y.cwiseProduct(dy);
        const Eigen::VectorXd dots = dx.rowwise().sum();
        dx -= y.cwiseProduct(dots.replicate(1, y.cols()));
        g.accumulate_expr(x, dx);
    });
}

Var slice_rows(Graph& g, Var x, int start, int count) {
    if (start < 0 || count < 0 || start + count > g.value(x).rows())
        throw ConfigError("slice_rows: range out of bounds for " + shape(g.value(x)));
    const auto rows = g.value(x).rows();
    const auto cols = g.value(x).cols();
    return g.push(g.value(x).middleRows(start, count), {x}, [x, start, count, rows, cols](Graph& g, int self) {
        Mat d = Mat::Zero(rows, cols);
        d.middleRows(start, count) = g.grad(self);
        g.accumulate_expr(x, d);
    });
}

Var slice_cols(Graph& g, Var x, int start, int count) {
    if (start < 0 || count < 0 || start + count > g.value(x).cols())
        throw ConfigError("slice_cols: range out of bounds for " + shape(g.value(x)));
    const auto rows = g.value(x).rows();
    const auto cols = g.value(x).cols();
    return g.push(g.value(x).middleCols(start, count), {x}, [x, start, count, rows, cols](Graph& g, int self) {
        Mat d = Mat::Zero(rows, cols);
        d.middleCols(start, count) = g.grad(self);
        g.accumulate_expr(x, d);
    });
}

Var concat_rows(Graph& g, std::span<const Var> parts) {
    Eigen::Index rows = 0;
    const auto cols = g.value(parts[0]).cols();
    if (parts.empty()) throw ConfigError("concat_rows: nothing to concatenate");
    for (auto p : parts) {
        require(g.value(p).cols() == cols, "concat_rows", g.value(parts[0]), g.value(p));
        rows += g.value(p).rows();
    }
    Mat y(rows, cols);
    Eigen::Index at = 0;
    for (auto p : parts) {
        y.middleRows(at, g.value(p).rows()) = g.value(p);
        at += g.value(p).rows();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return g.push(std::move(y), parts, [ps](Graph& g, int self) {
        Eigen::Index at = 0;
        for (auto p : ps) {
            const auto r = g.value(p).rows();
            if (g.requires_grad(p)) g.accumulate_expr(p, g.grad(self).middleRows(at, r));
            at += r;
        }
    });
}

Var concat_cols(Graph& g, std::span<const Var> parts) {
    if (parts.empty()) throw ConfigError("concat_cols: nothing to concatenate");
    Eigen::Index cols = 0;
    const auto rows = g.value(parts[0]).rows();
    for (auto p : parts) {
        require(g.value(p).rows() == rows, "concat_cols", g.value(parts[0]), g.value(p));
        cols += g.value(p).cols();
    }
    Mat y(rows, cols);
    Eigen::Index at = 0;
    for (auto p : parts) {
        y.middleCols(at, g.value(p).cols()) = g.value(p);
        at += g.value(p).cols();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return g.push(std::move(y), parts, [ps](Graph& g, int self) {
        Eigen::Index at = 0;
        for (auto p : ps) {
            const auto c = g.value(p).cols();
            if (g.requires_grad(p)) g.accumulate_expr(p, g.grad(self).middleCols(at, c));
            at += c;
        }
    });
}

Var l2_normalize_rows(Graph& g, Var x, double eps) {
    const Mat& xv = g.value(x);
    Eigen::VectorXd norms = xv.rowwise().norm();
    Mat y(xv.rows(), xv.cols());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) y.row(r) = xv.row(r) / std::max(norms[r], eps);
    return g.push(y, {x}, [x, y, norms, eps](Graph& g, int self) {
        const Mat& dy = g.grad(self);
        Mat dx(dy.rows(), dy.cols());
        for (Eigen::Index r = 0; r < dy.rows(); ++r) {
            if (norms[r] > eps) {
                // d(x/|x|) = (I - y y^T) / |x|
                dx.row(r) = (dy.row(r) - dy.row(r).dot(y.row(r)) * y.row(r)) / norms[r];
            } else {
                dx.row(r) = dy.row(r) / eps;
            }
        }
        g.accumulate_expr(x, dx);
    });
}

Var sum(Graph& g, Var x) {
    const auto rows = g.value(x).rows();
    const auto cols = g.value(x).cols();
    return g.push(Mat::Constant(1, 1, g.value(x).sum()), {x}, [x, rows, cols](Graph& g, int self) {
        g.accumulate_expr(x, Mat::Constant(rows, cols, g.grad(self)(0, 0)));
    });
}

Var dropout(Graph& g, Var x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    const Mat& xv = g.value(x);
    Mat mask(xv.rows(), xv.cols());
    const double keep = 1.0 - rate;
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = uniform01(rng) < keep ? 1.0 / keep : 0.0;
    return mul_const(g, x, mask);
}

Mat sinusoidal_positions(int rows, int dim) {
    Mat pe(rows, dim);
    for (int t = 0; t < rows; ++t)
        for (int i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -double(2 * (i / 2)) / dim);
            pe(t, i) = (i % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
        }
    return pe;
}

}  // namespace avdf::nn
