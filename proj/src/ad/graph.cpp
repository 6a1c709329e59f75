#include "pathgen/ad/graph.hpp"

#include <Eigen/Core>

#include <cmath>

namespace pathgen::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;

template <typename T>
CMap<T> cmap(const Tensor<T>& t) {
    return CMap<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
Map<T> map(Tensor<T>& t) {
    return Map<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require_rank2(const Shape& s, const char* what) {
    if (s.size() != 2) throw ShapeError(std::string(what) + ": expected a matrix, got shape " + shape_str(s));
}

void require_same(const Shape& a, const Shape& b, const char* what) {
    if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
T stable_log_sigmoid(T x) {
    return x < T(0) ? x - std::log1p(std::exp(x)) : -std::log1p(std::exp(-x));
}

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
void accumulate(std::vector<Tensor<T>>& grads, std::uint32_t id, const Shape& shape) {
    if (grads[id].empty()) grads[id] = Tensor<T>(shape);
}

}  // namespace

const char* op_name(Op op) noexcept {
    switch (op) {
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::MatMul: return "matmul";
        case Op::MatMulNT: return "matmul_nt";
        case Op::Add: return "add";
        case Op::AddRow: return "add_row";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::Elu: return "elu";
        case Op::Sigmoid: return "sigmoid";
        case Op::LogSigmoid: return "log_sigmoid";
        case Op::Tanh: return "tanh";
        case Op::SoftmaxRows: return "softmax";
        case Op::LayerNorm: return "layer_norm";
        case Op::ConcatRows: return "concat_rows";
        case Op::ConcatCols: return "concat_cols";
        case Op::Slice: return "slice";
        case Op::GatherRows: return "gather_rows";
        case Op::Transpose: return "transpose";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::SumSquares: return "sum_squares";
        case Op::MeanRows: return "mean_rows";
        case Op::Custom: return "custom";
    }
    return "?";
}

template <typename T>
Var<T> Graph<T>::input(Tensor<T> value) {
    require_rank2(value.shape(), "input");
    if (!value.all_finite()) throw NumericError("input tensor contains non-finite values");
    Node n;
    n.op = Op::Input;
    n.value = std::move(value);
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(std::move(n));
    input_ids_.push_back(id);
    return {this, id};
}

template <typename T>
Var<T> Graph<T>::param(const ParamStore<T>& store, const std::string& name) {
    if (auto it = param_index_.find(name); it != param_index_.end()) return {this, it->second};
    const Tensor<T>& t = store.at(name);
    require_rank2(t.shape(), "param");
    Node n;
    n.op = Op::Param;
    n.external = &t;
    n.name = name;
    n.needs_grad = true;
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(std::move(n));
    param_ids_.push_back(id);
    param_index_.emplace(name, id);
    return {this, id};
}

template <typename T>
void Graph<T>::bind(Var<T> v, Tensor<T> value) {
    Node& n = nodes_.at(v.id);
    if (n.op != Op::Input) throw ShapeError("bind: node is not an input leaf");
    require_same(n.value.shape(), value.shape(), "bind");
    n.value = std::move(value);
}

template <typename T>
Var<T> Graph<T>::push(Node node) {
    for (auto in : node.inputs) {
        if (in >= nodes_.size()) throw ShapeError("op input refers to a later node");
        node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
    }
    compute(node);
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(std::move(node));
    return {this, id};
}

template <typename T>
void Graph<T>::evaluate() {
    for (auto& n : nodes_) {
        if (n.op == Op::Input) {
            if (!n.value.all_finite()) throw NumericError("input tensor contains non-finite values");
        } else if (n.op != Op::Param) {
            compute(n);
        }
    }
}

template <typename T>
void Graph<T>::compute(Node& n) {
    auto in = [&](std::size_t i) -> const Tensor<T>& { return nodes_[n.inputs[i]].val(); };
    switch (n.op) {
        case Op::Input:
        case Op::Param:
            return;
        case Op::MatMul: {
            const auto& a = in(0);
            const auto& b = in(1);
            if (a.cols() != b.rows())
                throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
            n.value = Tensor<T>::matrix(a.rows(), b.cols());
            map(n.value).noalias() = cmap(a) * cmap(b);
            break;
        }
        case Op::MatMulNT: {
            const auto& a = in(0);
            const auto& b = in(1);
            if (a.cols() != b.cols())
                throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " x T" + shape_str(b.shape()));
            n.value = Tensor<T>::matrix(a.rows(), b.rows());
            map(n.value).noalias() = cmap(a) * cmap(b).transpose();
            break;
        }
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            const auto& a = in(0);
            const auto& b = in(1);
            require_same(a.shape(), b.shape(), op_name(n.op));
            n.value = Tensor<T>(a.shape());
            T* o = n.value.ptr();
            const T* pa = a.ptr();
            const T* pb = b.ptr();
            const std::size_t sz = a.size();
            if (n.op == Op::Add)
                for (std::size_t i = 0; i < sz; ++i) o[i] = pa[i] + pb[i];
            else if (n.op == Op::Sub)
                for (std::size_t i = 0; i < sz; ++i) o[i] = pa[i] - pb[i];
            else
                for (std::size_t i = 0; i < sz; ++i) o[i] = pa[i] * pb[i];
            break;
        }
        case Op::AddRow: {
            const auto& a = in(0);
            const auto& r = in(1);
            if (r.rows() != 1 || r.cols() != a.cols())
                throw ShapeError("add_row: " + shape_str(a.shape()) + " + " + shape_str(r.shape()));
            n.value = a;
            for (std::size_t i = 0; i < a.rows(); ++i) {
                T* o = n.value.ptr() + i * a.cols();
                for (std::size_t j = 0; j < a.cols(); ++j) o[j] += r[j];
            }
            break;
        }
        case Op::Scale: {
            n.value = in(0);
            const T f = static_cast<T>(n.scalar);
            for (auto& v : n.value.values()) v *= f;
            break;
        }
        case Op::Elu:
        case Op::Sigmoid:
        case Op::LogSigmoid:
        case Op::Tanh: {
            n.value = in(0);
            auto vals = n.value.values();
            if (n.op == Op::Elu)
                for (auto& v : vals) v = v > T(0) ? v : std::expm1(v);
            else if (n.op == Op::Sigmoid)
                for (auto& v : vals) v = stable_sigmoid(v);
            else if (n.op == Op::LogSigmoid)
                for (auto& v : vals) v = stable_log_sigmoid(v);
            else
                for (auto& v : vals) v = std::tanh(v);
            break;
        }
        case Op::SoftmaxRows: {
            n.value = in(0);
            for (std::size_t i = 0; i < n.value.rows(); ++i) {
                auto row = n.value.row_span(i);
                const T mx = *std::max_element(row.begin(), row.end());
                double total = 0.0;
                for (auto& v : row) {
                    v = std::exp(v - mx);
                    total += v;
                }
                const T inv = static_cast<T>(1.0 / total);
                for (auto& v : row) v *= inv;
            }
            break;
        }
        case Op::LayerNorm: {
            const auto& a = in(0);
            const auto& g = in(1);
            const auto& b = in(2);
            if (g.rows() != 1 || g.cols() != a.cols() || b.shape() != g.shape())
                throw ShapeError("layer_norm: gain/bias must be 1 x " + std::to_string(a.cols()));
            const std::size_t m = a.rows();
            const std::size_t k = a.cols();
            n.cache = Tensor<T>(a.shape());
            n.cache_inv_std.assign(m, T(0));
            n.value = Tensor<T>(a.shape());
            for (std::size_t i = 0; i < m; ++i) {
                auto x = a.row_span(i);
                double mu = 0.0;
                for (auto v : x) mu += v;
                mu /= static_cast<double>(k);
                double var = 0.0;
                for (auto v : x) var += (v - mu) * (v - mu);
                var /= static_cast<double>(k);
                const double inv = 1.0 / std::sqrt(var + n.scalar);
                n.cache_inv_std[i] = static_cast<T>(inv);
                auto xh = n.cache.row_span(i);
                auto y = n.value.row_span(i);
                for (std::size_t j = 0; j < k; ++j) {
                    xh[j] = static_cast<T>((x[j] - mu) * inv);
                    y[j] = xh[j] * g[j] + b[j];
                }
            }
            break;
        }
        case Op::ConcatRows: {
            const std::size_t cols = in(0).cols();
            std::size_t rows = 0;
            for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                if (in(i).cols() != cols) throw ShapeError("concat_rows: column count mismatch");
                rows += in(i).rows();
            }
            n.value = Tensor<T>::matrix(rows, cols);
            T* o = n.value.ptr();
            for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                o = std::copy(in(i).ptr(), in(i).ptr() + in(i).size(), o);
            }
            break;
        }
        case Op::ConcatCols: {
            const std::size_t rows = in(0).rows();
            std::size_t cols = 0;
            for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                if (in(i).rows() != rows) throw ShapeError("concat_cols: row count mismatch");
                cols += in(i).cols();
            }
            n.value = Tensor<T>::matrix(rows, cols);
            std::size_t c0 = 0;
            for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                const auto& p = in(i);
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy(p.ptr() + r * p.cols(), p.ptr() + (r + 1) * p.cols(), n.value.ptr() + r * cols + c0);
                c0 += p.cols();
            }
            break;
        }
        case Op::Slice: {
            const auto& a = in(0);
            if (n.r0 + n.nr > a.rows() || n.c0 + n.nc > a.cols())
                throw ShapeError("slice out of range for shape " + shape_str(a.shape()));
            n.value = Tensor<T>::matrix(n.nr, n.nc);
            for (std::size_t r = 0; r < n.nr; ++r) {
                const T* src = a.ptr() + (n.r0 + r) * a.cols() + n.c0;
                std::copy(src, src + n.nc, n.value.ptr() + r * n.nc);
            }
            break;
        }
        case Op::GatherRows: {
            const auto& a = in(0);
            n.value = Tensor<T>::matrix(n.index.size(), a.cols());
            for (std::size_t r = 0; r < n.index.size(); ++r) {
                if (n.index[r] >= a.rows()) throw ShapeError("gather_rows: index out of range");
                const T* src = a.ptr() + n.index[r] * a.cols();
                std::copy(src, src + a.cols(), n.value.ptr() + r * a.cols());
            }
            break;
        }
        case Op::Transpose: {
            const auto& a = in(0);
            n.value = Tensor<T>::matrix(a.cols(), a.rows());
            map(n.value) = cmap(a).transpose();
            break;
        }
        case Op::Sum:
        case Op::Mean:
        case Op::SumSquares: {
            const auto& a = in(0);
            double acc = 0.0;
            if (n.op == Op::SumSquares)
                for (auto v : a.values()) acc += static_cast<double>(v) * v;
            else
                for (auto v : a.values()) acc += v;
            if (n.op == Op::Mean) acc /= static_cast<double>(a.size());
            n.value = Tensor<T>::scalar(static_cast<T>(acc));
            break;
        }
        case Op::MeanRows: {
            const auto& a = in(0);
            std::vector<double> acc(a.cols(), 0.0);
            for (std::size_t r = 0; r < a.rows(); ++r)
                for (std::size_t c = 0; c < a.cols(); ++c) acc[c] += a(r, c);
            n.value = Tensor<T>::matrix(1, a.cols());
            for (std::size_t c = 0; c < a.cols(); ++c) n.value[c] = static_cast<T>(acc[c] / a.rows());
            break;
        }
        case Op::Custom: {
            std::vector<const Tensor<T>*> ins;
            for (auto id : n.inputs) ins.push_back(&nodes_[id].val());
            n.value = n.custom->forward(ins);
            require_rank2(n.value.shape(), n.custom->name.c_str());
            break;
        }
    }
    if (!n.value.all_finite()) throw NumericError(std::string("non-finite result in ") + op_name(n.op));
}

template <typename T>
Gradients<T> Graph<T>::gradient(Var<T> output) const {
    if (output.graph != this) throw ShapeError("gradient: variable belongs to another graph");
    const Node& out = nodes_.at(output.id);
    if (out.val().size() != 1) throw ShapeError("gradient: output is not scalar, shape " + shape_str(out.val().shape()));
    std::vector<Tensor<T>> grads(output.id + 1);
    grads[output.id] = Tensor<T>::scalar(T(1));
    Gradients<T> result;
    for (std::int64_t i = output.id; i >= 0; --i) {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.needs_grad || grads[i].empty()) continue;
        if (n.op == Op::Param) {
            if (!grads[i].all_finite()) throw NumericError("non-finite gradient for parameter '" + n.name + "'");
            result.emplace(n.name, std::move(grads[i]));
            continue;
        }
        backward(n, grads[i], grads);
        grads[i] = Tensor<T>();
    }
    return result;
}

template <typename T>
void Graph<T>::backward(const Node& n, const Tensor<T>& g, std::vector<Tensor<T>>& grads) const {
    auto in = [&](std::size_t i) -> const Tensor<T>& { return nodes_[n.inputs[i]].val(); };
    auto wants = [&](std::size_t i) { return nodes_[n.inputs[i]].needs_grad; };
    auto gin = [&](std::size_t i) -> Tensor<T>& {
        const auto id = n.inputs[i];
        accumulate(grads, id, nodes_[id].val().shape());
        return grads[id];
    };
    switch (n.op) {
        case Op::Input:
        case Op::Param:
            return;
        case Op::MatMul: {
            if (wants(0)) map(gin(0)).noalias() += cmap(g) * cmap(in(1)).transpose();
            if (wants(1)) map(gin(1)).noalias() += cmap(in(0)).transpose() * cmap(g);
            return;
        }
        case Op::MatMulNT: {
            if (wants(0)) map(gin(0)).noalias() += cmap(g) * cmap(in(1));
            if (wants(1)) map(gin(1)).noalias() += cmap(g).transpose() * cmap(in(0));
            return;
        }
        case Op::Add:
        case Op::Sub: {
            const T sign = n.op == Op::Sub ? T(-1) : T(1);
            if (wants(0)) {
                auto& d = gin(0);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            if (wants(1)) {
                auto& d = gin(1);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += sign * g[i];
            }
            return;
        }
        case Op::Mul: {
            if (wants(0)) {
                auto& d = gin(0);
                const auto& b = in(1);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * b[i];
            }
            if (wants(1)) {
                auto& d = gin(1);
                const auto& a = in(0);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * a[i];
            }
            return;
        }
        case Op::AddRow: {
            if (wants(0)) {
                auto& d = gin(0);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            if (wants(1)) {
                auto& d = gin(1);
                const std::size_t cols = g.cols();
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < cols; ++c) d[c] += g[r * cols + c];
            }
            return;
        }
        case Op::Scale: {
            auto& d = gin(0);
            const T f = static_cast<T>(n.scalar);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += f * g[i];
            return;
        }
        case Op::Elu: {
            auto& d = gin(0);
            const auto& x = in(0);
            const auto& y = n.value;
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (x[i] > T(0) ? T(1) : y[i] + T(1));
            return;
        }
        case Op::Sigmoid: {
            auto& d = gin(0);
            const auto& y = n.value;
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (T(1) - y[i]);
            return;
        }
        case Op::LogSigmoid: {
            auto& d = gin(0);
            const auto& x = in(0);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * stable_sigmoid(-x[i]);
            return;
        }
        case Op::Tanh: {
            auto& d = gin(0);
            const auto& y = n.value;
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (T(1) - y[i] * y[i]);
            return;
        }
        case Op::SoftmaxRows: {
            auto& d = gin(0);
            const auto& y = n.value;
            const std::size_t cols = y.cols();
            for (std::size_t r = 0; r < y.rows(); ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c)
                    d[r * cols + c] += y[r * cols + c] * static_cast<T>(g[r * cols + c] - dot);
            }
            return;
        }
        case Op::LayerNorm: {
            const auto& gain = in(1);
            const auto& xh = n.cache;
            const std::size_t m = xh.rows();
            const std::size_t k = xh.cols();
            if (wants(1)) {
                auto& dg = gin(1);
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < k; ++c) dg[c] += g[r * k + c] * xh[r * k + c];
            }
            if (wants(2)) {
                auto& db = gin(2);
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < k; ++c) db[c] += g[r * k + c];
            }
            if (wants(0)) {
                auto& dx = gin(0);
                std::vector<double> dxh(k);
                for (std::size_t r = 0; r < m; ++r) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t c = 0; c < k; ++c) {
                        dxh[c] = static_cast<double>(g[r * k + c]) * gain[c];
                        mean_d += dxh[c];
                        mean_dx += dxh[c] * xh[r * k + c];
                    }
                    mean_d /= static_cast<double>(k);
                    mean_dx /= static_cast<double>(k);
                    const double inv = n.cache_inv_std[r];
                    for (std::size_t c = 0; c < k; ++c)
                        dx[r * k + c] += static_cast<T>(inv * (dxh[c] - mean_d - xh[r * k + c] * mean_dx));
                }
            }
            return;
        }
        case Op::ConcatRows: {
            std::size_t offset = 0;
            for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                const std::size_t sz = in(i).size();
                if (wants(i)) {
                    auto& d = gin(i);
                    for (std::size_t j = 0; j < sz; ++j) d[j] += g[offset + j];
                }
                offset += sz;
            }
            return;
        }
        case Op::ConcatCols: {
            const std::size_t cols = g.cols();
            std::size_t c0 = 0;
            for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                const std::size_t pc = in(i).cols();
                if (wants(i)) {
                    auto& d = gin(i);
                    for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < pc; ++c) d[r * pc + c] += g[r * cols + c0 + c];
                }
                c0 += pc;
            }
            return;
        }
        case Op::Slice: {
            auto& d = gin(0);
            const std::size_t cols = d.cols();
            for (std::size_t r = 0; r < n.nr; ++r)
                for (std::size_t c = 0; c < n.nc; ++c) d[(n.r0 + r) * cols + n.c0 + c] += g[r * n.nc + c];
            return;
        }
        case Op::GatherRows: {
            auto& d = gin(0);
            const std::size_t cols = d.cols();
            for (std::size_t r = 0; r < n.index.size(); ++r)
                for (std::size_t c = 0; c < cols; ++c) d[n.index[r] * cols + c] += g[r * cols + c];
            return;
        }
        case Op::Transpose: {
            map(gin(0)) += cmap(g).transpose();
            return;
        }
        case Op::Sum:
        case Op::Mean: {
            auto& d = gin(0);
            const T s = n.op == Op::Mean ? g[0] / static_cast<T>(d.size()) : g[0];
            for (auto& v : d.values()) v += s;
            return;
        }
        case Op::SumSquares: {
            auto& d = gin(0);
            const auto& x = in(0);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += T(2) * x[i] * g[0];
            return;
        }
        case Op::MeanRows: {
            auto& d = gin(0);
            const std::size_t rows = d.rows();
            const std::size_t cols = d.cols();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += g[c] / static_cast<T>(rows);
            return;
        }
        case Op::Custom: {
            std::vector<const Tensor<T>*> ins;
            std::vector<Tensor<T>*> outs;
            for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                ins.push_back(&in(i));
                outs.push_back(&gin(i));
            }
            if (!n.custom->backward) throw ShapeError("custom op '" + n.custom->name + "' has no backward rule");
            n.custom->backward(ins, n.value, g, outs);
            return;
        }
    }
}

// ---- op constructors ------------------------------------------------------

namespace {

template <typename T>
Graph<T>* graph_of(std::initializer_list<Var<T>> vars) {
    Graph<T>* g = vars.begin()->graph;
    for (const auto& v : vars)
        if (v.graph != g || g == nullptr) throw ShapeError("operands belong to different graphs");
    return g;
}

template <typename T>
Var<T> unary(Op op, Var<T> a, double scalar = 0.0) {
    typename Graph<T>::Node n;
    n.op = op;
    n.inputs = {a.id};
    n.scalar = scalar;
    return graph_of({a})->push(std::move(n));
}

template <typename T>
Var<T> binary(Op op, Var<T> a, Var<T> b) {
    typename Graph<T>::Node n;
    n.op = op;
    n.inputs = {a.id, b.id};
    return graph_of({a, b})->push(std::move(n));
}

template <typename T>
Var<T> nary(Op op, std::span<const Var<T>> parts) {
    if (parts.empty()) throw ShapeError(std::string(op_name(op)) + ": no operands");
    Graph<T>* g = parts.front().graph;
    typename Graph<T>::Node n;
    n.op = op;
    for (const auto& p : parts) {
        if (p.graph != g) throw ShapeError("operands belong to different graphs");
        n.inputs.push_back(p.id);
    }
    return g->push(std::move(n));
}

}  // namespace

template <typename T> Var<T> matmul(Var<T> a, Var<T> b) { return binary(Op::MatMul, a, b); }
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b) { return binary(Op::MatMulNT, a, b); }
template <typename T> Var<T> add(Var<T> a, Var<T> b) { return binary(Op::Add, a, b); }
template <typename T> Var<T> add_row(Var<T> a, Var<T> row) { return binary(Op::AddRow, a, row); }
template <typename T> Var<T> sub(Var<T> a, Var<T> b) { return binary(Op::Sub, a, b); }
template <typename T> Var<T> mul(Var<T> a, Var<T> b) { return binary(Op::Mul, a, b); }
template <typename T> Var<T> scale(Var<T> a, double factor) { return unary(Op::Scale, a, factor); }
template <typename T> Var<T> elu(Var<T> a) { return unary(Op::Elu, a); }
template <typename T> Var<T> sigmoid(Var<T> a) { return unary(Op::Sigmoid, a); }
template <typename T> Var<T> log_sigmoid(Var<T> a) { return unary(Op::LogSigmoid, a); }
template <typename T> Var<T> tanh(Var<T> a) { return unary(Op::Tanh, a); }
template <typename T> Var<T> softmax_rows(Var<T> a) { return unary(Op::SoftmaxRows, a); }
template <typename T> Var<T> transpose(Var<T> a) { return unary(Op::Transpose, a); }
template <typename T> Var<T> sum(Var<T> a) { return unary(Op::Sum, a); }
template <typename T> Var<T> mean(Var<T> a) { return unary(Op::Mean, a); }
template <typename T> Var<T> sum_squares(Var<T> a) { return unary(Op::SumSquares, a); }
template <typename T> Var<T> mean_rows(Var<T> a) { return unary(Op::MeanRows, a); }

template <typename T>
Var<T> layer_norm(Var<T> a, Var<T> gain, Var<T> bias, double eps) {
    typename Graph<T>::Node n;
    n.op = Op::LayerNorm;
    n.inputs = {a.id, gain.id, bias.id};
    n.scalar = eps;
    return graph_of({a, gain, bias})->push(std::move(n));
}

template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts) { return nary(Op::ConcatRows, parts); }
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts) { return nary(Op::ConcatCols, parts); }

template <typename T>
Var<T> slice(Var<T> a, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols) {
    typename Graph<T>::Node n;
    n.op = Op::Slice;
    n.inputs = {a.id};
    n.r0 = row0;
    n.nr = nrows;
    n.c0 = col0;
    n.nc = ncols;
    return graph_of({a})->push(std::move(n));
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t row0, std::size_t nrows) {
    return slice(a, row0, nrows, 0, a.cols());
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t col0, std::size_t ncols) {
    return slice(a, 0, a.rows(), col0, ncols);
}

template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<std::uint32_t> rows) {
    typename Graph<T>::Node n;
    n.op = Op::GatherRows;
    n.inputs = {a.id};
    n.index = std::move(rows);
    return graph_of({a})->push(std::move(n));
}

template <typename T>
Var<T> custom(std::shared_ptr<const CustomOp<T>> op, std::span<const Var<T>> inputs) {
    if (inputs.empty()) throw ShapeError("custom op needs at least one input");
    Graph<T>* g = inputs.front().graph;
    typename Graph<T>::Node n;
    n.op = Op::Custom;
    n.custom = std::move(op);
    for (const auto& v : inputs) n.inputs.push_back(v.id);
    return g->push(std::move(n));
}

#define PATHGEN_INSTANTIATE_OPS(T)                                                          \
    template class Graph<T>;                                                                \
    template Var<T> matmul(Var<T>, Var<T>);                                                 \
    template Var<T> matmul_nt(Var<T>, Var<T>);                                              \
    template Var<T> add(Var<T>, Var<T>);                                                    \
    template Var<T> add_row(Var<T>, Var<T>);                                                \
    template Var<T> sub(Var<T>, Var<T>);                                                    \
    template Var<T> mul(Var<T>, Var<T>);                                                    \
    template Var<T> scale(Var<T>, double);                                                  \
    template Var<T> elu(Var<T>);                                                            \
    template Var<T> sigmoid(Var<T>);                                                        \
    template Var<T> log_sigmoid(Var<T>);                                                    \
    template Var<T> tanh(Var<T>);                                                           \
    template Var<T> softmax_rows(Var<T>);                                                   \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                             \
    template Var<T> concat_rows(std::span<const Var<T>>);                                   \
    template Var<T> concat_cols(std::span<const Var<T>>);                                   \
    template Var<T> slice(Var<T>, std::size_t, std::size_t, std::size_t, std::size_t);      \
    template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                           \
    template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                           \
    template Var<T> gather_rows(Var<T>, std::vector<std::uint32_t>);                        \
    template Var<T> transpose(Var<T>);                                                      \
    template Var<T> sum(Var<T>);                                                            \
    template Var<T> mean(Var<T>);                                                           \
    template Var<T> sum_squares(Var<T>);                                                    \
    template Var<T> mean_rows(Var<T>);                                                      \
    template Var<T> custom(std::shared_ptr<const CustomOp<T>>, std::span<const Var<T>>);

PATHGEN_INSTANTIATE_OPS(float)
PATHGEN_INSTANTIATE_OPS(double)

}  // namespace pathgen::ad
