#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pathgen/ad/tensor.hpp"

namespace pathgen::ad {

// Named parameter tensors. std::map keeps iteration order stable (checkpoint
// layout, optimizer traversal) and element addresses stable (graphs hold
// pointers into the store).
template <typename T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> init) {
        auto [it, inserted] = tensors_.emplace(name, std::move(init));
        if (!inserted) throw ConfigError("duplicate parameter '" + name + "'");
        return it->second;
    }
    Tensor<T>& at(const std::string& name) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    std::size_t size() const noexcept { return tensors_.size(); }
    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors_) n += t.size();
        return n;
    }
    std::map<std::string, Tensor<T>>& tensors() noexcept { return tensors_; }
    const std::map<std::string, Tensor<T>>& tensors() const noexcept { return tensors_; }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [name, t] : tensors_) out.add(name, t.template cast<U>());
        return out;
    }

    bool operator==(const ParamStore&) const = default;

private:
    std::map<std::string, Tensor<T>> tensors_;
};

template <typename T>
using Gradients = std::map<std::string, Tensor<T>>;

enum class Op : std::uint8_t {
    Input,
    Param,
    MatMul,
    MatMulNT,  // a * b^T
    Add,
    AddRow,  // (m x n) + (1 x n), broadcast over rows
    Sub,
    Mul,
    Scale,
    Elu,
    Sigmoid,
    LogSigmoid,
    Tanh,
    SoftmaxRows,
    LayerNorm,
    ConcatRows,
    ConcatCols,
    Slice,
    GatherRows,
    Transpose,
    Sum,
    Mean,
    SumSquares,
    MeanRows,
    Custom,
};

const char* op_name(Op op) noexcept;

template <typename T>
class Graph;

template <typename T>
struct Var {
    Graph<T>* graph = nullptr;
    std::uint32_t id = 0;

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

// User-defined operation. Used for test doubles (stub models, deliberately
// wrong backward rules); production graphs only use the built-in ops.
template <typename T>
struct CustomOp {
    std::string name;
    std::function<Tensor<T>(std::span<const Tensor<T>* const> inputs)> forward;
    // Accumulates into grads[i] (pre-sized, zero-filled) for each input i.
    std::function<void(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output,
                       const Tensor<T>& grad_output, std::span<Tensor<T>* const> grads)>
        backward;
};

// Tape of dense-tensor operations. Nodes are appended in construction order,
// so the node vector is always a topological order. Values are computed
// eagerly when a node is created and can be recomputed with evaluate() after
// rebinding inputs or mutating the parameters a graph points at.
template <typename T>
class Graph {
public:
    struct Node {
        Op op = Op::Input;
        std::vector<std::uint32_t> inputs;
        Tensor<T> value;
        const Tensor<T>* external = nullptr;  // parameter leaves
        std::string name;                     // parameter name
        bool needs_grad = false;
        double scalar = 0.0;
        std::size_t r0 = 0, nr = 0, c0 = 0, nc = 0;
        std::vector<std::uint32_t> index;
        Tensor<T> cache;              // layer-norm normalized input
        std::vector<T> cache_inv_std;  // layer-norm per-row 1/sigma
        std::shared_ptr<const CustomOp<T>> custom;

        const Tensor<T>& val() const noexcept { return external ? *external : value; }
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var<T> input(Tensor<T> value);
    // Leaf referring to store.at(name). The store must outlive the graph.
    // Requesting the same name twice returns the same leaf.
    Var<T> param(const ParamStore<T>& store, const std::string& name);

    void bind(Var<T> input, Tensor<T> value);
    // Recomputes every non-leaf node in order.
    void evaluate();
    // Reverse pass from a 1x1 output. Returns one gradient per parameter leaf
    // reachable from the output.
    Gradients<T> gradient(Var<T> output) const;

    const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).val(); }
    std::size_t node_count() const noexcept { return nodes_.size(); }
    const Node& node(std::uint32_t id) const { return nodes_.at(id); }
    const std::vector<std::uint32_t>& input_ids() const noexcept { return input_ids_; }
    const std::vector<std::uint32_t>& param_ids() const noexcept { return param_ids_; }

    // Appends an op node and computes its value. Used by the op functions.
    Var<T> push(Node node);

private:
    void compute(Node& node);
    void backward(const Node& node, const Tensor<T>& grad, std::vector<Tensor<T>>& grads) const;

    std::vector<Node> nodes_;
    std::vector<std::uint32_t> input_ids_;
    std::vector<std::uint32_t> param_ids_;
    std::map<std::string, std::uint32_t> param_index_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return graph->value(*this);
}

// ---- operations -----------------------------------------------------------

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, double factor);
template <typename T> Var<T> elu(Var<T> a);  // alpha = 1
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> log_sigmoid(Var<T> a);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> softmax_rows(Var<T> a);
// Normalizes each row to zero mean / unit variance, then applies gain and
// bias (both 1 x n).
template <typename T> Var<T> layer_norm(Var<T> a, Var<T> gain, Var<T> bias, double eps = 1e-5);
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);
template <typename T> Var<T> slice(Var<T> a, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols);
template <typename T> Var<T> slice_rows(Var<T> a, std::size_t row0, std::size_t nrows);
template <typename T> Var<T> slice_cols(Var<T> a, std::size_t col0, std::size_t ncols);
template <typename T> Var<T> gather_rows(Var<T> a, std::vector<std::uint32_t> rows);
template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
template <typename T> Var<T> sum_squares(Var<T> a);
template <typename T> Var<T> mean_rows(Var<T> a);
template <typename T> Var<T> custom(std::shared_ptr<const CustomOp<T>> op, std::span<const Var<T>> inputs);

template <typename T> inline Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> inline Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> inline Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

template <typename T>
inline Var<T> concat_rows(std::initializer_list<Var<T>> parts) {
    return concat_rows<T>(std::span<const Var<T>>(parts.begin(), parts.size()));
}
template <typename T>
inline Var<T> concat_cols(std::initializer_list<Var<T>> parts) {
    return concat_cols<T>(std::span<const Var<T>>(parts.begin(), parts.size()));
}

}  // namespace pathgen::ad
