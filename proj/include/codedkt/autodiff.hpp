#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "codedkt/rng.hpp"

namespace codedkt::autodiff {

// Dense rank-2 tensor of 64-bit reals. Row-vector convention throughout:
// activations are 1 x d, parameter matrices are in x out.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

    static Tensor zeros(int r, int c) { return Tensor(r, c); }
    static Tensor full(int r, int c, double value);
    static Tensor row(const std::vector<double>& values);
    static Tensor gaussian(Rng& rng, int r, int c, double stddev);
    static Tensor uniform_fan_in(Rng& rng, int r, int c);  // U(+-1/sqrt(r))

    size_t size() const { return v.size(); }
    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    bool same_shape(const Tensor& other) const {
        return rows == other.rows && cols == other.cols;
    }
    std::string shape_str() const;
    bool finite() const;
    double norm2() const;  // squared Frobenius norm
};

// Reverse-mode tape. Build a graph with the op methods (each returns a node
// id), call backward() on a scalar node, then read gradients per node.
// Parameters are referenced by pointer so large embedding tables are not
// copied into every tape.
class Tape {
public:
    int input(Tensor value);               // constant, no gradient
    int input_ref(const Tensor* value);    // external constant, no gradient
    int param(const Tensor* value);        // external leaf with gradient

    int matmul(int a, int b);
    int add(int a, int b);
    int mul(int a, int b);  // elementwise
    int tanh_op(int a);
    int sigmoid_op(int a);
    int concat_cols(const std::vector<int>& parts);
    int slice_cols(int a, int col_begin, int col_end);
    int tile_rows(int a, int copies);  // 1 x d -> copies x d
    int embedding_lookup(int table, std::vector<int> ids);
    int masked_softmax(int logits, std::vector<uint8_t> mask);  // R x 1
    int weighted_sum(int matrix, int weights);                  // -> 1 x d
    int select_col(int a, int col);                             // 1 x m -> 1 x 1
    // Masked mean binary cross entropy over a 1 x k prediction row. With an
    // all-zero mask the loss is 0 with zero gradient.
    int bce_loss(int predictions, std::vector<double> labels,
                 std::vector<uint8_t> mask);

    void backward(int root);

    const Tensor& value(int id) const;
    // Gradient of the last backward() root w.r.t. node id (zeros if unused).
    Tensor gradient(int id) const;

    size_t node_count() const { return nodes_.size(); }

    static constexpr double kProbabilityClamp = 1e-7;

private:
    enum class Op {
        Input, Param, MatMul, Add, Mul, Tanh, Sigmoid, Concat, SliceCols,
        TileRows, Lookup, MaskedSoftmax, WeightedSum, SelectCol, Bce,
    };

    struct Node {
        Op op;
        std::vector<int> inputs;
        Tensor val;
        const Tensor* ext = nullptr;  // set for input_ref/param nodes
        Tensor grad;
        std::vector<int> ids;         // lookup indices / slice+select bounds
        std::vector<uint8_t> mask;    // masked_softmax / bce
        std::vector<double> labels;   // bce
        int tile_copies = 0;

        const Tensor& value() const { return ext ? *ext : val; }
    };

    std::vector<Node> nodes_;

    int push(Node node);
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    Tensor& grad_of(int id);
};

// Standard Adam with bias correction; moments are kept per parameter name.
class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

    void step(std::map<std::string, Tensor>& params,
              const std::map<std::string, Tensor>& grads, double lr);

    int64_t steps_taken() const { return t_; }

private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

// In-place global-norm gradient clipping; returns the pre-clip norm.
double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm);

}  // namespace codedkt::autodiff
