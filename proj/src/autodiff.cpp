#include "codedkt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace codedkt::autodiff {

Tensor Tensor::full(int r, int c, double value) {
    Tensor t(r, c);
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
}

Tensor Tensor::row(const std::vector<double>& values) {
    Tensor t(1, static_cast<int>(values.size()));
    t.v = values;
    return t;
}

Tensor Tensor::gaussian(Rng& rng, int r, int c, double stddev) {
    Tensor t(r, c);
    for (double& x : t.v) x = rng.normal() * stddev;
    return t;
}

Tensor Tensor::uniform_fan_in(Rng& rng, int r, int c) {
    Tensor t(r, c);
    const double limit = 1.0 / std::sqrt(static_cast<double>(r));
    for (double& x : t.v) x = rng.uniform(-limit, limit);
    return t;
}

std::string Tensor::shape_str() const {
    return "(" + std::to_string(rows) + "," + std::to_string(cols) + ")";
}

bool Tensor::finite() const {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

double Tensor::norm2() const {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::runtime_error(std::string(op) + " shape mismatch: " +
                             a.shape_str() + " vs " + b.shape_str());
}

void check_finite(const char* op, const Tensor& t) {
    if (!t.finite()) {
        throw std::runtime_error(std::string(op) + " produced a non-finite value");
    }
}

}  // namespace

int Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::input(Tensor value) {
    Node n;
    n.op = Op::Input;
    n.val = std::move(value);
    return push(std::move(n));
}

int Tape::input_ref(const Tensor* value) {
    Node n;
    n.op = Op::Input;
    n.ext = value;
    return push(std::move(n));
}

int Tape::param(const Tensor* value) {
    Node n;
    n.op = Op::Param;
    n.ext = value;
    return push(std::move(n));
}

const Tensor& Tape::value(int id) const { return node(id).value(); }

Tensor Tape::gradient(int id) const {
    const Node& n = node(id);
    if (n.grad.v.empty()) return Tensor::zeros(n.value().rows, n.value().cols);
    return n.grad;
}

Tensor& Tape::grad_of(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.v.empty()) {
        const Tensor& val = n.value();
        n.grad = Tensor::zeros(val.rows, val.cols);
    }
    return n.grad;
}

int Tape::matmul(int a, int b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols != B.rows) shape_error("matmul", A, B);
    Node n;
    n.op = Op::MatMul;
    n.inputs = {a, b};
    n.val = Tensor::zeros(A.rows, B.cols);
    // ikj order; rows of B stream through cache.
    for (int i = 0; i < A.rows; ++i) {
        double* out_row = &n.val.v[static_cast<size_t>(i) * B.cols];
        const double* a_row = &A.v[static_cast<size_t>(i) * A.cols];
        for (int k = 0; k < A.cols; ++k) {
            const double aik = a_row[k];
            if (aik == 0.0) continue;
            const double* b_row = &B.v[static_cast<size_t>(k) * B.cols];
            for (int j = 0; j < B.cols; ++j) out_row[j] += aik * b_row[j];
        }
    }
    check_finite("matmul", n.val);
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) shape_error("add", A, B);
    Node n;
    n.op = Op::Add;
    n.inputs = {a, b};
    n.val = A;
    for (size_t i = 0; i < n.val.v.size(); ++i) n.val.v[i] += B.v[i];
    check_finite("add", n.val);
    return push(std::move(n));
}

int Tape::mul(int a, int b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) shape_error("mul", A, B);
    Node n;
    n.op = Op::Mul;
    n.inputs = {a, b};
    n.val = A;
    for (size_t i = 0; i < n.val.v.size(); ++i) n.val.v[i] *= B.v[i];
    check_finite("mul", n.val);
    return push(std::move(n));
}

int Tape::tanh_op(int a) {
    Node n;
    n.op = Op::Tanh;
    n.inputs = {a};
    n.val = value(a);
    for (double& x : n.val.v) x = std::tanh(x);
    check_finite("tanh", n.val);
    return push(std::move(n));
}

int Tape::sigmoid_op(int a) {
    Node n;
    n.op = Op::Sigmoid;
    n.inputs = {a};
    n.val = value(a);
    for (double& x : n.val.v) x = 1.0 / (1.0 + std::exp(-x));
    check_finite("sigmoid", n.val);
    return push(std::move(n));
}

int Tape::concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) throw std::runtime_error("concat of zero tensors");
    const int rows = value(parts[0]).rows;
    int cols = 0;
    for (int p : parts) {
        if (value(p).rows != rows) shape_error("concat", value(parts[0]), value(p));
        cols += value(p).cols;
    }
    Node n;
    n.op = Op::Concat;
    n.inputs = parts;
    n.val = Tensor::zeros(rows, cols);
    int offset = 0;
    for (int p : parts) {
        const Tensor& part = value(p);
        for (int r = 0; r < rows; ++r) {
            std::copy(part.v.begin() + static_cast<size_t>(r) * part.cols,
                      part.v.begin() + static_cast<size_t>(r + 1) * part.cols,
                      n.val.v.begin() + static_cast<size_t>(r) * cols + offset);
        }
        offset += part.cols;
    }
    return push(std::move(n));
}

int Tape::slice_cols(int a, int col_begin, int col_end) {
    const Tensor& A = value(a);
    if (col_begin < 0 || col_end > A.cols || col_begin >= col_end) {
        throw std::runtime_error("slice_cols bounds [" + std::to_string(col_begin) +
                                 "," + std::to_string(col_end) + ") invalid for " +
                                 A.shape_str());
    }
    Node n;
    n.op = Op::SliceCols;
    n.inputs = {a};
    n.ids = {col_begin, col_end};
    n.val = Tensor::zeros(A.rows, col_end - col_begin);
    for (int r = 0; r < A.rows; ++r) {
        std::copy(A.v.begin() + static_cast<size_t>(r) * A.cols + col_begin,
                  A.v.begin() + static_cast<size_t>(r) * A.cols + col_end,
                  n.val.v.begin() + static_cast<size_t>(r) * n.val.cols);
    }
    return push(std::move(n));
}

int Tape::tile_rows(int a, int copies) {
    const Tensor& A = value(a);
    if (A.rows != 1) {
        throw std::runtime_error("tile_rows expects a row vector, got " + A.shape_str());
    }
    Node n;
    n.op = Op::TileRows;
    n.inputs = {a};
    n.tile_copies = copies;
    n.val = Tensor::zeros(copies, A.cols);
    for (int r = 0; r < copies; ++r) {
        std::copy(A.v.begin(), A.v.end(),
                  n.val.v.begin() + static_cast<size_t>(r) * A.cols);
    }
    return push(std::move(n));
}

int Tape::embedding_lookup(int table, std::vector<int> ids) {
    const Tensor& T = value(table);
    Node n;
    n.op = Op::Lookup;
    n.inputs = {table};
    n.val = Tensor::zeros(static_cast<int>(ids.size()), T.cols);
    for (size_t r = 0; r < ids.size(); ++r) {
        const int id = ids[r];
        if (id < 0 || id >= T.rows) {
            throw std::runtime_error("embedding index " + std::to_string(id) +
                                     " out of range for table " + T.shape_str());
        }
        std::copy(T.v.begin() + static_cast<size_t>(id) * T.cols,
                  T.v.begin() + static_cast<size_t>(id + 1) * T.cols,
                  n.val.v.begin() + r * static_cast<size_t>(T.cols));
    }
    n.ids = std::move(ids);
    return push(std::move(n));
}

int Tape::masked_softmax(int logits, std::vector<uint8_t> mask) {
    const Tensor& L = value(logits);
    if (L.cols != 1 || static_cast<size_t>(L.rows) != mask.size()) {
        throw std::runtime_error("masked_softmax expects R x 1 logits matching the mask, got " +
                                 L.shape_str() + " with mask length " +
                                 std::to_string(mask.size()));
    }
    Node n;
    n.op = Op::MaskedSoftmax;
    n.inputs = {logits};
    n.val = Tensor::zeros(L.rows, 1);
    double max_logit = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < L.rows; ++r) {
        if (mask[static_cast<size_t>(r)]) max_logit = std::max(max_logit, L.v[static_cast<size_t>(r)]);
    }
    if (std::isfinite(max_logit)) {
        double denom = 0.0;
        for (int r = 0; r < L.rows; ++r) {
            if (!mask[static_cast<size_t>(r)]) continue;
            const double e = std::exp(L.v[static_cast<size_t>(r)] - max_logit);
            n.val.v[static_cast<size_t>(r)] = e;
            denom += e;
        }
        for (int r = 0; r < L.rows; ++r) n.val.v[static_cast<size_t>(r)] /= denom;
    }
    // all-zero mask: weights stay exactly zero
    n.mask = std::move(mask);
    check_finite("masked_softmax", n.val);
    return push(std::move(n));
}

int Tape::weighted_sum(int matrix, int weights) {
    const Tensor& E = value(matrix);
    const Tensor& W = value(weights);
    if (W.cols != 1 || W.rows != E.rows) shape_error("weighted_sum", E, W);
    Node n;
    n.op = Op::WeightedSum;
    n.inputs = {matrix, weights};
    n.val = Tensor::zeros(1, E.cols);
    for (int r = 0; r < E.rows; ++r) {
        const double w = W.v[static_cast<size_t>(r)];
        if (w == 0.0) continue;
        const double* row = &E.v[static_cast<size_t>(r) * E.cols];
        for (int c = 0; c < E.cols; ++c) n.val.v[static_cast<size_t>(c)] += w * row[c];
    }
    check_finite("weighted_sum", n.val);
    return push(std::move(n));
}

int Tape::select_col(int a, int col) {
    const Tensor& A = value(a);
    if (A.rows != 1 || col < 0 || col >= A.cols) {
        throw std::runtime_error("select_col " + std::to_string(col) +
                                 " invalid for " + A.shape_str());
    }
    Node n;
    n.op = Op::SelectCol;
    n.inputs = {a};
    n.ids = {col};
    n.val = Tensor::zeros(1, 1);
    n.val.v[0] = A.v[static_cast<size_t>(col)];
    return push(std::move(n));
}

int Tape::bce_loss(int predictions, std::vector<double> labels,
                   std::vector<uint8_t> mask) {
    const Tensor& P = value(predictions);
    if (P.rows != 1 || static_cast<size_t>(P.cols) != labels.size() ||
        labels.size() != mask.size()) {
        throw std::runtime_error("bce_loss shape mismatch for " + P.shape_str());
    }
    Node n;
    n.op = Op::Bce;
    n.inputs = {predictions};
    n.val = Tensor::zeros(1, 1);
    double total = 0.0;
    double count = 0.0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (!mask[i]) continue;
        const double p = std::clamp(P.v[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
        total += labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
        count += 1.0;
    }
    n.val.v[0] = count > 0.0 ? -total / count : 0.0;
    n.labels = std::move(labels);
    n.mask = std::move(mask);
    check_finite("bce_loss", n.val);
    return push(std::move(n));
}

void Tape::backward(int root) {
    const Tensor& root_val = value(root);
    if (root_val.rows != 1 || root_val.cols != 1) {
        throw std::runtime_error("backward root must be a scalar, got " +
                                 root_val.shape_str());
    }
    grad_of(root).v[0] = 1.0;

    for (int id = root; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.v.empty()) continue;  // nothing flowed into this node
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::Input:
            case Op::Param:
                break;
            case Op::MatMul: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                Tensor& ga = grad_of(n.inputs[0]);
                Tensor& gb = grad_of(n.inputs[1]);
                // dA = g . B^T
                for (int i = 0; i < A.rows; ++i) {
                    const double* g_row = &g.v[static_cast<size_t>(i) * g.cols];
                    double* ga_row = &ga.v[static_cast<size_t>(i) * A.cols];
                    for (int k = 0; k < A.cols; ++k) {
                        const double* b_row = &B.v[static_cast<size_t>(k) * B.cols];
                        double s = 0.0;
                        for (int j = 0; j < B.cols; ++j) s += g_row[j] * b_row[j];
                        ga_row[k] += s;
                    }
                }
                // dB = A^T . g
                for (int k = 0; k < A.cols; ++k) {
                    double* gb_row = &gb.v[static_cast<size_t>(k) * B.cols];
                    for (int i = 0; i < A.rows; ++i) {
                        const double aik = A.v[static_cast<size_t>(i) * A.cols + k];
                        if (aik == 0.0) continue;
                        const double* g_row = &g.v[static_cast<size_t>(i) * g.cols];
                        for (int j = 0; j < B.cols; ++j) gb_row[j] += aik * g_row[j];
                    }
                }
                break;
            }
            case Op::Add: {
                Tensor& ga = grad_of(n.inputs[0]);
                Tensor& gb = grad_of(n.inputs[1]);
                for (size_t i = 0; i < g.v.size(); ++i) {
                    ga.v[i] += g.v[i];
                    gb.v[i] += g.v[i];
                }
                break;
            }
            case Op::Mul: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                Tensor& ga = grad_of(n.inputs[0]);
                Tensor& gb = grad_of(n.inputs[1]);
                for (size_t i = 0; i < g.v.size(); ++i) {
                    ga.v[i] += g.v[i] * B.v[i];
                    gb.v[i] += g.v[i] * A.v[i];
                }
                break;
            }
            case Op::Tanh: {
                Tensor& ga = grad_of(n.inputs[0]);
                for (size_t i = 0; i < g.v.size(); ++i) {
                    ga.v[i] += g.v[i] * (1.0 - n.val.v[i] * n.val.v[i]);
                }
                break;
            }
            case Op::Sigmoid: {
                Tensor& ga = grad_of(n.inputs[0]);
                for (size_t i = 0; i < g.v.size(); ++i) {
                    ga.v[i] += g.v[i] * n.val.v[i] * (1.0 - n.val.v[i]);
                }
                break;
            }
            case Op::Concat: {
                int offset = 0;
                for (int p : n.inputs) {
                    const Tensor& part = value(p);
                    Tensor& gp = grad_of(p);
                    for (int r = 0; r < part.rows; ++r) {
                        const double* src =
                            &g.v[static_cast<size_t>(r) * g.cols + offset];
                        double* dst = &gp.v[static_cast<size_t>(r) * part.cols];
                        for (int c = 0; c < part.cols; ++c) dst[c] += src[c];
                    }
                    offset += part.cols;
                }
                break;
            }
            case Op::SliceCols: {
                const Tensor& A = value(n.inputs[0]);
                Tensor& ga = grad_of(n.inputs[0]);
                const int begin = n.ids[0];
                for (int r = 0; r < n.val.rows; ++r) {
                    const double* src = &g.v[static_cast<size_t>(r) * g.cols];
                    double* dst = &ga.v[static_cast<size_t>(r) * A.cols + begin];
                    for (int c = 0; c < n.val.cols; ++c) dst[c] += src[c];
                }
                break;
            }
            case Op::TileRows: {
                Tensor& ga = grad_of(n.inputs[0]);
                for (int r = 0; r < n.tile_copies; ++r) {
                    const double* src = &g.v[static_cast<size_t>(r) * g.cols];
                    for (int c = 0; c < g.cols; ++c) ga.v[static_cast<size_t>(c)] += src[c];
                }
                break;
            }
            case Op::Lookup: {
                Tensor& gt = grad_of(n.inputs[0]);
                for (size_t r = 0; r < n.ids.size(); ++r) {
                    const double* src = &g.v[r * static_cast<size_t>(g.cols)];
                    double* dst = &gt.v[static_cast<size_t>(n.ids[r]) * g.cols];
                    for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
                }
                break;
            }
            case Op::MaskedSoftmax: {
                Tensor& gl = grad_of(n.inputs[0]);
                double dot = 0.0;
                for (size_t r = 0; r < n.mask.size(); ++r) {
                    if (n.mask[r]) dot += g.v[r] * n.val.v[r];
                }
                for (size_t r = 0; r < n.mask.size(); ++r) {
                    if (!n.mask[r]) continue;  // masked logits get exactly zero
                    gl.v[r] += n.val.v[r] * (g.v[r] - dot);
                }
                break;
            }
            case Op::WeightedSum: {
                const Tensor& E = value(n.inputs[0]);
                const Tensor& W = value(n.inputs[1]);
                Tensor& ge = grad_of(n.inputs[0]);
                Tensor& gw = grad_of(n.inputs[1]);
                for (int r = 0; r < E.rows; ++r) {
                    const double w = W.v[static_cast<size_t>(r)];
                    const double* e_row = &E.v[static_cast<size_t>(r) * E.cols];
                    double* ge_row = &ge.v[static_cast<size_t>(r) * E.cols];
                    double s = 0.0;
                    for (int c = 0; c < E.cols; ++c) {
                        ge_row[c] += w * g.v[static_cast<size_t>(c)];
                        s += e_row[c] * g.v[static_cast<size_t>(c)];
                    }
                    gw.v[static_cast<size_t>(r)] += s;
                }
                break;
            }
            case Op::SelectCol: {
                Tensor& ga = grad_of(n.inputs[0]);
                ga.v[static_cast<size_t>(n.ids[0])] += g.v[0];
                break;
            }
            case Op::Bce: {
                const Tensor& P = value(n.inputs[0]);
                Tensor& gp = grad_of(n.inputs[0]);
                double count = 0.0;
                for (uint8_t m : n.mask) count += m ? 1.0 : 0.0;
                if (count == 0.0) break;
                const double scale = g.v[0] / count;
                for (size_t i = 0; i < n.labels.size(); ++i) {
                    if (!n.mask[i]) continue;
                    const double raw = P.v[i];
                    if (raw < kProbabilityClamp || raw > 1.0 - kProbabilityClamp) {
                        continue;  // clamp region: flat
                    }
                    gp.v[i] += scale * (raw - n.labels[i]) / (raw * (1.0 - raw));
                }
                break;
            }
        }
    }
}

void Adam::step(std::map<std::string, Tensor>& params,
                const std::map<std::string, Tensor>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        if (!g.finite()) {
            throw std::runtime_error("non-finite gradient for parameter " + name);
        }
        Tensor& m = m_.try_emplace(name, Tensor::zeros(p.rows, p.cols)).first->second;
        Tensor& v = v_.try_emplace(name, Tensor::zeros(p.rows, p.cols)).first->second;
        for (size_t i = 0; i < p.v.size(); ++i) {
            m.v[i] = beta1_ * m.v[i] + (1.0 - beta1_) * g.v[i];
            v.v[i] = beta2_ * v.v[i] + (1.0 - beta2_) * g.v[i] * g.v[i];
            const double m_hat = m.v[i] / bc1;
            const double v_hat = v.v[i] / bc2;
            p.v[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm) {
    double total = 0.0;
    for (const auto& [name, g] : grads) total += g.norm2();
    const double norm = std::sqrt(total);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (auto& [name, g] : grads) {
            for (double& x : g.v) x *= scale;
        }
    }
    return norm;
}

}  // namespace codedkt::autodiff
