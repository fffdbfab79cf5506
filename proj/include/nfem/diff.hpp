#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace nfem::fem {
class FemSystem;
}

namespace nfem::diff {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// Logical shape. Storage is always a row-major matrix with shape[0] rows and
// shape[1] * shape[2] columns (channels outer, positions inner).
struct Shape {
    std::array<Index, 3> dims{0, 0, 1};
    int rank = 2;

    Index rows() const { return dims[0]; }
    Index cols() const { return dims[1] * dims[2]; }
    std::string str() const;
    bool operator==(const Shape&) const = default;
};

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Matrix value;
    Matrix grad;  // empty until something flows into it
    Shape shape;
    bool requires_grad = false;
    bool leaf = true;
    const char* op = "leaf";
    std::vector<Var> parents;
    std::function<void(Node&)> backward;

    // grad += g, allocating on first use
    void accumulate(const Matrix& g);
    Matrix& grad_buffer();
    bool has_grad() const { return grad.size() > 0; }
};

Var constant(Matrix value);
Var constant(Matrix value, Shape shape);
Var parameter(Matrix value);
Var scalar(double v);
Var column(const std::vector<double>& v);

// Records operations while alive. Nested tapes are allowed; the innermost is
// active. Without an active tape every op runs in no-grad mode.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(const Var& v);
    std::size_t size() const { return nodes_.size(); }
    // Populates grad on every parameter the loss depends on.
    void backward(const Var& loss);

    static Tape* active();

private:
    std::vector<Var> nodes_;
    Tape* previous_;
};

// Suspends recording inside a tape scope.
class NoGrad {
public:
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

private:
    Tape* saved_;
};

void zero_grad(const std::vector<Var>& params);

// Elementwise ops broadcast a (1 x C), (R x 1) or (1 x 1) operand.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var exp(const Var& a);
Var relu(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);

Var matmul(const Var& a, const Var& b);
// x W + b with b a row (or null).
Var linear(const Var& x, const Var& W, const Var& b);

Var sum(const Var& a);   // -> 1 x 1
Var mean(const Var& a);  // -> 1 x 1
Var sum_rows(const Var& a);  // column sums -> 1 x C

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
Var reshape(const Var& a, Shape shape);

// out[i] = a[idx[i]]
Var gather_rows(const Var& a, const std::vector<int>& idx);
// out[idx[i]] += a[i], out has `rows` rows
Var scatter_add_rows(const Var& a, const std::vector<int>& idx, Index rows);
// Per-segment mean of rows; segments with no rows give zero.
Var segment_mean(const Var& a, const std::vector<int>& segment, Index segments);

// Sum of row-gathered terms; a null index means identity (all terms then
// need the output row count).
struct IndexedTerm {
    Var value;
    const std::vector<int>* index = nullptr;
};
Var indexed_sum(const std::vector<IndexedTerm>& terms, Index rows);

// Per-row normalization over the feature axis, then gamma * xhat + beta.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

inline Index conv1d_output_length(Index L_in, Index kernel, Index stride) {
    return (L_in - kernel) / stride + 1;
}
// x: (N, C_in, L) ; W: (C_out, C_in * K) ; b: (1, C_out) -> (N, C_out, L_out). No padding.
Var conv1d(const Var& x, const Var& W, const Var& b, Index kernel, Index stride);

Var detach(const Var& a);

// Generic node: backward receives the upstream gradient and the inputs.
using CustomBackward = std::function<void(const Matrix& grad_out, const std::vector<Var>& inputs)>;
Var custom(const char* name, const std::vector<Var>& inputs, Matrix value, CustomBackward backward);

// Free-node FEM residual r(T_new, T_old) (num_free x 1); both inputs are
// num_nodes x 1 columns.
Var fem_residual(const fem::FemSystem& sys, const Var& T_new, const Var& T_old, double t_new);

} // namespace nfem::diff
