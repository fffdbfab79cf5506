#include "nfem/diff.hpp"

#include "nfem/error.hpp"
#include "nfem/fem.hpp"

#include <cmath>
#include <sstream>

namespace nfem::diff {

namespace {

thread_local Tape* g_active = nullptr;

Shape shape2(Index r, Index c) {
    Shape s;
    s.dims = {r, c, 1};
    s.rank = 2;
    return s;
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    fail(ErrorCategory::shape, std::string("shape mismatch in ") + op + ": " + a.str() + " vs " + b.str());
}

[[noreturn]] void shape_error(const char* op, const std::string& what) {
    fail(ErrorCategory::shape, std::string("shape mismatch in ") + op + ": " + what);
}

bool any_requires_grad(const std::vector<Var>& parents) {
    for (const auto& p : parents)
        if (p && p->requires_grad) return true;
    return false;
}

Var make_node(const char* op, Matrix value, Shape shape, std::vector<Var> parents,
              std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->shape = shape;
    n->op = op;
    n->leaf = false;
    Tape* tape = g_active;
    if (tape && any_requires_grad(parents)) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward = std::move(backward);
        tape->record(n);
    }
    return n;
}

Var make_node(const char* op, Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    Shape s = shape2(value.rows(), value.cols());
    return make_node(op, std::move(value), s, std::move(parents), std::move(backward));
}

// Broadcasting of elementwise binary ops.
struct Broadcast {
    Index rows = 0;
    Index cols = 0;
    Shape shape;
};

Broadcast broadcast(const char* op, const Var& a, const Var& b) {
    Index ra = a->value.rows(), ca = a->value.cols(), rb = b->value.rows(), cb = b->value.cols();
    Broadcast out;
    out.rows = std::max(ra, rb);
    out.cols = std::max(ca, cb);
    auto ok = [&](Index r, Index c) { return (r == out.rows || r == 1) && (c == out.cols || c == 1); };
    if (!ok(ra, ca) || !ok(rb, cb)) shape_error(op, a->shape, b->shape);
    if (ra == rb && ca == cb)
        out.shape = a->shape;
    else if (ra == out.rows && ca == out.cols)
        out.shape = a->shape;
    else if (rb == out.rows && cb == out.cols)
        out.shape = b->shape;
    else
        out.shape = shape2(out.rows, out.cols);
    return out;
}

Matrix expand(const Matrix& m, Index rows, Index cols) {
    if (m.rows() == rows && m.cols() == cols) return m;
    if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(rows, cols, m(0, 0));
    if (m.rows() == 1) return m.replicate(rows, 1);
    return m.replicate(1, cols);
}

Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
    if (rows == 1) return g.colwise().sum();
    return g.rowwise().sum();
}

// Shared elementwise binary driver; grad functions get the expanded operands.
template <class F, class GA, class GB>
Var binary(const char* op, const Var& a, const Var& b, F f, GA ga, GB gb) {
    Broadcast bc = broadcast(op, a, b);
    const bool same_a = a->value.rows() == bc.rows && a->value.cols() == bc.cols;
    const bool same_b = b->value.rows() == bc.rows && b->value.cols() == bc.cols;
    Matrix value;
    if (same_a && same_b)
        value = f(a->value.array(), b->value.array()).matrix();
    else {
        Matrix ea = same_a ? Matrix() : expand(a->value, bc.rows, bc.cols);
        Matrix eb = same_b ? Matrix() : expand(b->value, bc.rows, bc.cols);
        value = f((same_a ? a->value : ea).array(), (same_b ? b->value : eb).array()).matrix();
    }
    return make_node(op, std::move(value), bc.shape, {a, b}, [ga, gb, rows = bc.rows, cols = bc.cols](Node& self) {
        const Var& pa = self.parents[0];
        const Var& pb = self.parents[1];
        Matrix ea = expand(pa->value, rows, cols);
        Matrix eb = expand(pb->value, rows, cols);
        if (pa->requires_grad) {
            Matrix g = ga(self.grad.array(), ea.array(), eb.array()).matrix();
            pa->accumulate(reduce_to(g, pa->value.rows(), pa->value.cols()));
        }
        if (pb->requires_grad) {
            Matrix g = gb(self.grad.array(), ea.array(), eb.array()).matrix();
            pb->accumulate(reduce_to(g, pb->value.rows(), pb->value.cols()));
        }
    });
}

template <class F, class G>
Var unary(const char* op, const Var& a, F f, G g) {
    Matrix value = f(a->value.array()).matrix();
    return make_node(op, std::move(value), a->shape, {a}, [g](Node& self) {
        const Var& p = self.parents[0];
        p->accumulate(g(self.grad.array(), p->value.array(), self.value.array()).matrix());
    });
}

void check_index(const char* op, const std::vector<int>& idx, Index rows) {
    for (int i : idx)
        if (i < 0 || i >= rows)
            fail(ErrorCategory::shape, std::string(op) + ": index " + std::to_string(i) + " out of range for " +
                                           std::to_string(rows) + " rows");
}

} // namespace

std::string Shape::str() const {
    std::ostringstream os;
    os << '(' << dims[0] << ", " << dims[1];
    if (rank == 3) os << ", " << dims[2];
    os << ')';
    return os.str();
}

void Node::accumulate(const Matrix& g) {
    if (!requires_grad) return;
    if (g.rows() != value.rows() || g.cols() != value.cols())
        fail(ErrorCategory::internal, std::string("gradient shape mismatch at ") + op);
    if (grad.size() == 0)
        grad = g;
    else
        grad += g;
}

Matrix& Node::grad_buffer() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
}

Var constant(Matrix value) {
    Shape s = shape2(value.rows(), value.cols());
    return constant(std::move(value), s);
}

Var constant(Matrix value, Shape shape) {
    if (shape.rows() != value.rows() || shape.cols() != value.cols())
        shape_error("constant", shape.str() + " for storage " + shape2(value.rows(), value.cols()).str());
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->shape = shape;
    return n;
}

Var parameter(Matrix value) {
    auto n = constant(std::move(value));
    n->requires_grad = true;
    return n;
}

Var scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

Var column(const std::vector<double>& v) {
    Matrix m(static_cast<Index>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = v[i];
    return constant(std::move(m));
}

Tape::Tape() : previous_(g_active) { g_active = this; }

Tape::~Tape() { g_active = previous_; }

Tape* Tape::active() { return g_active; }

void Tape::record(const Var& v) { nodes_.push_back(v); }

void Tape::backward(const Var& loss) {
    if (!loss) fail(ErrorCategory::usage, "backward: null loss");
    if (loss->value.rows() != 1 || loss->value.cols() != 1)
        shape_error("backward", "loss must be scalar, got " + loss->shape.str());
    if (!loss->requires_grad || loss->leaf)
        fail(ErrorCategory::usage, "backward: loss is detached from every parameter (no gradient path on the tape)");
    loss->grad = Matrix::Constant(1, 1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (n.has_grad() && n.backward) n.backward(n);
    }
}

NoGrad::NoGrad() : saved_(g_active) { g_active = nullptr; }

NoGrad::~NoGrad() { g_active = saved_; }

void zero_grad(const std::vector<Var>& params) {
    for (const auto& p : params) p->grad.resize(0, 0);
}

Var add(const Var& a, const Var& b) {
    return binary(
        "add", a, b, [](const auto& x, const auto& y) { return x + y; },
        [](const auto& g, const auto&, const auto&) { return g; },
        [](const auto& g, const auto&, const auto&) { return g; });
}

Var sub(const Var& a, const Var& b) {
    return binary(
        "sub", a, b, [](const auto& x, const auto& y) { return x - y; },
        [](const auto& g, const auto&, const auto&) { return g; },
        [](const auto& g, const auto&, const auto&) { return -g; });
}

Var mul(const Var& a, const Var& b) {
    return binary(
        "mul", a, b, [](const auto& x, const auto& y) { return x * y; },
        [](const auto& g, const auto&, const auto& y) { return g * y; },
        [](const auto& g, const auto& x, const auto&) { return g * x; });
}

Var div(const Var& a, const Var& b) {
    return binary(
        "div", a, b, [](const auto& x, const auto& y) { return x / y; },
        [](const auto& g, const auto&, const auto& y) { return g / y; },
        [](const auto& g, const auto& x, const auto& y) { return -g * x / (y * y); });
}

Var scale(const Var& a, double s) {
    return unary(
        "scale", a, [s](const auto& x) { return x * s; },
        [s](const auto& g, const auto&, const auto&) { return g * s; });
}

Var add_scalar(const Var& a, double s) {
    return unary(
        "add_scalar", a, [s](const auto& x) { return x + s; },
        [](const auto& g, const auto&, const auto&) { return g; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var exp(const Var& a) {
    return unary(
        "exp", a, [](const auto& x) { return x.exp(); },
        [](const auto& g, const auto&, const auto& y) { return g * y; });
}

Var relu(const Var& a) {
    return unary(
        "relu", a, [](const auto& x) { return x.max(0.0); },
        [](const auto& g, const auto& x, const auto&) { return (x > 0.0).select(g, 0.0); });
}

Var square(const Var& a) {
    return unary(
        "square", a, [](const auto& x) { return x.square(); },
        [](const auto& g, const auto& x, const auto&) { return 2.0 * g * x; });
}

Var sqrt(const Var& a) {
    return unary(
        "sqrt", a, [](const auto& x) { return x.sqrt(); },
        [](const auto& g, const auto&, const auto& y) { return g / (2.0 * y); });
}

Var matmul(const Var& a, const Var& b) {
    if (a->value.cols() != b->value.rows()) shape_error("matmul", a->shape, b->shape);
    Matrix value = a->value * b->value;
    return make_node("matmul", std::move(value), {a, b}, [](Node& self) {
        const Var& pa = self.parents[0];
        const Var& pb = self.parents[1];
        if (pa->requires_grad) pa->accumulate(self.grad * pb->value.transpose());
        if (pb->requires_grad) pb->accumulate(pa->value.transpose() * self.grad);
    });
}

Var linear(const Var& x, const Var& W, const Var& b) {
    if (x->value.cols() != W->value.rows()) shape_error("linear", x->shape, W->shape);
    if (b && (b->value.rows() != 1 || b->value.cols() != W->value.cols())) shape_error("linear bias", W->shape, b->shape);
    Matrix value = x->value * W->value;
    if (b) value.rowwise() += b->value.row(0);
    std::vector<Var> parents{x, W};
    if (b) parents.push_back(b);
    return make_node("linear", std::move(value), std::move(parents), [](Node& self) {
        const Var& px = self.parents[0];
        const Var& pw = self.parents[1];
        if (px->requires_grad) px->accumulate(self.grad * pw->value.transpose());
        if (pw->requires_grad) pw->accumulate(px->value.transpose() * self.grad);
        if (self.parents.size() > 2 && self.parents[2]->requires_grad)
            self.parents[2]->accumulate(self.grad.colwise().sum());
    });
}

Var sum(const Var& a) {
    Matrix value = Matrix::Constant(1, 1, a->value.sum());
    return make_node("sum", std::move(value), {a}, [](Node& self) {
        const Var& p = self.parents[0];
        p->accumulate(Matrix::Constant(p->value.rows(), p->value.cols(), self.grad(0, 0)));
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a->value.size());
    if (n == 0) shape_error("mean", "empty tensor " + a->shape.str());
    Matrix value = Matrix::Constant(1, 1, a->value.sum() / n);
    return make_node("mean", std::move(value), {a}, [n](Node& self) {
        const Var& p = self.parents[0];
        p->accumulate(Matrix::Constant(p->value.rows(), p->value.cols(), self.grad(0, 0) / n));
    });
}

Var sum_rows(const Var& a) {
    Matrix value = a->value.colwise().sum();
    return make_node("sum_rows", std::move(value), {a}, [](Node& self) {
        const Var& p = self.parents[0];
        p->accumulate(self.grad.replicate(p->value.rows(), 1));
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) shape_error("concat_cols", "no inputs");
    const Index rows = parts[0]->value.rows();
    Index cols = 0;
    for (const auto& p : parts) {
        if (p->value.rows() != rows) shape_error("concat_cols", parts[0]->shape, p->shape);
        cols += p->value.cols();
    }
    Matrix value(rows, cols);
    Index c = 0;
    for (const auto& p : parts) {
        value.middleCols(c, p->value.cols()) = p->value;
        c += p->value.cols();
    }
    return make_node("concat_cols", std::move(value), parts, [](Node& self) {
        Index c = 0;
        for (const auto& p : self.parents) {
            if (p->requires_grad) p->accumulate(self.grad.middleCols(c, p->value.cols()));
            c += p->value.cols();
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) shape_error("concat_rows", "no inputs");
    const Index cols = parts[0]->value.cols();
    Index rows = 0;
    for (const auto& p : parts) {
        if (p->value.cols() != cols) shape_error("concat_rows", parts[0]->shape, p->shape);
        rows += p->value.rows();
    }
    Matrix value(rows, cols);
    Index r = 0;
    for (const auto& p : parts) {
        value.middleRows(r, p->value.rows()) = p->value;
        r += p->value.rows();
    }
    Shape s = parts[0]->shape;
    s.dims[0] = rows;
    return make_node("concat_rows", std::move(value), s, parts, [](Node& self) {
        Index r = 0;
        for (const auto& p : self.parents) {
            if (p->requires_grad) p->accumulate(self.grad.middleRows(r, p->value.rows()));
            r += p->value.rows();
        }
    });
}

Var slice_rows(const Var& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a->value.rows())
        shape_error("slice_rows", "rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                                      ") of " + a->shape.str());
    Matrix value = a->value.middleRows(start, count);
    Shape s = a->shape;
    s.dims[0] = count;
    return make_node("slice_rows", std::move(value), s, {a}, [start, count](Node& self) {
        const Var& p = self.parents[0];
        Matrix& g = p->grad_buffer();
        g.middleRows(start, count) += self.grad;
    });
}

Var slice_cols(const Var& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a->value.cols())
        shape_error("slice_cols", "cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                                      ") of " + a->shape.str());
    Matrix value = a->value.middleCols(start, count);
    return make_node("slice_cols", std::move(value), {a}, [start, count](Node& self) {
        const Var& p = self.parents[0];
        Matrix& g = p->grad_buffer();
        g.middleCols(start, count) += self.grad;
    });
}

Var reshape(const Var& a, Shape shape) {
    if (shape.rows() * shape.cols() != a->value.size()) shape_error("reshape", a->shape, shape);
    Matrix value = Eigen::Map<const Matrix>(a->value.data(), shape.rows(), shape.cols());
    return make_node("reshape", std::move(value), shape, {a}, [](Node& self) {
        const Var& p = self.parents[0];
        p->accumulate(Eigen::Map<const Matrix>(self.grad.data(), p->value.rows(), p->value.cols()));
    });
}

Var gather_rows(const Var& a, const std::vector<int>& idx) {
    check_index("gather_rows", idx, a->value.rows());
    const Index n = static_cast<Index>(idx.size());
    Matrix value(n, a->value.cols());
    for (Index i = 0; i < n; ++i) value.row(i) = a->value.row(idx[static_cast<std::size_t>(i)]);
    return make_node("gather_rows", std::move(value), {a}, [idx](Node& self) {
        const Var& p = self.parents[0];
        Matrix& g = p->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    });
}

Var scatter_add_rows(const Var& a, const std::vector<int>& idx, Index rows) {
    if (static_cast<Index>(idx.size()) != a->value.rows())
        shape_error("scatter_add_rows", a->shape.str() + " with " + std::to_string(idx.size()) + " indices");
    check_index("scatter_add_rows", idx, rows);
    Matrix value = Matrix::Zero(rows, a->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) value.row(idx[i]) += a->value.row(static_cast<Index>(i));
    return make_node("scatter_add_rows", std::move(value), {a}, [idx](Node& self) {
        const Var& p = self.parents[0];
        Matrix g(p->value.rows(), p->value.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) g.row(static_cast<Index>(i)) = self.grad.row(idx[i]);
        p->accumulate(g);
    });
}

Var segment_mean(const Var& a, const std::vector<int>& segment, Index segments) {
    if (static_cast<Index>(segment.size()) != a->value.rows())
        shape_error("segment_mean", a->shape.str() + " with " + std::to_string(segment.size()) + " segment ids");
    check_index("segment_mean", segment, segments);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(segments);
    for (int s : segment) inv[s] += 1.0;
    for (Index s = 0; s < segments; ++s) inv[s] = inv[s] > 0 ? 1.0 / inv[s] : 0.0;
    Matrix value = Matrix::Zero(segments, a->value.cols());
    for (std::size_t i = 0; i < segment.size(); ++i) value.row(segment[i]) += a->value.row(static_cast<Index>(i));
    for (Index s = 0; s < segments; ++s) value.row(s) *= inv[s];
    return make_node("segment_mean", std::move(value), {a}, [segment, inv](Node& self) {
        const Var& p = self.parents[0];
        Matrix g(p->value.rows(), p->value.cols());
        for (std::size_t i = 0; i < segment.size(); ++i)
            g.row(static_cast<Index>(i)) = self.grad.row(segment[i]) * inv[segment[i]];
        p->accumulate(g);
    });
}

Var indexed_sum(const std::vector<IndexedTerm>& terms, Index rows) {
    if (terms.empty()) shape_error("indexed_sum", "no terms");
    const Index cols = terms[0].value->value.cols();
    std::vector<Var> parents;
    std::vector<std::vector<int>> indices;
    std::vector<bool> identity;
    for (const auto& t : terms) {
        if (t.value->value.cols() != cols) shape_error("indexed_sum", terms[0].value->shape, t.value->shape);
        if (t.index) {
            if (static_cast<Index>(t.index->size()) != rows)
                shape_error("indexed_sum", std::to_string(t.index->size()) + " indices for " + std::to_string(rows) +
                                               " rows");
            check_index("indexed_sum", *t.index, t.value->value.rows());
            indices.push_back(*t.index);
            identity.push_back(false);
        } else {
            if (t.value->value.rows() != rows)
                shape_error("indexed_sum", t.value->shape.str() + " for " + std::to_string(rows) + " rows");
            indices.emplace_back();
            identity.push_back(true);
        }
        parents.push_back(t.value);
    }
    Matrix value = Matrix::Zero(rows, cols);
    for (std::size_t k = 0; k < terms.size(); ++k) {
        const Matrix& v = parents[k]->value;
        if (identity[k])
            value += v;
        else
            for (Index i = 0; i < rows; ++i) value.row(i) += v.row(indices[k][static_cast<std::size_t>(i)]);
    }
    return make_node("indexed_sum", std::move(value), std::move(parents),
                     [indices = std::move(indices), identity = std::move(identity)](Node& self) {
                         for (std::size_t k = 0; k < self.parents.size(); ++k) {
                             const Var& p = self.parents[k];
                             if (!p->requires_grad) continue;
                             if (identity[k]) {
                                 p->accumulate(self.grad);
                                 continue;
                             }
                             Matrix& g = p->grad_buffer();
                             const auto& idx = indices[k];
                             for (std::size_t i = 0; i < idx.size(); ++i)
                                 g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
                         }
                     });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Index R = x->value.rows(), C = x->value.cols();
    if (gamma && (gamma->value.rows() != 1 || gamma->value.cols() != C)) shape_error("layer_norm", x->shape, gamma->shape);
    if (beta && (beta->value.rows() != 1 || beta->value.cols() != C)) shape_error("layer_norm", x->shape, beta->shape);
    Matrix xhat(R, C);
    Eigen::VectorXd inv(R);
    for (Index i = 0; i < R; ++i) {
        const auto row = x->value.row(i).array();
        const double mu = row.mean();
        const double var = (row - mu).square().mean();
        inv[i] = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = ((row - mu) * inv[i]).matrix();
    }
    Matrix value = xhat;
    if (gamma) value.array().rowwise() *= gamma->value.row(0).array();
    if (beta) value.rowwise() += beta->value.row(0);
    std::vector<Var> parents{x, gamma, beta};
    const bool has_gamma = static_cast<bool>(gamma), has_beta = static_cast<bool>(beta);
    if (!has_beta) parents.pop_back();
    if (!has_gamma) parents.erase(parents.begin() + 1);
    return make_node("layer_norm", std::move(value), x->shape, std::move(parents),
                     [xhat = std::move(xhat), inv = std::move(inv), has_gamma, has_beta](Node& self) {
                         const Var& px = self.parents[0];
                         const Var* pg = has_gamma ? &self.parents[1] : nullptr;
                         const Var* pb = has_beta ? &self.parents[has_gamma ? 2 : 1] : nullptr;
                         if (pg && (*pg)->requires_grad)
                             (*pg)->accumulate((self.grad.array() * xhat.array()).colwise().sum().matrix());
                         if (pb && (*pb)->requires_grad) (*pb)->accumulate(self.grad.colwise().sum());
                         if (!px->requires_grad) return;
                         Matrix dxhat = self.grad;
                         if (pg) dxhat.array().rowwise() *= (*pg)->value.row(0).array();
                         const double C = static_cast<double>(xhat.cols());
                         Matrix dx(xhat.rows(), xhat.cols());
                         for (Index i = 0; i < xhat.rows(); ++i) {
                             const double s1 = dxhat.row(i).sum();
                             const double s2 = dxhat.row(i).dot(xhat.row(i));
                             dx.row(i) = (inv[i] / C) * (C * dxhat.row(i).array() - s1 - xhat.row(i).array() * s2).matrix();
                         }
                         px->accumulate(dx);
                     });
}

Var conv1d(const Var& x, const Var& W, const Var& b, Index kernel, Index stride) {
    if (kernel < 1 || stride < 1) shape_error("conv1d", "kernel and stride must be positive");
    const Index C_out = W->value.rows();
    if (W->value.cols() % kernel != 0) shape_error("conv1d", x->shape, W->shape);
    const Index C_in = W->value.cols() / kernel;
    const Index N = x->value.rows();
    Index L = 0;
    if (x->shape.rank == 3) {
        if (x->shape.dims[1] != C_in) shape_error("conv1d", x->shape, W->shape);
        L = x->shape.dims[2];
    } else {
        if (x->value.cols() % C_in != 0) shape_error("conv1d", x->shape, W->shape);
        L = x->value.cols() / C_in;
    }
    if (L < kernel) shape_error("conv1d", "input length " + std::to_string(L) + " shorter than kernel " + std::to_string(kernel));
    if (b && (b->value.rows() != 1 || b->value.cols() != C_out)) shape_error("conv1d bias", W->shape, b->shape);
    const Index L_out = conv1d_output_length(L, kernel, stride);
    const Index K = C_in * kernel;

    Matrix patches(N * L_out, K);
    for (Index n = 0; n < N; ++n)
        for (Index j = 0; j < L_out; ++j)
            for (Index c = 0; c < C_in; ++c)
                patches.row(n * L_out + j).segment(c * kernel, kernel) = x->value.row(n).segment(c * L + j * stride, kernel);
    Matrix Y = patches * W->value.transpose();  // (N*L_out, C_out)
    if (b) Y.rowwise() += b->value.row(0);
    Matrix value(N, C_out * L_out);
    for (Index n = 0; n < N; ++n)
        for (Index j = 0; j < L_out; ++j)
            for (Index o = 0; o < C_out; ++o) value(n, o * L_out + j) = Y(n * L_out + j, o);

    Shape s;
    s.dims = {N, C_out, L_out};
    s.rank = 3;
    std::vector<Var> parents{x, W};
    if (b) parents.push_back(b);
    return make_node("conv1d", std::move(value), s, std::move(parents),
                     [patches = std::move(patches), N, C_in, C_out, L, L_out, kernel, stride](Node& self) {
                         Matrix dY(N * L_out, C_out);
                         for (Index n = 0; n < N; ++n)
                             for (Index j = 0; j < L_out; ++j)
                                 for (Index o = 0; o < C_out; ++o) dY(n * L_out + j, o) = self.grad(n, o * L_out + j);
                         const Var& px = self.parents[0];
                         const Var& pw = self.parents[1];
                         if (pw->requires_grad) pw->accumulate(dY.transpose() * patches);
                         if (self.parents.size() > 2 && self.parents[2]->requires_grad)
                             self.parents[2]->accumulate(dY.colwise().sum());
                         if (!px->requires_grad) return;
                         Matrix dP = dY * pw->value;  // (N*L_out, C_in*kernel)
                         Matrix& g = px->grad_buffer();
                         for (Index n = 0; n < N; ++n)
                             for (Index j = 0; j < L_out; ++j)
                                 for (Index c = 0; c < C_in; ++c)
                                     g.row(n).segment(c * L + j * stride, kernel) +=
                                         dP.row(n * L_out + j).segment(c * kernel, kernel);
                     });
}

Var detach(const Var& a) { return constant(a->value, a->shape); }

Var custom(const char* name, const std::vector<Var>& inputs, Matrix value, CustomBackward backward) {
    return make_node(name, std::move(value), inputs,
                     [bw = std::move(backward)](Node& self) { bw(self.grad, self.parents); });
}

Var fem_residual(const fem::FemSystem& sys, const Var& T_new, const Var& T_old, double t_new) {
    const Index n = static_cast<Index>(sys.num_nodes());
    if (T_new->value.rows() != n || T_new->value.cols() != 1)
        shape_error("fem_residual", T_new->shape.str() + " for " + std::to_string(n) + " nodes");
    if (T_old->value.rows() != n || T_old->value.cols() != 1)
        shape_error("fem_residual", T_old->shape.str() + " for " + std::to_string(n) + " nodes");
    std::span<const double> tn(T_new->value.data(), static_cast<std::size_t>(n));
    std::span<const double> to(T_old->value.data(), static_cast<std::size_t>(n));
    std::vector<double> r = sys.residual(tn, to, t_new);
    Matrix value(static_cast<Index>(r.size()), 1);
    for (std::size_t i = 0; i < r.size(); ++i) value(static_cast<Index>(i), 0) = r[i];
    return make_node("fem_residual", std::move(value), {T_new, T_old}, [&sys, t_new, n](Node& self) {
        const Var& pn = self.parents[0];
        const Var& po = self.parents[1];
        std::vector<double> d_new(static_cast<std::size_t>(n), 0.0), d_old(static_cast<std::size_t>(n), 0.0);
        sys.residual_vjp({pn->value.data(), static_cast<std::size_t>(n)}, {po->value.data(), static_cast<std::size_t>(n)},
                         t_new, {self.grad.data(), static_cast<std::size_t>(self.grad.rows())}, d_new, d_old);
        pn->accumulate(Eigen::Map<const Matrix>(d_new.data(), n, 1));
        po->accumulate(Eigen::Map<const Matrix>(d_old.data(), n, 1));
    });
}

} // namespace nfem::diff
