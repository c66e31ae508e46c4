#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace xmodal {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

// Dense row-major tensor of 64-bit floats. Rank 1 or 2 is all the
// alignment and reader models need.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

    static Tensor zeros(const Shape& s);
    static Tensor full(const Shape& s, double v);
    static Tensor scalar(double v);
    static Tensor row(std::vector<double> d);                  // shape {1, n}
    static Tensor vec(std::vector<double> d);                  // shape {n}
    static Tensor matrix(int r, int c, std::vector<double> d); // shape {r, c}

    int64_t numel() const;
    bool is_scalar() const { return numel() == 1; }
    bool is_matrix() const { return shape.size() == 2; }
    bool is_vec() const { return shape.size() == 1; }

    int rows() const;
    int cols() const;

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

// Handle to a node on a Tape.
struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Per-sample breakdown of the in-batch hard-negative hinge loss.
// total == 0 iff every positive beats its hardest negative by >= alpha
// in both query directions.
struct HingeReport {
    double total = 0.0;
    std::vector<double> row_terms;  // image->text direction, per sample
    std::vector<double> col_terms;  // text->image direction, per sample
    std::vector<int> row_hard;      // hardest caption index per image
    std::vector<int> col_hard;      // hardest image index per caption
};

HingeReport hinge_forward(const Tensor& sim, double alpha);

// Reverse-mode tape. Records every operation in execution order;
// backward() replays the list in exact reverse. Single-threaded by
// contract; independent tapes are safe on independent threads.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves. leaf() honours t.requires_grad; constant() never takes grad.
    Var leaf(Tensor t);
    Var constant(Tensor t);

    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);          // elementwise
    Var scale(Var a, double c);
    Var add_row(Var a, Var row);    // broadcast row over every matrix row
    Var mul_row(Var a, Var row);
    Var clamp_min(Var a, double lo);
    Var relu(Var a) { return clamp_min(a, 0.0); }
    Var softmax_rows(Var a);
    Var layer_norm_rows(Var a, double eps = 1e-5);
    Var l2_normalize(Var a);
    Var gather_rows(Var table, std::vector<int> idx);
    Var stack_rows(const std::vector<Var>& rows);
    Var slice_cols(Var a, int start, int len);
    Var concat_cols(const std::vector<Var>& parts);
    Var max_rows(Var a);            // {n,m} -> {n,1}; first maximizer wins
    Var sum(Var a);
    Var mean(Var a);
    Var dot(Var a, Var b);
    Var reshape(Var a, Shape s);
    Var hard_negative_hinge(Var sim, double alpha);
    Var cross_entropy_logits(Var logits, std::vector<int> labels);

    const Tensor& value(Var v) const;

    // Populates gradients of every requires-grad node reachable from loss.
    // loss must be scalar.
    void backward(Var loss);

    // Gradient of the last backward() w.r.t. v; zeros if v was not touched.
    const Tensor& grad(Var v);

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily during backward
        bool requires_grad = false;
        bool grad_alive = false;
        std::function<void(Tape&, const Tensor&)> backward_fn;  // upstream -> inputs
    };

    Var push(Tensor value, bool requires_grad,
             std::function<void(Tape&, const Tensor&)> backward_fn);
    Node& node(Var v);
    const Node& node(Var v) const;
    Tensor& grad_ref(int32_t id);
    void accumulate(int32_t id, const Tensor& g);

    std::vector<Node> nodes_;
};

}  // namespace xmodal
