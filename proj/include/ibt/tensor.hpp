#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ibt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the differentiation graph. Leaves have no parents and no
// backward rule; interior nodes propagate `grad` into their parents.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return parents.empty(); }
    std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 array with reverse-mode differentiation.
///
/// Tensor is a shared handle: copies alias the same storage and graph node,
/// like a Variable in most autograd libraries. Results of operations are
/// fresh nodes; only leaves should be mutated in place.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Populates gradients of every reachable tensor that requires them.
    /// Leaf gradients accumulate across calls; interior ones are recomputed.
    void backward() const;

    /// Same storage copy cut off from the graph.
    Tensor detach() const;
    Tensor clone() const;

    const detail::NodePtr& node() const { return node_; }
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

private:
    detail::NodePtr node_;
};

/// Keeps freed tensor buffers in the heap instead of returning them to the OS,
/// which otherwise costs a page-fault storm on every large allocation.
/// Call once at program start; a no-op outside glibc.
void tune_allocator();

/// True while operations record backward rules (thread-local).
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

// Builds an op result. The backward rule is kept only when grad mode is on
// and some parent requires a gradient.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn);

}  // namespace detail

/// A trainable tensor addressed by a dotted path such as "ibt1.rpe.encode.0.weight".
struct Parameter {
    std::string name;
    Tensor tensor;
};

}  // namespace ibt
