#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace percep::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One value in the computation graph. Leaves have no inputs and no backward rule.
struct Node {
    Shape shape;
    std::vector<double> values;
    // Empty until a gradient is first accumulated.
    std::vector<double> grad;
    bool requires_grad = false;
    // Set once the graph through this node has been consumed by backpropagate().
    bool released = false;
    std::string op = "leaf";
    std::vector<NodePtr> inputs;
    // Reads this node's grad and accumulates into the grads of its inputs.
    std::function<void(Node&)> backward;

    bool is_leaf() const noexcept { return op == "leaf"; }
    void accumulate(std::span<const double> g);
    // Ensures grad is allocated (zero-filled) and returns it.
    std::vector<double>& grad_buffer();
};

// Shared handle to a graph node. Copies alias the same node; values are never
// mutated once the node is referenced by another node.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim() const { return shape().size(); }
    std::size_t extent(std::size_t axis) const;
    std::size_t numel() const;
    std::span<const double> values() const;
    double item() const;

    bool requires_grad() const;
    bool has_grad() const;
    // Gradient of the last backpropagate() call(s); zeros if none accumulated yet.
    std::vector<double> grad() const;
    void zero_grad();

    bool is_leaf() const;
    const std::string& op_name() const;

    // Leaf copy of the values, cut from the graph.
    Tensor detach() const;

    const NodePtr& node() const noexcept { return node_; }

    // Builds a non-leaf node. Used by op implementations.
    static Tensor make_result(Shape shape, std::vector<double> values, std::string op,
                              std::vector<Tensor> inputs,
                              std::function<void(Node&)> backward);

private:
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    NodePtr node_;
};

// Execution record of a graph in topological order: every node appears after
// all of its inputs, and exactly once.
class Tape {
public:
    static Tape record(const Tensor& root);

    std::span<const NodePtr> nodes() const noexcept { return nodes_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    // Position of a node in the record, or size() if absent.
    std::size_t index_of(const Node* node) const noexcept;

private:
    std::vector<NodePtr> nodes_;
};

// Accumulates d(loss)/d(leaf) into every leaf that requires grad. The graph is
// consumed: a second call on any tensor of the same graph throws. Leaf grads
// add up across calls on different graphs until zero_grad().
void backpropagate(const Tensor& loss);

}  // namespace percep::ad
