#include "percep_tl/autodiff/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "percep_tl/error.hpp"

namespace percep::ad {

std::size_t numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (auto e : shape) {
        n *= e;
    }
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? ", " : "") << shape[i];
    }
    out << ']';
    return out.str();
}

void Node::accumulate(std::span<const double> g) {
    auto& buf = grad_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i) {
        buf[i] += g[i];
    }
}

std::vector<double>& Node::grad_buffer() {
    if (grad.empty()) {
        grad.assign(values.size(), 0.0);
    }
    return grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto e : shape) {
        if (e == 0) {
            throw ShapeError("tensor extents must be positive, got " + to_string(shape));
        }
    }
    if (ad::numel(shape) != values.size()) {
        throw ShapeError("tensor shape " + to_string(shape) + " holds " +
                         std::to_string(ad::numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = ad::numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) {
        throw Error("use of an undefined tensor");
    }
    return node_->shape;
}

std::size_t Tensor::extent(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return ad::numel(shape()); }

std::span<const double> Tensor::values() const {
    shape();
    return node_->values;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() needs a single-element tensor, got shape " + to_string(shape()));
    }
    return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
    shape();
    if (node_->grad.empty()) {
        return std::vector<double>(node_->values.size(), 0.0);
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) {
        node_->grad.clear();
    }
}

bool Tensor::is_leaf() const { return node_ && node_->is_leaf(); }

const std::string& Tensor::op_name() const {
    shape();
    return node_->op;
}

Tensor Tensor::detach() const {
    return from(shape(), node_->values, false);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::string op,
                           std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
    if (ad::numel(shape) != values.size()) {
        throw ShapeError(op + ": result shape " + to_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->op = std::move(op);
    bool needs = false;
    for (const auto& in : inputs) {
        needs = needs || in.requires_grad();
    }
    // Off-tape results keep no references to their inputs.
    if (needs) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) {
            node->inputs.push_back(in.node());
        }
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

Tape Tape::record(const Tensor& root) {
    Tape tape;
    if (!root.defined()) {
        return tape;
    }
    // Iterative post-order DFS: a node is emitted after all of its inputs.
    std::unordered_set<const Node*> seen;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            const auto& child = node->inputs[next++];
            if (child->requires_grad && seen.insert(child.get()).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            tape.nodes_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

std::size_t Tape::index_of(const Node* node) const noexcept {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].get() == node) {
            return i;
        }
    }
    return nodes_.size();
}

void backpropagate(const Tensor& loss) {
    if (!loss.defined()) {
        throw Error("backpropagate: undefined loss tensor");
    }
    if (loss.numel() != 1) {
        throw ShapeError("backpropagate: loss must be scalar, got shape " + to_string(loss.shape()));
    }
    if (loss.node()->released) {
        throw Error("backpropagate: graph already consumed; rebuild the forward pass first");
    }
    if (!loss.requires_grad()) {
        throw Error("backpropagate: loss is not on the tape (no input requires grad)");
    }
    const Tape tape = Tape::record(loss);
    for (const auto& node : tape.nodes()) {
        if (node->released) {
            throw Error("backpropagate: graph reaches a node consumed by an earlier call");
        }
    }
    if (loss.is_leaf()) {
        loss.node()->accumulate(std::vector<double>{1.0});
        return;
    }
    loss.node()->grad.assign(1, 1.0);
    const auto nodes = tape.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        Node& node = **it;
        if (node.is_leaf()) {
            continue;
        }
        if (!node.grad.empty() && node.backward) {
            node.backward(node);
        }
    }
    for (const auto& node : nodes) {
        if (!node->is_leaf()) {
            node->grad.clear();
            node->grad.shrink_to_fit();
            node->backward = nullptr;
            node->inputs.clear();
            node->released = true;
        }
    }
}

}  // namespace percep::ad
