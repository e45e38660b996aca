#pragma once

// Dense row-major tensors of 64-bit reals with reverse-mode differentiation.
//
// Every op that has at least one input with requires_grad set (and runs while
// gradient recording is enabled) records its inputs and a backward rule on the
// output node. backward() replays those rules in reverse creation order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace afpa {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    // Empty until the first gradient arrives; then sized like value.
    std::vector<double> grad;
    bool requires_grad = false;
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> values() const;
    // In-place access for optimizers and finite-difference probes. Mutating a
    // tensor that is an input of a recorded graph invalidates that graph.
    std::span<double> mutable_values();
    double item() const;
    double at(std::size_t i) const;
    double at(std::size_t i, std::size_t j) const;
    double at(std::size_t i, std::size_t j, std::size_t k) const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Reverse pass from a scalar. Leaf gradients accumulate across calls;
    // gradients of intermediate tensors are reset at the start of each call.
    void backward() const;

    // Same values, no history.
    Tensor detach() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// Thread-local switch for graph recording.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool enabled);
};

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Ordered record of the primitive applications reachable from a root.
// Nodes appear in creation order, so every node follows its inputs.
struct Tape {
    std::vector<detail::Node*> nodes;
};

Tape collect_tape(const Tensor& root);

namespace detail {

// Builds the output node of an op. When recording applies, the node keeps the
// inputs and the backward rule; otherwise both are dropped.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

bool should_record(std::initializer_list<const Tensor*> inputs);

}  // namespace detail

}  // namespace afpa
