#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fcl/tensor.hpp"

namespace fcl {

// Thread-local switch controlling whether ops record graph nodes.
class GradMode {
public:
    static bool enabled() noexcept;
    static void set_enabled(bool on) noexcept;
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

struct GraphNode {
    std::string op;
    std::vector<std::shared_ptr<TensorStorage>> inputs;
    std::shared_ptr<TensorStorage> output;
    std::function<void()> backward;
};

// Op tape for the calling thread. Nodes are appended as ops execute, so the
// record is already in topological order.
class ComputeGraph {
public:
    static ComputeGraph& current();

    void record(GraphNode node) { nodes_.push_back(std::move(node)); }
    const std::vector<GraphNode>& nodes() const noexcept { return nodes_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    void clear() noexcept { nodes_.clear(); }

private:
    std::vector<GraphNode> nodes_;
};

// Populates grad on every requires_grad tensor reachable from loss, then
// clears the graph. loss must hold exactly one element.
void backward(const Tensor& loss);

namespace detail {

// True when an op applied to these inputs must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);
void record(std::string op, std::initializer_list<const Tensor*> inputs, Tensor& output,
            std::function<void()> backward_fn);

}  // namespace detail

}  // namespace fcl
