#include "fcl/autograd.hpp"

#include "fcl/errors.hpp"

namespace fcl {

namespace {
thread_local bool grad_enabled = true;
}

bool GradMode::enabled() noexcept { return grad_enabled; }
void GradMode::set_enabled(bool on) noexcept { grad_enabled = on; }

ComputeGraph& ComputeGraph::current() {
    thread_local ComputeGraph graph;
    return graph;
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    auto& graph = ComputeGraph::current();
    if (loss.requires_grad()) {
        auto& g = loss.storage()->grad;
        if (g.empty()) g.assign(1, real{0});
        g[0] += real{1};
        const auto& nodes = graph.nodes();
        for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
            if (!it->output->grad.empty()) it->backward();
        }
    }
    graph.clear();
}

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!GradMode::enabled()) return false;
    for (const Tensor* t : inputs) {
        if (t && t->requires_grad()) return true;
    }
    return false;
}

void record(std::string op, std::initializer_list<const Tensor*> inputs, Tensor& output,
            std::function<void()> backward_fn) {
    GraphNode node;
    node.op = std::move(op);
    for (const Tensor* t : inputs) {
        if (t) node.inputs.push_back(t->storage());
    }
    output.set_requires_grad(true);
    node.output = output.storage();
    node.backward = std::move(backward_fn);
    ComputeGraph::current().record(std::move(node));
}

}  // namespace detail

}  // namespace fcl
