#ifndef ADVLAB_GRAPH_HPP
#define ADVLAB_GRAPH_HPP

#include <functional>
#include <initializer_list>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

/// Handle to a node in a Graph. Only meaningful for the graph that created it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the append
/// order is a topological order and backward simply walks it in reverse.
///
/// A graph is private to one evaluation: it is not thread-safe, but several
/// graphs may read the same externally owned parameter tensors concurrently.
template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, int)>;

    /// Leaf that never receives a gradient.
    Var constant(Tensor<T> value);
    /// Leaf whose gradient is collected by backward().
    Var input(Tensor<T> value);
    /// Leaf referencing an external tensor without copying. The tensor must
    /// outlive the graph.
    Var parameter(const Tensor<T>& value, bool requires_grad);

    /// Appends an op result. `fn` is kept only when some input needs a gradient;
    /// it receives the node id and must accumulate into its inputs' gradients.
    Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn);

    const Tensor<T>& value(Var v) const;
    bool requires_grad(Var v) const;
    int size() const { return static_cast<int>(nodes_.size()); }

    /// Gradient of `loss` (a single-element node) with respect to every node.
    /// Calling backward again starts from fresh gradients.
    void backward(Var loss);

    /// Gradient after backward(). Nodes that the loss does not reach get zeros.
    Tensor<T> grad(Var v) const;

    // Used by op implementations during backward.
    const Tensor<T>& upstream(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
    Tensor<T>& grad_accumulator(Var v);
    const std::vector<Var>& inputs_of(int id) const { return nodes_[static_cast<std::size_t>(id)].inputs; }

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* external = nullptr;
        Tensor<T> grad;
        std::vector<Var> inputs;
        BackwardFn backward;
        bool requires_grad = false;

        const Tensor<T>& value() const { return external ? *external : owned; }
    };

    const Node& node(Var v) const;
    Node& node(Var v);

    std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

} // namespace advlab

#endif // ADVLAB_GRAPH_HPP
