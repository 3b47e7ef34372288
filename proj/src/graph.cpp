#include "advlab/graph.hpp"

#include <stdexcept>
#include <string>

namespace advlab {

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
    if (v.id < 0 || v.id >= size()) throw std::out_of_range("invalid graph variable " + std::to_string(v.id));
    return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
    if (v.id < 0 || v.id >= size()) throw std::out_of_range("invalid graph variable " + std::to_string(v.id));
    return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{size() - 1};
}

template <typename T>
Var Graph<T>::input(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{size() - 1};
}

template <typename T>
Var Graph<T>::parameter(const Tensor<T>& value, bool requires_grad) {
    Node n;
    n.external = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{size() - 1};
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    for (Var in : inputs) {
        if (!in.valid()) continue;
        if (in.id >= size()) throw std::logic_error("op input does not precede its output");
        n.inputs.push_back(in);
        n.requires_grad = n.requires_grad || node(in).requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{size() - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
    return node(v).value();
}

template <typename T>
bool Graph<T>::requires_grad(Var v) const {
    return node(v).requires_grad;
}

template <typename T>
Tensor<T>& Graph<T>::grad_accumulator(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value().shape());
    return n.grad;
}

template <typename T>
void Graph<T>::backward(Var loss) {
    const Node& root = node(loss);
    if (root.value().size() != 1) {
        throw std::invalid_argument("backward requires a scalar loss, got shape " + to_string(root.value().shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor<T>();
    if (!root.requires_grad) return;
    grad_accumulator(loss)[0] = T{1};
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
        n.backward(*this, id);
    }
}

template <typename T>
Tensor<T> Graph<T>::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor<T>(n.value().shape());
    return n.grad;
}

template class Graph<float>;
template class Graph<double>;

} // namespace advlab
