#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rotdet/errors.hpp"

namespace rotdet {

template <class Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {

// One vertex of the reverse-mode graph. Non-leaf nodes carry a closure that
// reads this node's gradient and accumulates into the parents' gradients.
template <class Scalar>
struct TensorNode {
    std::vector<int> shape;
    ArrayX<Scalar> value;
    ArrayX<Scalar> grad;
    bool is_leaf_grad = false;  // leaf that wants gradients (parameters)
    bool needs_grad = false;    // gradient flows through or into this node
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(const ArrayX<Scalar>&)> backward_fn;

    void accumulate(const ArrayX<Scalar>& g) {
        if (grad.size() != value.size()) {
            grad = ArrayX<Scalar>::Zero(value.size());
        }
        grad += g;
    }
};

}  // namespace detail

inline long shape_numel(const std::vector<int>& shape) {
    long n = 1;
    for (int d : shape) n *= d;
    return n;
}

// Dense n-dimensional tensor over a shared graph node. Activations are 4-D
// (batch, channels, height, width); reductions produce shape {1}.
template <class Scalar>
class Tensor {
  public:
    using Node = detail::TensorNode<Scalar>;

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        return from_array(shape, ArrayX<Scalar>::Zero(shape_numel(shape)), requires_grad);
    }

    static Tensor constant(std::vector<int> shape, Scalar v, bool requires_grad = false) {
        return from_array(shape, ArrayX<Scalar>::Constant(shape_numel(shape), v), requires_grad);
    }

    static Tensor from_array(std::vector<int> shape, ArrayX<Scalar> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size()) {
            throw ConfigError("tensor shape does not match data length");
        }
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        node->is_leaf_grad = requires_grad;
        node->needs_grad = requires_grad;
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    static Tensor scalar(Scalar v, bool requires_grad = false) {
        ArrayX<Scalar> a(1);
        a[0] = v;
        return from_array({1}, std::move(a), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    Eigen::Index size() const { return node_->value.size(); }

    const ArrayX<Scalar>& value() const { return node_->value; }
    bool requires_grad() const { return node_->is_leaf_grad; }
    bool needs_grad() const { return node_->needs_grad; }

    const ArrayX<Scalar>& grad() const {
        if (node_->grad.size() != node_->value.size()) {
            node_->grad = ArrayX<Scalar>::Zero(node_->value.size());
        }
        return node_->grad;
    }

    Scalar item() const {
        if (size() != 1) throw UsageError("item() requires a single-element tensor");
        return node_->value[0];
    }

    // 4-D accessor, row-major (b, c, h, w).
    Scalar at(int b, int c, int h, int w) const {
        const auto& s = node_->shape;
        return node_->value[((static_cast<long>(b) * s[1] + c) * s[2] + h) * s[3] + w];
    }

    // In-place update of a leaf's values (optimizer step, checkpoint load).
    // Mutates the shared node, not the handle.
    void set_values(const ArrayX<Scalar>& v) const {
        if (!node_->parents.empty()) throw UsageError("set_values is only valid on leaf tensors");
        if (v.size() != node_->value.size()) throw ConfigError("set_values length mismatch");
        node_->value = v;
    }

    void zero_grad() const { node_->grad = ArrayX<Scalar>::Zero(node_->value.size()); }

    std::shared_ptr<Node> node() const { return node_; }

  private:
    std::shared_ptr<Node> node_;
};

namespace detail {

// Assembles an op vertex. The backward closure receives the output gradient
// and is responsible for accumulating into the parents it captured.
template <class Scalar, class Backward>
Tensor<Scalar> make_op(std::vector<int> shape, ArrayX<Scalar> value,
                       const std::vector<Tensor<Scalar>>& inputs, Backward&& backward) {
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.needs_grad();
    auto out = Tensor<Scalar>::from_array(std::move(shape), std::move(value), false);
    if (needs) {
        auto node = out.node();
        node->needs_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& t : inputs) node->parents.push_back(t.node());
        node->backward_fn = std::forward<Backward>(backward);
    }
    return out;
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients of leaves accumulate
// additively across repeated calls; intermediate gradients are reset per
// sweep so each call contributes exactly one unit of upstream seed.
template <class Scalar>
void backward(const Tensor<Scalar>& loss) {
    if (loss.size() != 1) throw UsageError("backward requires a scalar loss");
    auto root = loss.node();
    if (!root->needs_grad) return;

    using Node = detail::TensorNode<Scalar>;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->needs_grad && !seen.count(parent)) {
                seen.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (!n->is_leaf_grad) n->grad = ArrayX<Scalar>::Zero(n->value.size());
    }
    root->accumulate(ArrayX<Scalar>::Ones(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.size() == n->value.size()) {
            n->backward_fn(n->grad);
        }
    }
}

}  // namespace rotdet
