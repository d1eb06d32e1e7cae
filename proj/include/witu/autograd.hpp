#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "witu/ops.hpp"
#include "witu/param_store.hpp"
#include "witu/tensor.hpp"

namespace witu {

// Handle to a value recorded on a Tape.
struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const { return id != npos; }
};

// Reverse-mode tape over whole-tensor ops. Forward calls append nodes;
// backward() walks them in reverse once, accumulating into node gradients
// and finally into the ParamStore gradients of every parameter leaf.
template <typename T>
class Tape {
public:
    using TensorT = BasicTensor<T>;
    // Called with the node's own id; reads grad(id) and accumulates into
    // grad_slot() of its inputs.
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    // With grad disabled parameters are recorded as constants and no
    // backward closures are kept (inference).
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Var leaf(TensorT value, bool requires_grad = false);
    // One leaf per parameter per tape; repeated calls return the same Var.
    Var param(Parameter<T>& p);

    Var record(std::string op, TensorT value, const std::vector<Var>& inputs, BackwardFn fn);

    const TensorT& value(Var v) const { return node(v).value; }
    // Empty tensor if no gradient reached v.
    const TensorT& grad(Var v) const { return node(v).grad; }
    bool requires_grad(Var v) const { return node(v).requires_grad; }
    const std::string& op_name(Var v) const { return node(v).op; }
    TensorT& grad_slot(Var v);

    // Seeds d(loss)/d(loss) = 1; loss must be a single element.
    void backward(Var loss);
    void backward(Var out, const TensorT& seed);

    // Test hook: backward of every op named `op` receives a negated output grad.
    void inject_sign_fault(std::string op) { fault_op_ = std::move(op); }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::string op;
        TensorT value;
        TensorT grad;
        BackwardFn backward;
        bool requires_grad = false;
        Parameter<T>* param = nullptr;
    };

    const Node& node(Var v) const;
    Node& node(Var v);

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
    std::string fault_op_;
    bool grad_enabled_ = true;
    bool consumed_ = false;
};

// Differentiable ops on a Tape. Shapes follow the matching witu::ops kernels.
namespace ag {

template <typename T>
Var conv2d(Tape<T>& t, Var x, Var w, Var b, const ops::ConvSpec& spec);
template <typename T>
Var conv_transpose2d(Tape<T>& t, Var x, Var w, Var b, std::size_t stride);
template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var b);
template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta, double eps = ops::kLayerNormEps);
template <typename T>
Var softmax(Tape<T>& t, Var x);
template <typename T>
Var gelu(Tape<T>& t, Var x);
template <typename T>
Var add(Tape<T>& t, Var a, Var b);
template <typename T>
Var scale(Tape<T>& t, Var a, double s);
template <typename T>
Var reshape(Tape<T>& t, Var x, Dims dims);
template <typename T>
Var matmul(Tape<T>& t, Var a, Var b, bool trans_b);
// Concatenates N,C,H,W tensors along the channel axis.
template <typename T>
Var concat_channels(Tape<T>& t, const std::vector<Var>& xs);
template <typename T>
Var nchw_to_nhwc(Tape<T>& t, Var x);
template <typename T>
Var nhwc_to_nchw(Tape<T>& t, Var x);
template <typename T>
Var pad_hw(Tape<T>& t, Var x, std::size_t pad_h, std::size_t pad_w);
template <typename T>
Var crop_hw(Tape<T>& t, Var x, std::size_t h, std::size_t w);
// mean((pred - target)^2); gradient flows to pred only.
template <typename T>
Var mse_loss(Tape<T>& t, Var pred, const BasicTensor<T>& target);
// sum(x * weights), accumulated in double.
template <typename T>
Var weighted_sum(Tape<T>& t, Var x, const BasicTensor<T>& weights);
template <typename T>
Var sum(Tape<T>& t, Var x);

}  // namespace ag

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace witu
