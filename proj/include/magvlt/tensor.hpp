#pragma once
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace magvlt::nd {

// Dense row-major tensor. Data and grad are shared so that tape closures keep
// buffers alive without copying; ops hand out value copies of the handle.
template <class Real>
struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<Real>> data;
    std::shared_ptr<std::vector<Real>> grad;  // allocated iff requires_grad
    bool requires_grad = false;

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<Real>>(t.numel(), Real(0));
        t.requires_grad = requires_grad;
        if (requires_grad)
            t.grad = std::make_shared<std::vector<Real>>(t.numel(), Real(0));
        return t;
    }

    static Tensor from(std::vector<int> shape, std::vector<Real> values,
                       bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        if (int64_t(values.size()) != t.numel())
            throw std::invalid_argument("Tensor::from: value count does not match shape");
        *t.data = std::move(values);
        return t;
    }

    static Tensor scalar(Real v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }
    int ndim() const { return int(shape.size()); }
    int dim(int i) const { return shape.at(size_t(i)); }
    int rows() const { return ndim() == 2 ? shape[0] : (ndim() == 1 ? 1 : throw_not2d()); }
    int cols() const { return ndim() == 2 ? shape[1] : (ndim() == 1 ? shape[0] : throw_not2d()); }

    // Tensors are shared-buffer handles; a const handle still exposes the
    // mutable storage (the tape's backward closures rely on this).
    Real* ptr() const { return data->data(); }
    Real* gptr() const { return grad ? grad->data() : nullptr; }

    Real item() const {
        if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor is not scalar");
        return (*data)[0];
    }

    void zero_grad() {
        if (grad) std::fill(grad->begin(), grad->end(), Real(0));
    }

    bool defined() const { return bool(data); }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << ']';
        return os.str();
    }

private:
    [[noreturn]] static int throw_not2d() {
        throw std::invalid_argument("Tensor: expected a 1-D or 2-D tensor");
    }
};

// Reverse-mode tape. Ops append backward closures in forward order; backward()
// runs them in reverse exactly once. A null Tape* passed to an op disables
// recording entirely (inference mode).
template <class Real>
class Tape {
public:
    void record(std::function<void()> back) { back_.push_back(std::move(back)); }

    size_t num_nodes() const { return back_.size(); }

    // Seeds d(loss)/d(loss) = seed and propagates. `seed` lets a caller fold a
    // scalar loss weight into the backward pass without touching the graph.
    void backward(Tensor<Real>& loss, Real seed = Real(1)) {
        if (consumed_)
            throw std::logic_error("Tape::backward called twice without reset");
        if (loss.numel() != 1)
            throw std::invalid_argument("Tape::backward: loss must be scalar, got " +
                                        loss.shape_str());
        if (!loss.requires_grad)
            throw std::invalid_argument("Tape::backward: loss does not require grad");
        (*loss.grad)[0] += seed;
        for (auto it = back_.rbegin(); it != back_.rend(); ++it) (*it)();
        back_.clear();  // release captured buffers promptly
        consumed_ = true;
    }

    void reset() {
        back_.clear();
        consumed_ = false;
    }

private:
    std::vector<std::function<void()>> back_;
    bool consumed_ = false;
};

[[noreturn]] inline void op_shape_error(const std::string& op, const std::string& detail) {
    throw std::invalid_argument(op + ": " + detail);
}

}  // namespace magvlt::nd
