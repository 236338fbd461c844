#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "pumba/errors.hpp"

namespace pumba {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
struct TensorImplT {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

// Dense row-major tensor. Value-semantics handle over shared storage;
// ops never mutate inputs, so sharing is safe. Copies of the handle view
// the same buffer (parameters rely on this for in-place optimizer steps).
template <typename T>
class TensorT {
public:
    TensorT() : impl_(std::make_shared<TensorImplT<T>>()) {}

    explicit TensorT(Shape shape) : impl_(std::make_shared<TensorImplT<T>>()) {
        impl_->shape = std::move(shape);
        impl_->data.assign(shape_numel(impl_->shape), T(0));
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT full(Shape shape, T value) {
        TensorT t(std::move(shape));
        for (auto& v : t.impl_->data) v = value;
        return t;
    }

    static TensorT ones(Shape shape) { return full(std::move(shape), T(1)); }

    static TensorT from_data(Shape shape, std::vector<T> data) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor: shape " + shape_str(shape) + " wants " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(data.size()));
        TensorT t;
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(data);
        return t;
    }

    static TensorT scalar(T value) { return full({1}, value); }

    static TensorT identity(size_t n) {
        TensorT t(Shape{n, n});
        for (size_t i = 0; i < n; ++i) t.impl_->data[i * n + i] = T(1);
        return t;
    }

    const Shape& shape() const { return impl_->shape; }
    size_t rank() const { return impl_->shape.size(); }
    size_t size() const { return impl_->data.size(); }
    size_t extent(size_t axis) const { return impl_->shape.at(axis); }

    T* data() { return impl_->data.data(); }
    const T* data() const { return impl_->data.data(); }
    std::vector<T>& vec() { return impl_->data; }
    const std::vector<T>& vec() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    TensorT& set_requires_grad(bool f) {
        impl_->requires_grad = f;
        return *this;
    }

    // Accumulated adjoint; zeros when nothing reached this tensor.
    const std::vector<T>& grad() const {
        impl_->ensure_grad();
        return impl_->grad;
    }
    void zero_grad() { impl_->grad.assign(impl_->data.size(), T(0)); }

    T item() const {
        if (size() != 1)
            throw ContractError("item: tensor " + shape_str(shape()) + " is not scalar");
        return impl_->data[0];
    }

    T at(std::initializer_list<size_t> idx) const {
        if (idx.size() != rank())
            throw ShapeError("at: rank mismatch for " + shape_str(shape()));
        size_t off = 0, axis = 0;
        for (size_t i : idx) off = off * impl_->shape[axis] + i, ++axis;
        return impl_->data[off];
    }

    TensorT clone() const {
        TensorT t;
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        t.impl_->requires_grad = impl_->requires_grad;
        return t;
    }

    const std::shared_ptr<TensorImplT<T>>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImplT<T>> impl_;
};

// Reverse-mode tape: ordered closures replayed back-to-front. One tape per
// training thread; never shared.
template <typename T>
class GradTapeT {
public:
    void record(std::function<void()> node) { nodes_.push_back(std::move(node)); }

    void backward(const TensorT<T>& loss) {
        if (spent_)
            throw StateError("backward: tape already consumed; reset() before reuse");
        if (loss.size() != 1)
            throw ContractError("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
        loss.impl()->ensure_grad();
        loss.impl()->grad[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        spent_ = true;
    }

    void reset() {
        nodes_.clear();
        spent_ = false;
    }

    size_t node_count() const { return nodes_.size(); }
    bool spent() const { return spent_; }

private:
    std::vector<std::function<void()>> nodes_;
    bool spent_ = false;
};

template <typename T>
inline GradTapeT<T>*& active_tape_slot() {
    thread_local GradTapeT<T>* slot = nullptr;
    return slot;
}

template <typename T>
inline GradTapeT<T>* active_tape() {
    return active_tape_slot<T>();
}

// RAII activation of a tape on the current thread.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(GradTapeT<T>& tape) : prev_(active_tape_slot<T>()) {
        active_tape_slot<T>() = &tape;
    }
    ~TapeScope() { active_tape_slot<T>() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTapeT<T>* prev_;
};

using Tensor = TensorT<float>;
using GradTape = GradTapeT<float>;

template <typename T>
using ParamMapT = std::map<std::string, TensorT<T>>;
using ParamMap = ParamMapT<float>;

template <typename T>
inline void zero_grads(ParamMapT<T>& params) {
    for (auto& [name, p] : params) p.zero_grad();
}

}  // namespace pumba
