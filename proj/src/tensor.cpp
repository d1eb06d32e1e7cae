#include "witu/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace witu {

std::string dims_to_string(const Dims& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << ',';
        os << dims[i];
    }
    os << ']';
    return os.str();
}

std::size_t dims_product(const Dims& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

void require_dims(const Dims& got, const Dims& expected, const std::string& what) {
    if (got != expected) {
        throw ShapeError(what + ": expected " + dims_to_string(expected) + ", got " +
                         dims_to_string(got));
    }
}

namespace {

void check_extents(const Dims& dims) {
    if (dims.empty()) throw ShapeError("tensor must have at least one dimension");
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (dims[i] == 0) {
            throw ShapeError("tensor extent along axis " + std::to_string(i) +
                             " is zero in " + dims_to_string(dims));
        }
    }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Dims dims, T fill) : dims_(std::move(dims)) {
    check_extents(dims_);
    data_.assign(dims_product(dims_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Dims dims, std::vector<T> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
    check_extents(dims_);
    if (dims_product(dims_) != data_.size()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match dims " + dims_to_string(dims_));
    }
}

template <typename T>
std::size_t BasicTensor<T>::offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != dims_.size()) {
        throw ShapeError("index rank " + std::to_string(idx.size()) + " != tensor rank " +
                         std::to_string(dims_.size()));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
        if (i >= dims_[axis]) {
            throw ShapeError("index " + std::to_string(i) + " out of range on axis " +
                             std::to_string(axis));
        }
        off = off * dims_[axis] + i;
        ++axis;
    }
    return off;
}

template <typename T>
T& BasicTensor<T>::at(std::initializer_list<std::size_t> idx) {
    return data_[offset(idx)];
}

template <typename T>
const T& BasicTensor<T>::at(std::initializer_list<std::size_t> idx) const {
    return data_[offset(idx)];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Dims dims) const {
    if (dims_product(dims) != data_.size()) {
        throw ShapeError("cannot reshape " + dims_to_string(dims_) + " to " +
                         dims_to_string(dims));
    }
    return BasicTensor<T>(std::move(dims), data_);
}

template <typename T>
void BasicTensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace witu
