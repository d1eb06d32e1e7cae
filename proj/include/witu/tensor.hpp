#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "witu/errors.hpp"

namespace witu {

using Dims = std::vector<std::size_t>;

std::string dims_to_string(const Dims& dims);
std::size_t dims_product(const Dims& dims);

// Dense row-major array (last dimension fastest). A default-constructed
// tensor is the empty placeholder: no dims, no data.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Dims dims, T fill = T(0));
    BasicTensor(Dims dims, std::vector<T> data);

    const Dims& dims() const { return dims_; }
    std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
    std::size_t ndim() const { return dims_.size(); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return dims_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Multi-index access; number of indices must equal ndim().
    T& at(std::initializer_list<std::size_t> idx);
    const T& at(std::initializer_list<std::size_t> idx) const;

    BasicTensor reshaped(Dims dims) const;
    void fill(T value);

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicTensor<U>(dims_, std::move(out));
    }

    bool operator==(const BasicTensor& other) const = default;

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const;

    Dims dims_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

// Throws ShapeError("<what>: expected ..., got ...") unless a.dims() == expected.
void require_dims(const Dims& got, const Dims& expected, const std::string& what);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace witu
