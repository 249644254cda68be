#include "cgl/tensor.hpp"

#include <cmath>
#include <sstream>

#include "cgl/error.hpp"

namespace cgl {

std::size_t shape_product(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw UsageError("negative dimension in tensor shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    if (shape_product(shape) != data.size())
        throw InvariantError("tensor shape " + shape_string(shape) + " does not match data length");
}

Tensor Tensor::zeros(const std::vector<int>& shape) {
    Tensor t;
    t.shape = shape;
    t.data.assign(shape_product(shape), 0.0);
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.data = {v};
    return t;
}

Tensor Tensor::matrix(int rows, int cols, std::initializer_list<double> vals) {
    return Tensor({rows, cols}, std::vector<double>(vals));
}

Tensor Tensor::row(std::initializer_list<double> vals) {
    return Tensor({1, static_cast<int>(vals.size())}, std::vector<double>(vals));
}

int Tensor::rows() const {
    if (rank() != 2) throw UsageError("rows(): tensor is not rank-2, shape " + shape_string(shape));
    return shape[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw UsageError("cols(): tensor is not rank-2, shape " + shape_string(shape));
    return shape[1];
}

double& Tensor::at(int i, int j) {
    return data[static_cast<std::size_t>(i) * static_cast<std::size_t>(cols()) + static_cast<std::size_t>(j)];
}

double Tensor::at(int i, int j) const {
    return data[static_cast<std::size_t>(i) * static_cast<std::size_t>(cols()) + static_cast<std::size_t>(j)];
}

double Tensor::scalar_value() const {
    if (size() != 1) throw UsageError("scalar_value(): tensor has " + std::to_string(size()) + " elements");
    return data[0];
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor& Tensor::operator+=(const Tensor& other) {
    if (!same_shape(other))
        throw InvariantError("tensor += shape mismatch: " + shape_string(shape) + " vs " + shape_string(other.shape));
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += other.data[i];
    return *this;
}

void Tensor::fill(double v) {
    for (double& x : data) x = v;
}

} // namespace cgl
