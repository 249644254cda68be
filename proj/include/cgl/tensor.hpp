#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace cgl {

// Dense row-major tensor of doubles. Rank 0 (empty shape) is a scalar.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> shape_, std::vector<double> data_);

    static Tensor zeros(const std::vector<int>& shape);
    static Tensor scalar(double v);
    static Tensor matrix(int rows, int cols, std::initializer_list<double> vals);
    static Tensor row(std::initializer_list<double> vals); // 1 x n matrix

    std::size_t size() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }

    // Rank-2 accessors.
    int rows() const;
    int cols() const;
    double& at(int i, int j);
    double at(int i, int j) const;

    double scalar_value() const; // size-1 tensors only

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;

    Tensor& operator+=(const Tensor& other); // elementwise, shapes must match
    void fill(double v);
};

std::size_t shape_product(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

} // namespace cgl
