#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tkgcn/util.hpp"

namespace tkgcn {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

// Dense row-major tensor of doubles with a gradient buffer of the same
// shape. Copying a Tensor copies the handle, not the storage, so ops can
// capture their inputs and outputs by value in backward closures.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor identity(std::size_t n, bool requires_grad = false);
    static Tensor uniform(Rng& rng, double lo, double hi, Shape shape, bool requires_grad = false);
    static Tensor normal(Rng& rng, double mean, double stddev, Shape shape, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    std::size_t dim(std::size_t axis) const;

    const std::vector<double>& values() const;
    std::vector<double>& values();
    double item() const;  // requires size() == 1

    double operator()(std::size_t i) const;
    double operator()(std::size_t i, std::size_t j) const;
    double& at(std::size_t i);
    double& at(std::size_t i, std::size_t j);

    bool requires_grad() const;
    void set_requires_grad(bool v);

    bool has_grad() const;
    // Allocates a zero-filled gradient buffer on first access.
    std::vector<double>& grad();
    const std::vector<double>& grad() const;  // throws if no buffer exists
    void zero_grad();
    void drop_grad();

    // Adds `delta` (same size) into the gradient buffer.
    void accumulate_grad(const std::vector<double>& delta);

    // Stable identity of the underlying storage; used to key optimizer state.
    std::uintptr_t id() const;

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

    // Value copy with no graph history and requires_grad off.
    Tensor detached_copy() const;

private:
    struct Data {
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;  // empty until touched
        bool requires_grad = false;
    };

    explicit Tensor(std::shared_ptr<Data> d) : d_(std::move(d)) {}
    Data& ref() const;

    std::shared_ptr<Data> d_;
};

}  // namespace tkgcn
