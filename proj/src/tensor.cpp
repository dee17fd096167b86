#include "tkgcn/tensor.hpp"

#include <stdexcept>

namespace tkgcn {

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

Tensor::Data& Tensor::ref() const {
    if (!d_) throw std::runtime_error("use of undefined tensor");
    return *d_;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto d = std::make_shared<Data>();
    d->values.assign(shape_size(shape), 0.0);
    d->shape = std::move(shape);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.values()) v = value;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_size(shape) != values.size())
        throw std::invalid_argument("from_data: shape " + shape_str(shape) + " does not match " +
                                    std::to_string(values.size()) + " values");
    auto d = std::make_shared<Data>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
    Tensor t = zeros({n, n}, requires_grad);
    for (std::size_t i = 0; i < n; ++i) t.values()[i * n + i] = 1.0;
    return t;
}

Tensor Tensor::uniform(Rng& rng, double lo, double hi, Shape shape, bool requires_grad) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

Tensor Tensor::normal(Rng& rng, double mean, double stddev, Shape shape, bool requires_grad) {
    std::normal_distribution<double> dist(mean, stddev);
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

const Shape& Tensor::shape() const { return ref().shape; }

std::size_t Tensor::size() const { return ref().values.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size())
        throw std::invalid_argument("dim: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[axis];
}

const std::vector<double>& Tensor::values() const { return ref().values; }
std::vector<double>& Tensor::values() { return ref().values; }

double Tensor::item() const {
    if (size() != 1)
        throw std::invalid_argument("item: tensor has shape " + shape_str(shape()) + ", expected a single element");
    return values()[0];
}

double Tensor::operator()(std::size_t i) const { return values().at(i); }

double Tensor::operator()(std::size_t i, std::size_t j) const {
    const Shape& s = shape();
    if (s.size() != 2) throw std::invalid_argument("2-index access on tensor of shape " + shape_str(s));
    return values()[i * s[1] + j];
}

double& Tensor::at(std::size_t i) { return values().at(i); }

double& Tensor::at(std::size_t i, std::size_t j) {
    const Shape& s = shape();
    if (s.size() != 2) throw std::invalid_argument("2-index access on tensor of shape " + shape_str(s));
    return values()[i * s[1] + j];
}

bool Tensor::requires_grad() const { return ref().requires_grad; }
void Tensor::set_requires_grad(bool v) { ref().requires_grad = v; }

bool Tensor::has_grad() const { return !ref().grad.empty(); }

std::vector<double>& Tensor::grad() {
    Data& d = ref();
    if (d.grad.empty()) d.grad.assign(d.values.size(), 0.0);
    return d.grad;
}

const std::vector<double>& Tensor::grad() const {
    const Data& d = ref();
    if (d.grad.empty()) throw std::runtime_error("gradient requested but none has been accumulated");
    return d.grad;
}

void Tensor::zero_grad() {
    Data& d = ref();
    d.grad.assign(d.values.size(), 0.0);
}

void Tensor::drop_grad() { ref().grad.clear(); }

void Tensor::accumulate_grad(const std::vector<double>& delta) {
    std::vector<double>& g = grad();
    if (delta.size() != g.size())
        throw std::invalid_argument("accumulate_grad: size mismatch (" + std::to_string(delta.size()) + " vs " +
                                    std::to_string(g.size()) + ")");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

std::uintptr_t Tensor::id() const { return reinterpret_cast<std::uintptr_t>(d_.get()); }

Tensor Tensor::detached_copy() const {
    return from_data(shape(), values(), false);
}

}  // namespace tkgcn
