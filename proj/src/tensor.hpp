#ifndef DRIVEGEN_TENSOR_HPP
#define DRIVEGEN_TENSOR_HPP

// Dense row-major tensors and named trainable parameters.  Templated on
// the scalar type: float for real models, double for finite-difference
// gradient checks.

#include <memory>
#include <string>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace dg {

template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), T(0));
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            require(d > 0, ErrorKind::Shape, "tensor dims must be positive");
            n *= size_t(d);
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    int ndim() const { return int(shape.size()); }
    int dim(int i) const { return shape[size_t(i)]; }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void zero() { std::fill(data.begin(), data.end(), T(0)); }
};

template <typename T>
std::string shape_str(const Tensor<T>& t) {
    std::string s = "(";
    for (int i = 0; i < t.ndim(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.dim(i));
    }
    return s + ")";
}

template <typename T>
void fill_normal(Tensor<T>& t, RngStream& rng, double stddev) {
    for (T& v : t.data) v = T(rng.normal() * stddev);
}

// A named trainable tensor with its gradient accumulator.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter(std::string n, std::vector<int> shape)
        : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

// Owns parameters in creation order; the order defines checkpoint layout.
template <typename T>
class ParamStore {
  public:
    Parameter<T>* add(const std::string& name, std::vector<int> shape) {
        require(find(name) == nullptr, ErrorKind::InvalidArgument,
                "duplicate parameter name " + name);
        params_.push_back(std::make_unique<Parameter<T>>(name, std::move(shape)));
        return params_.back().get();
    }

    Parameter<T>* find(const std::string& name) const {
        for (const auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    Parameter<T>* at(const std::string& name) const {
        Parameter<T>* p = find(name);
        require(p != nullptr, ErrorKind::InvalidArgument, "no parameter named " + name);
        return p;
    }

    const std::vector<std::unique_ptr<Parameter<T>>>& all() const { return params_; }

    size_t total_scalars() const {
        size_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

    void zero_grad() {
        for (const auto& p : params_) p->grad.zero();
    }

  private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
};

}  // namespace dg

#endif
