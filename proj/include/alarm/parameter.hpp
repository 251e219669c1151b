#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "alarm/rng.hpp"

namespace alm {

using Matrix = Eigen::MatrixXd;

/// A named learnable array. `trainable` controls whether the tape tracks gradients for it;
/// `decay` marks matrix weights that receive decoupled weight decay.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;
    bool decay = false;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Ordered owner of parameters. Pointers handed out stay valid for the store's lifetime.
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;
    ParameterStore(ParameterStore&&) = default;
    ParameterStore& operator=(ParameterStore&&) = default;

    Parameter& add(std::string name, Matrix value, bool decay);
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::vector<Parameter*> trainable();
    std::vector<std::string> census() const;

    /// Marks every parameter whose name starts with `prefix`.
    void set_trainable(const std::string& prefix, bool trainable);
    void zero_grad();
    std::size_t size() const { return order_.size(); }

private:
    std::vector<std::unique_ptr<Parameter>> order_;
    std::map<std::string, Parameter*> by_name_;
};

/// Fan-in scaled Gaussian init: N(0, 1/fan_in).
Matrix fan_in_gaussian(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);

} // namespace alm
