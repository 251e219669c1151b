#include "alarm/parameter.hpp"

#include <cmath>

#include "alarm/error.hpp"

namespace alm {

Parameter& ParameterStore::add(std::string name, Matrix value, bool decay) {
    if (by_name_.count(name)) throw Error(ErrorKind::InvalidInput, "duplicate parameter '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = std::move(name);
    p->value = std::move(value);
    p->decay = decay;
    p->zero_grad();
    Parameter& ref = *p;
    by_name_[ref.name] = &ref;
    order_.push_back(std::move(p));
    return ref;
}

Parameter* ParameterStore::find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParameterStore::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

Parameter& ParameterStore::at(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw Error(ErrorKind::InvalidInput, "unknown parameter '" + name + "'");
}

const Parameter& ParameterStore::at(const std::string& name) const {
    if (const auto* p = find(name)) return *p;
    throw Error(ErrorKind::InvalidInput, "unknown parameter '" + name + "'");
}

std::vector<Parameter*> ParameterStore::all() {
    std::vector<Parameter*> out;
    for (auto& p : order_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
    std::vector<const Parameter*> out;
    for (const auto& p : order_) out.push_back(p.get());
    return out;
}

std::vector<Parameter*> ParameterStore::trainable() {
    std::vector<Parameter*> out;
    for (auto& p : order_)
        if (p->trainable) out.push_back(p.get());
    return out;
}

std::vector<std::string> ParameterStore::census() const {
    std::vector<std::string> out;
    for (const auto& p : order_)
        if (p->trainable) out.push_back(p->name);
    return out;
}

void ParameterStore::set_trainable(const std::string& prefix, bool trainable) {
    for (auto& p : order_)
        if (p->name.rfind(prefix, 0) == 0) p->trainable = trainable;
}

void ParameterStore::zero_grad() {
    for (auto& p : order_) p->zero_grad();
}

Matrix fan_in_gaussian(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
    return gaussian<double>(fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

} // namespace alm
