#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mvfcnn/tensor.hpp"

namespace mvfcnn {

struct SgdConfig {
    double learning_rate = 0.01;
    double momentum = 0.0;
    double weight_decay = 0.0;
    std::size_t max_iterations = 1000;

    void validate() const {
        if (learning_rate <= 0.0) throw std::invalid_argument("SgdConfig: learning_rate must be > 0");
        if (momentum < 0.0 || momentum >= 1.0)
            throw std::invalid_argument("SgdConfig: momentum must be in [0,1)");
        if (weight_decay < 0.0) throw std::invalid_argument("SgdConfig: weight_decay must be >= 0");
        if (max_iterations == 0) throw std::invalid_argument("SgdConfig: max_iterations must be > 0");
    }
};

// Mutable view of one named parameter tensor and its gradient buffer.
template <class T>
struct ParamView {
    std::string name;
    T* value = nullptr;
    T* grad = nullptr;
    std::size_t size = 0;
    std::array<int, 4> shape{1, 1, 1, 1};
};

template <class T>
struct TrainState {
    std::size_t iteration = 0;
    std::map<std::string, std::vector<T>> velocity;
    std::vector<std::pair<std::size_t, double>> loss_history;
};

struct SgdStepError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// v <- mu*v - eta*(g + lambda*w); w <- w + v.
// With mu = lambda = 0 this is the plain gradient-descent step w -= eta*g.
template <class T>
void sgd_step(std::vector<ParamView<T>>& params, TrainState<T>& state,
              const SgdConfig& cfg) {
    cfg.validate();
    // refuse the whole step before touching anything
    for (const auto& p : params)
        for (std::size_t i = 0; i < p.size; ++i)
            if (!std::isfinite(static_cast<double>(p.grad[i])))
                throw SgdStepError("sgd_step: non-finite gradient in parameter '" + p.name + "'");
    const T eta = static_cast<T>(cfg.learning_rate);
    const T mu = static_cast<T>(cfg.momentum);
    const T lambda = static_cast<T>(cfg.weight_decay);
    for (auto& p : params) {
        auto& v = state.velocity[p.name];
        if (v.size() != p.size) {
            if (!v.empty())
                throw SgdStepError("sgd_step: velocity shape changed for '" + p.name + "'");
            v.assign(p.size, T(0));
        }
        for (std::size_t i = 0; i < p.size; ++i) {
            v[i] = mu * v[i] - eta * (p.grad[i] + lambda * p.value[i]);
            p.value[i] += v[i];
        }
    }
    ++state.iteration;
}

enum class TrainStatus { Completed, Diverged };

template <class T>
struct TrainResult {
    TrainStatus status = TrainStatus::Completed;
    std::vector<std::pair<std::size_t, double>> loss_history;
};

// Generic minibatch loop: `step_fn(iteration)` runs forward + backward for one
// batch, fills the gradient buffers behind `params`, and returns the loss.
// On a non-finite loss the parameters are rolled back to the values they held
// before that step and the loop stops.
template <class T, class StepFn>
TrainResult<T> train_loop(std::vector<ParamView<T>>& params, TrainState<T>& state,
                          const SgdConfig& cfg, StepFn&& step_fn) {
    cfg.validate();
    TrainResult<T> result;
    std::vector<std::vector<T>> snapshot(params.size());
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
        for (std::size_t pi = 0; pi < params.size(); ++pi)
            snapshot[pi].assign(params[pi].value, params[pi].value + params[pi].size);
        const double loss = step_fn(state.iteration);
        if (!std::isfinite(loss)) {
            for (std::size_t pi = 0; pi < params.size(); ++pi)
                std::copy(snapshot[pi].begin(), snapshot[pi].end(), params[pi].value);
            result.status = TrainStatus::Diverged;
            break;
        }
        state.loss_history.emplace_back(state.iteration, loss);
        result.loss_history.emplace_back(state.iteration, loss);
        sgd_step(params, state, cfg);
    }
    return result;
}

inline void write_loss_csv(std::ostream& os,
                           const std::vector<std::pair<std::size_t, double>>& history) {
    os << "iteration,loss\n";
    for (const auto& [it, loss] : history) os << it << "," << loss << "\n";
}

}  // namespace mvfcnn
