#pragma once
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "magvlt/tensor.hpp"

namespace magvlt::nd {

// Linear warmup to base_lr, then cosine anneal to floor_lr at total_steps.
inline double cosine_lr(int64_t step, int64_t total_steps, double base_lr,
                        int64_t warmup_steps, double floor_lr) {
    if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
    if (warmup_steps < 0 || warmup_steps > total_steps)
        throw std::invalid_argument("cosine_lr: warmup_steps outside [0, total_steps]");
    if (step < 0 || step > total_steps)
        throw std::invalid_argument("cosine_lr: step outside [0, total_steps]");
    if (step < warmup_steps) return base_lr * double(step) / double(warmup_steps);
    if (total_steps == warmup_steps) return base_lr;
    const double r = double(step - warmup_steps) / double(total_steps - warmup_steps);
    return floor_lr + (base_lr - floor_lr) * 0.5 * (1.0 + std::cos(3.141592653589793 * r));
}

// L2 norm over every parameter gradient, accumulated in double.
template <class Real>
double global_grad_norm(const std::vector<Tensor<Real>*>& params) {
    double ss = 0.0;
    for (const auto* p : params) {
        if (!p->grad) continue;
        const Real* g = p->gptr();
        const int64_t n = p->numel();
        for (int64_t i = 0; i < n; ++i) ss += double(g[i]) * double(g[i]);
    }
    return std::sqrt(ss);
}

// Scales gradients so the global norm never exceeds `threshold`.
// Returns the pre-clip norm (that is what the metrics stream reports).
template <class Real>
double clip_global_norm(const std::vector<Tensor<Real>*>& params, double threshold) {
    if (threshold <= 0) throw std::invalid_argument("clip_global_norm: threshold must be positive");
    const double norm = global_grad_norm(params);
    if (std::isfinite(norm) && norm > threshold) {
        const Real f = Real(threshold / norm);
        for (auto* p : params) {
            if (!p->grad) continue;
            Real* g = p->gptr();
            const int64_t n = p->numel();
            for (int64_t i = 0; i < n; ++i) g[i] *= f;
        }
    }
    return norm;
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.96;
    double eps = 1e-8;
    double weight_decay = 0.045;
};

// AdamW with decoupled weight decay. Moments are kept per parameter in the
// order the parameter list was given; that order is part of the optimizer
// checkpoint contract.
template <class Real>
class AdamW {
public:
    AdamW() = default;
    AdamW(const std::vector<Tensor<Real>*>& params, AdamWConfig cfg) : cfg_(cfg) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto* p : params) {
            m_.emplace_back(size_t(p->numel()), Real(0));
            v_.emplace_back(size_t(p->numel()), Real(0));
        }
    }

    enum class Status { ok, refused_nonfinite };

    // One update over all parameters. Refuses (and mutates nothing) if any
    // gradient is non-finite.
    Status step(const std::vector<Tensor<Real>*>& params, double lr) {
        if (params.size() != m_.size())
            throw std::invalid_argument("AdamW::step: parameter list size changed");
        double ss = 0.0;
        for (const auto* p : params) {
            if (!p->grad) throw std::invalid_argument("AdamW::step: parameter without grad");
            const Real* g = p->gptr();
            const int64_t n = p->numel();
            for (int64_t i = 0; i < n; ++i) ss += double(g[i]) * double(g[i]);
        }
        if (!std::isfinite(ss)) return Status::refused_nonfinite;

        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        const Real b1 = Real(cfg_.beta1), b2 = Real(cfg_.beta2);
        const Real ib1 = Real(1.0 - cfg_.beta1), ib2 = Real(1.0 - cfg_.beta2);
        const Real inv_bc1 = Real(1.0 / bc1), inv_bc2 = Real(1.0 / bc2);
        const Real eps = Real(cfg_.eps);
        const Real decay = Real(lr * cfg_.weight_decay);
        const Real lrr = Real(lr);
        for (size_t pi = 0; pi < params.size(); ++pi) {
            Tensor<Real>& p = *params[pi];
            if (size_t(p.numel()) != m_[pi].size())
                throw std::invalid_argument("AdamW::step: parameter shape changed");
            Real* w = p.ptr();
            const Real* g = p.gptr();
            Real* m = m_[pi].data();
            Real* v = v_[pi].data();
            const int64_t n = p.numel();
            for (int64_t i = 0; i < n; ++i) {
                m[i] = b1 * m[i] + ib1 * g[i];
                v[i] = b2 * v[i] + ib2 * g[i] * g[i];
                const Real mh = m[i] * inv_bc1;
                const Real vh = v[i] * inv_bc2;
                w[i] -= decay * w[i] + lrr * mh / (std::sqrt(vh) + eps);
            }
        }
        return Status::ok;
    }

    int64_t step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }

    // raw little-endian state dump; caller wraps it in the checkpoint format
    void save_state(std::ostream& os) const {
        int64_t t = t_;
        uint64_t np = m_.size();
        os.write(reinterpret_cast<const char*>(&t), sizeof t);
        os.write(reinterpret_cast<const char*>(&np), sizeof np);
        for (size_t i = 0; i < m_.size(); ++i) {
            uint64_t n = m_[i].size();
            os.write(reinterpret_cast<const char*>(&n), sizeof n);
            os.write(reinterpret_cast<const char*>(m_[i].data()), std::streamsize(n * sizeof(Real)));
            os.write(reinterpret_cast<const char*>(v_[i].data()), std::streamsize(n * sizeof(Real)));
        }
    }

    void load_state(std::istream& is) {
        int64_t t = 0;
        uint64_t np = 0;
        is.read(reinterpret_cast<char*>(&t), sizeof t);
        is.read(reinterpret_cast<char*>(&np), sizeof np);
        if (!is || np != m_.size())
            throw std::runtime_error("AdamW::load_state: state does not match parameter list");
        for (size_t i = 0; i < m_.size(); ++i) {
            uint64_t n = 0;
            is.read(reinterpret_cast<char*>(&n), sizeof n);
            if (!is || n != m_[i].size())
                throw std::runtime_error("AdamW::load_state: moment size mismatch");
            is.read(reinterpret_cast<char*>(m_[i].data()), std::streamsize(n * sizeof(Real)));
            is.read(reinterpret_cast<char*>(v_[i].data()), std::streamsize(n * sizeof(Real)));
        }
        if (!is) throw std::runtime_error("AdamW::load_state: truncated state");
        t_ = t;
    }

private:
    AdamWConfig cfg_;
    int64_t t_ = 0;
    std::vector<std::vector<Real>> m_, v_;
};

}  // namespace magvlt::nd
