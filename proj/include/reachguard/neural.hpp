#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "reachguard/common.hpp"
#include "reachguard/dynamics.hpp"

namespace reachguard {

enum class Activation : std::uint8_t { relu = 0, tanh_act = 1 };

struct MlpGrads {
    std::vector<std::vector<double>> dW;
    std::vector<std::vector<double>> db;
    void zero();
    void scale(double s);
    void add(const MlpGrads& other, double s = 1.0);
    bool finite() const;
};

// Fully connected network, 64-bit throughout. Hidden layers use the given
// activation; the output layer is identity unless activate_output is set
// (policy trunks want an activated last layer).
class Mlp {
public:
    Mlp() = default;
    static Mlp make(std::vector<int> sizes, Activation act, Rng& rng,
                    bool activate_output = false);

    struct Cache {
        std::vector<std::vector<double>> acts;  // acts[0] = input, acts[L] = output
        std::vector<std::vector<double>> pre;   // pre-activations per layer
    };

    std::vector<double> forward(std::span<const double> x, Cache* cache = nullptr) const;

    // Exact reverse-mode gradients for a scalar loss with dL/dy given.
    // Accumulates parameter gradients and returns dL/dx.
    std::vector<double> backward(const Cache& cache, std::span<const double> dL_dy,
                                 MlpGrads& grads) const;

    MlpGrads zero_grads() const;
    int input_dim() const { return sizes.front(); }
    int output_dim() const { return sizes.back(); }
    int layer_count() const { return static_cast<int>(W.size()); }
    std::size_t param_count() const;

    // "MLPC" block: magic, version, layout, then parameters as
    // little-endian 64-bit floats in layer order.
    void save(std::ostream& out) const;
    static Mlp load(std::istream& in);
    void save_file(const std::string& path) const;
    static Mlp load_file(const std::string& path);

    std::vector<int> sizes;
    Activation act = Activation::tanh_act;
    bool activate_output = false;
    std::vector<std::vector<double>> W;  // row-major (out x in) per layer
    std::vector<std::vector<double>> b;
};

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    long nan_skips = 0;
    std::vector<std::vector<double>> mW, vW, mb, vb;

    static AdamState for_net(const Mlp& net, double lr);
    // Standard bias-corrected update; a non-finite gradient skips the whole
    // update and bumps nan_skips.
    void apply(Mlp& net, const MlpGrads& grads);
};

void polyak_update(Mlp& target, const Mlp& online, double tau);

// Max relative error between backward() and central finite differences over
// all parameters and inputs, for loss L = sum(y).
double finite_diff_check(const Mlp& net, const std::vector<double>& x, double h);

// Squashed-Gaussian policy: u = tanh(mu + sigma * xi) scaled to the action
// box, with the tanh change-of-variables in log_prob.
class GaussianPolicyHead {
public:
    GaussianPolicyHead() = default;
    static GaussianPolicyHead make(int obs_dim, const std::vector<int>& hidden, int act_dim,
                                   std::vector<double> act_lo, std::vector<double> act_hi,
                                   Rng& rng);

    struct Sample {
        ControlVec u;  // scaled to bounds
        double log_prob = 0.0;
        // caches for backward
        Mlp::Cache trunk_cache;
        std::vector<double> feat, mu, log_std_raw, log_std, sigma, xi, tanh_h;
    };

    // noise == nullptr gives the deterministic evaluation action (xi = 0).
    Sample sample(const std::vector<double>& obs, Rng* noise) const;
    Sample sample_with_noise(const std::vector<double>& obs, const std::vector<double>& xi) const;

    // density of an arbitrary in-bounds action
    double log_prob(const std::vector<double>& obs, const ControlVec& u_scaled) const;

    struct Grads {
        MlpGrads trunk, mu, log_std;
        void zero();
        bool finite() const;
    };
    Grads zero_grads() const;

    // Reparameterized gradients: dL_du per scaled action dim plus a scalar
    // weight on log_prob. xi is treated as fixed.
    void backward(const Sample& s, const std::vector<double>& dL_du, double dL_dlogp,
                  Grads& grads) const;

    int act_dim() const { return mu_head.output_dim(); }

    void save(std::ostream& out) const;
    static GaussianPolicyHead load(std::istream& in);

    Mlp trunk;     // obs -> features (activated output)
    Mlp mu_head;   // features -> act_dim
    Mlp log_std_head;
    std::vector<double> act_lo, act_hi;
    double log_std_min = -20.0;
    double log_std_max = 2.0;
};

struct PolicyAdam {
    AdamState trunk, mu, log_std;
    static PolicyAdam for_head(const GaussianPolicyHead& head, double lr);
    void apply(GaussianPolicyHead& head, const GaussianPolicyHead::Grads& grads);
};

void polyak_update(GaussianPolicyHead& target, const GaussianPolicyHead& online, double tau);

}  // namespace reachguard
