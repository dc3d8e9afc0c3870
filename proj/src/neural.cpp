#include "reachguard/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace reachguard {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

// log(1 - tanh(h)^2) in the numerically stable form
double log_one_minus_tanh2(double h) { return 2.0 * (std::log(2.0) - h - softplus(-2.0 * h)); }

constexpr double kLog2Pi = 1.8378770664093453;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("truncated network checkpoint");
    return v;
}

}  // namespace

void MlpGrads::zero() {
    for (auto& w : dW) std::fill(w.begin(), w.end(), 0.0);
    for (auto& v : db) std::fill(v.begin(), v.end(), 0.0);
}

void MlpGrads::scale(double s) {
    for (auto& w : dW)
        for (auto& x : w) x *= s;
    for (auto& v : db)
        for (auto& x : v) x *= s;
}

void MlpGrads::add(const MlpGrads& other, double s) {
    for (std::size_t l = 0; l < dW.size(); ++l) {
        for (std::size_t i = 0; i < dW[l].size(); ++i) dW[l][i] += s * other.dW[l][i];
        for (std::size_t i = 0; i < db[l].size(); ++i) db[l][i] += s * other.db[l][i];
    }
}

bool MlpGrads::finite() const {
    for (const auto& w : dW)
        if (!all_finite(w)) return false;
    for (const auto& v : db)
        if (!all_finite(v)) return false;
    return true;
}

Mlp Mlp::make(std::vector<int> sizes, Activation act, Rng& rng, bool activate_output) {
    if (sizes.size() < 2) throw ConfigError("mlp needs at least input and output sizes");
    for (int s : sizes)
        if (s < 1) throw ConfigError("mlp layer sizes must be positive");
    Mlp net;
    net.sizes = std::move(sizes);
    net.act = act;
    net.activate_output = activate_output;
    const int layers = static_cast<int>(net.sizes.size()) - 1;
    net.W.resize(layers);
    net.b.resize(layers);
    for (int l = 0; l < layers; ++l) {
        const int fan_in = net.sizes[l];
        const int fan_out = net.sizes[l + 1];
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        net.W[l].resize(static_cast<std::size_t>(fan_out) * fan_in);
        for (auto& w : net.W[l]) w = rng.uniform(-bound, bound);
        net.b[l].assign(fan_out, 0.0);
    }
    return net;
}

std::vector<double> Mlp::forward(std::span<const double> x, Cache* cache) const {
    if (static_cast<int>(x.size()) != sizes.front())
        throw DomainError("mlp forward: input size mismatch");
    std::vector<double> cur(x.begin(), x.end());
    if (cache) {
        cache->acts.assign(1, cur);
        cache->pre.clear();
    }
    const int layers = layer_count();
    for (int l = 0; l < layers; ++l) {
        const int n_out = sizes[l + 1];
        const int n_in = sizes[l];
        std::vector<double> z(n_out);
        const double* w = W[l].data();
        for (int o = 0; o < n_out; ++o) {
            double acc = b[l][o];
            const double* row = w + static_cast<std::size_t>(o) * n_in;
            for (int i = 0; i < n_in; ++i) acc += row[i] * cur[i];
            z[o] = acc;
        }
        if (cache) cache->pre.push_back(z);
        const bool activated = l + 1 < layers || activate_output;
        if (activated) {
            if (act == Activation::relu)
                for (auto& v : z) v = v > 0.0 ? v : 0.0;
            else
                for (auto& v : z) v = std::tanh(v);
        }
        cur = std::move(z);
        if (cache) cache->acts.push_back(cur);
    }
    return cur;
}

std::vector<double> Mlp::backward(const Cache& cache, std::span<const double> dL_dy,
                                  MlpGrads& grads) const {
    const int layers = layer_count();
    if (static_cast<int>(cache.pre.size()) != layers)
        throw DomainError("mlp backward: cache does not match network");
    if (static_cast<int>(dL_dy.size()) != sizes.back())
        throw DomainError("mlp backward: output gradient size mismatch");

    std::vector<double> delta(dL_dy.begin(), dL_dy.end());
    for (int l = layers - 1; l >= 0; --l) {
        const int n_out = sizes[l + 1];
        const int n_in = sizes[l];
        const bool activated = l + 1 < layers || activate_output;
        if (activated) {
            if (act == Activation::relu) {
                for (int o = 0; o < n_out; ++o)
                    if (cache.pre[l][o] <= 0.0) delta[o] = 0.0;
            } else {
                for (int o = 0; o < n_out; ++o) {
                    const double t = cache.acts[l + 1][o];
                    delta[o] *= 1.0 - t * t;
                }
            }
        }
        const std::vector<double>& a_in = cache.acts[l];
        double* dw = grads.dW[l].data();
        for (int o = 0; o < n_out; ++o) {
            const double d = delta[o];
            grads.db[l][o] += d;
            double* row = dw + static_cast<std::size_t>(o) * n_in;
            for (int i = 0; i < n_in; ++i) row[i] += d * a_in[i];
        }
        std::vector<double> prev(n_in, 0.0);
        const double* w = W[l].data();
        for (int o = 0; o < n_out; ++o) {
            const double d = delta[o];
            const double* row = w + static_cast<std::size_t>(o) * n_in;
            for (int i = 0; i < n_in; ++i) prev[i] += d * row[i];
        }
        delta = std::move(prev);
    }
    return delta;
}

MlpGrads Mlp::zero_grads() const {
    MlpGrads g;
    g.dW.resize(W.size());
    g.db.resize(b.size());
    for (std::size_t l = 0; l < W.size(); ++l) {
        g.dW[l].assign(W[l].size(), 0.0);
        g.db[l].assign(b[l].size(), 0.0);
    }
    return g;
}

std::size_t Mlp::param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < W.size(); ++l) n += W[l].size() + b[l].size();
    return n;
}

void Mlp::save(std::ostream& out) const {
    out.write("MLPC", 4);
    write_pod<std::uint16_t>(out, 1);
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(act));
    write_pod<std::uint8_t>(out, activate_output ? 1 : 0);
    write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(sizes.size()));
    for (int s : sizes) write_pod<std::int32_t>(out, s);
    for (std::size_t l = 0; l < W.size(); ++l) {
        out.write(reinterpret_cast<const char*>(W[l].data()),
                  static_cast<std::streamsize>(W[l].size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(b[l].data()),
                  static_cast<std::streamsize>(b[l].size() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing network checkpoint");
}

Mlp Mlp::load(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MLPC", 4) != 0)
        throw FormatError("bad magic in network checkpoint");
    if (read_pod<std::uint16_t>(in) != 1)
        throw FormatError("unsupported network checkpoint version");
    Mlp net;
    const auto act_code = read_pod<std::uint8_t>(in);
    if (act_code > 1) throw FormatError("bad activation code in checkpoint");
    net.act = static_cast<Activation>(act_code);
    net.activate_output = read_pod<std::uint8_t>(in) != 0;
    const auto n_sizes = read_pod<std::uint16_t>(in);
    if (n_sizes < 2) throw FormatError("bad layer count in checkpoint");
    net.sizes.resize(n_sizes);
    for (auto& s : net.sizes) {
        s = read_pod<std::int32_t>(in);
        if (s < 1) throw FormatError("bad layer size in checkpoint");
    }
    const int layers = n_sizes - 1;
    net.W.resize(layers);
    net.b.resize(layers);
    for (int l = 0; l < layers; ++l) {
        net.W[l].resize(static_cast<std::size_t>(net.sizes[l + 1]) * net.sizes[l]);
        net.b[l].resize(net.sizes[l + 1]);
        in.read(reinterpret_cast<char*>(net.W[l].data()),
                static_cast<std::streamsize>(net.W[l].size() * sizeof(double)));
        in.read(reinterpret_cast<char*>(net.b[l].data()),
                static_cast<std::streamsize>(net.b[l].size() * sizeof(double)));
        if (!in) throw FormatError("truncated network checkpoint");
    }
    return net;
}

void Mlp::save_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    save(out);
}

Mlp Mlp::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    return load(in);
}

AdamState AdamState::for_net(const Mlp& net, double lr_) {
    AdamState s;
    s.lr = lr_;
    s.mW.resize(net.W.size());
    s.vW.resize(net.W.size());
    s.mb.resize(net.b.size());
    s.vb.resize(net.b.size());
    for (std::size_t l = 0; l < net.W.size(); ++l) {
        s.mW[l].assign(net.W[l].size(), 0.0);
        s.vW[l].assign(net.W[l].size(), 0.0);
        s.mb[l].assign(net.b[l].size(), 0.0);
        s.vb[l].assign(net.b[l].size(), 0.0);
    }
    return s;
}

void AdamState::apply(Mlp& net, const MlpGrads& grads) {
    if (!grads.finite()) {
        ++nan_skips;
        return;
    }
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t l = 0; l < net.W.size(); ++l) {
        for (std::size_t i = 0; i < net.W[l].size(); ++i) {
            const double g = grads.dW[l][i];
            mW[l][i] = beta1 * mW[l][i] + (1.0 - beta1) * g;
            vW[l][i] = beta2 * vW[l][i] + (1.0 - beta2) * g * g;
            net.W[l][i] -= lr * (mW[l][i] / bc1) / (std::sqrt(vW[l][i] / bc2) + eps);
        }
        for (std::size_t i = 0; i < net.b[l].size(); ++i) {
            const double g = grads.db[l][i];
            mb[l][i] = beta1 * mb[l][i] + (1.0 - beta1) * g;
            vb[l][i] = beta2 * vb[l][i] + (1.0 - beta2) * g * g;
            net.b[l][i] -= lr * (mb[l][i] / bc1) / (std::sqrt(vb[l][i] / bc2) + eps);
        }
    }
}

void polyak_update(Mlp& target, const Mlp& online, double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw DomainError("polyak_update requires tau in (0,1]");
    if (target.sizes != online.sizes) throw DomainError("polyak_update shape mismatch");
    for (std::size_t l = 0; l < target.W.size(); ++l) {
        for (std::size_t i = 0; i < target.W[l].size(); ++i)
            target.W[l][i] = tau * online.W[l][i] + (1.0 - tau) * target.W[l][i];
        for (std::size_t i = 0; i < target.b[l].size(); ++i)
            target.b[l][i] = tau * online.b[l][i] + (1.0 - tau) * target.b[l][i];
    }
}

double finite_diff_check(const Mlp& net, const std::vector<double>& x, double h) {
    if (!(h > 0.0)) throw DomainError("finite_diff_check requires h > 0");
    auto loss_of = [&](const Mlp& n, const std::vector<double>& in) {
        const auto y = n.forward(in);
        double s = 0.0;
        for (double v : y) s += v;
        return s;
    };

    Mlp::Cache cache;
    const auto y = net.forward(x, &cache);
    MlpGrads grads = net.zero_grads();
    const std::vector<double> ones(y.size(), 1.0);
    const auto dx = net.backward(cache, ones, grads);

    double max_err = 0.0;
    auto rel = [](double a, double f) {
        return std::abs(a - f) / std::max({1.0, std::abs(a), std::abs(f)});
    };

    Mlp probe = net;
    for (std::size_t l = 0; l < net.W.size(); ++l) {
        for (std::size_t i = 0; i < net.W[l].size(); ++i) {
            const double orig = probe.W[l][i];
            probe.W[l][i] = orig + h;
            const double lp = loss_of(probe, x);
            probe.W[l][i] = orig - h;
            const double lm = loss_of(probe, x);
            probe.W[l][i] = orig;
            max_err = std::max(max_err, rel(grads.dW[l][i], (lp - lm) / (2.0 * h)));
        }
        for (std::size_t i = 0; i < net.b[l].size(); ++i) {
            const double orig = probe.b[l][i];
            probe.b[l][i] = orig + h;
            const double lp = loss_of(probe, x);
            probe.b[l][i] = orig - h;
            const double lm = loss_of(probe, x);
            probe.b[l][i] = orig;
            max_err = std::max(max_err, rel(grads.db[l][i], (lp - lm) / (2.0 * h)));
        }
    }
    std::vector<double> xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + h;
        const double lp = loss_of(net, xp);
        xp[i] = x[i] - h;
        const double lm = loss_of(net, xp);
        xp[i] = x[i];
        max_err = std::max(max_err, rel(dx[i], (lp - lm) / (2.0 * h)));
    }
    return max_err;
}

GaussianPolicyHead GaussianPolicyHead::make(int obs_dim, const std::vector<int>& hidden,
                                            int act_dim, std::vector<double> act_lo,
                                            std::vector<double> act_hi, Rng& rng) {
    if (hidden.empty()) throw ConfigError("policy trunk needs at least one hidden layer");
    if (static_cast<int>(act_lo.size()) != act_dim || static_cast<int>(act_hi.size()) != act_dim)
        throw ConfigError("policy bounds must match the action dimension");
    GaussianPolicyHead head;
    std::vector<int> trunk_sizes;
    trunk_sizes.push_back(obs_dim);
    for (int hdim : hidden) trunk_sizes.push_back(hdim);
    head.trunk = Mlp::make(trunk_sizes, Activation::relu, rng, /*activate_output=*/true);
    head.mu_head = Mlp::make({hidden.back(), act_dim}, Activation::relu, rng);
    head.log_std_head = Mlp::make({hidden.back(), act_dim}, Activation::relu, rng);
    head.act_lo = std::move(act_lo);
    head.act_hi = std::move(act_hi);
    return head;
}

GaussianPolicyHead::Sample GaussianPolicyHead::sample_with_noise(
    const std::vector<double>& obs, const std::vector<double>& xi) const {
    Sample s;
    s.xi = xi;
    s.feat = trunk.forward(obs, &s.trunk_cache);
    s.mu = mu_head.forward(s.feat);
    s.log_std_raw = log_std_head.forward(s.feat);
    const int n = act_dim();
    s.log_std.resize(n);
    s.sigma.resize(n);
    s.tanh_h.resize(n);
    s.u.resize(n);
    double logp = 0.0;
    for (int i = 0; i < n; ++i) {
        s.log_std[i] = std::clamp(s.log_std_raw[i], log_std_min, log_std_max);
        s.sigma[i] = std::exp(s.log_std[i]);
        const double h = s.mu[i] + s.sigma[i] * xi[i];
        const double t = std::tanh(h);
        s.tanh_h[i] = t;
        const double center = 0.5 * (act_lo[i] + act_hi[i]);
        const double radius = 0.5 * (act_hi[i] - act_lo[i]);
        s.u[i] = center + radius * t;
        logp += -0.5 * xi[i] * xi[i] - 0.5 * kLog2Pi - s.log_std[i] - log_one_minus_tanh2(h) -
                std::log(radius);
    }
    s.log_prob = logp;
    return s;
}

GaussianPolicyHead::Sample GaussianPolicyHead::sample(const std::vector<double>& obs,
                                                      Rng* noise) const {
    std::vector<double> xi(act_dim(), 0.0);
    if (noise)
        for (auto& v : xi) v = noise->normal();
    return sample_with_noise(obs, xi);
}

double GaussianPolicyHead::log_prob(const std::vector<double>& obs,
                                    const ControlVec& u_scaled) const {
    const auto feat = trunk.forward(obs);
    const auto mu = mu_head.forward(feat);
    const auto ls_raw = log_std_head.forward(feat);
    double logp = 0.0;
    for (int i = 0; i < act_dim(); ++i) {
        const double center = 0.5 * (act_lo[i] + act_hi[i]);
        const double radius = 0.5 * (act_hi[i] - act_lo[i]);
        double t = (u_scaled[i] - center) / radius;
        t = std::clamp(t, -1.0 + 1e-12, 1.0 - 1e-12);
        const double h = std::atanh(t);
        const double ls = std::clamp(ls_raw[i], log_std_min, log_std_max);
        const double sigma = std::exp(ls);
        const double xi = (h - mu[i]) / sigma;
        logp += -0.5 * xi * xi - 0.5 * kLog2Pi - ls - log_one_minus_tanh2(h) - std::log(radius);
    }
    return logp;
}

void GaussianPolicyHead::Grads::zero() {
    trunk.zero();
    mu.zero();
    log_std.zero();
}

bool GaussianPolicyHead::Grads::finite() const {
    return trunk.finite() && mu.finite() && log_std.finite();
}

GaussianPolicyHead::Grads GaussianPolicyHead::zero_grads() const {
    Grads g;
    g.trunk = trunk.zero_grads();
    g.mu = mu_head.zero_grads();
    g.log_std = log_std_head.zero_grads();
    return g;
}

void GaussianPolicyHead::backward(const Sample& s, const std::vector<double>& dL_du,
                                  double dL_dlogp, Grads& grads) const {
    const int n = act_dim();
    std::vector<double> d_mu(n), d_ls(n);
    for (int i = 0; i < n; ++i) {
        const double radius = 0.5 * (act_hi[i] - act_lo[i]);
        const double t = s.tanh_h[i];
        const double du_dh = radius * (1.0 - t * t);
        // d log_prob / dh with xi fixed: the tanh correction contributes 2 tanh(h)
        const double dlogp_dh = 2.0 * t;
        const double dL_dh = dL_du[i] * du_dh + dL_dlogp * dlogp_dh;
        d_mu[i] = dL_dh;
        double g_ls = dL_dh * s.sigma[i] * s.xi[i] - dL_dlogp;
        // clamp gate on log_std
        if (s.log_std_raw[i] < log_std_min || s.log_std_raw[i] > log_std_max) g_ls = 0.0;
        d_ls[i] = g_ls;
    }
    // heads are single affine layers on the trunk features
    Mlp::Cache mu_cache, ls_cache;
    mu_cache.acts = {s.feat, s.mu};
    mu_cache.pre = {s.mu};
    ls_cache.acts = {s.feat, s.log_std_raw};
    ls_cache.pre = {s.log_std_raw};
    const auto d_feat_mu = mu_head.backward(mu_cache, d_mu, grads.mu);
    const auto d_feat_ls = log_std_head.backward(ls_cache, d_ls, grads.log_std);
    std::vector<double> d_feat(d_feat_mu.size());
    for (std::size_t i = 0; i < d_feat.size(); ++i) d_feat[i] = d_feat_mu[i] + d_feat_ls[i];
    trunk.backward(s.trunk_cache, d_feat, grads.trunk);
}

void GaussianPolicyHead::save(std::ostream& out) const {
    out.write("RGPH", 4);
    write_pod<std::uint16_t>(out, 1);
    write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(act_lo.size()));
    for (double v : act_lo) write_pod<double>(out, v);
    for (double v : act_hi) write_pod<double>(out, v);
    write_pod<double>(out, log_std_min);
    write_pod<double>(out, log_std_max);
    trunk.save(out);
    mu_head.save(out);
    log_std_head.save(out);
}

GaussianPolicyHead GaussianPolicyHead::load(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "RGPH", 4) != 0)
        throw FormatError("bad magic in policy checkpoint");
    if (read_pod<std::uint16_t>(in) != 1)
        throw FormatError("unsupported policy checkpoint version");
    GaussianPolicyHead head;
    const auto n = read_pod<std::uint16_t>(in);
    head.act_lo.resize(n);
    head.act_hi.resize(n);
    for (auto& v : head.act_lo) v = read_pod<double>(in);
    for (auto& v : head.act_hi) v = read_pod<double>(in);
    head.log_std_min = read_pod<double>(in);
    head.log_std_max = read_pod<double>(in);
    head.trunk = Mlp::load(in);
    head.mu_head = Mlp::load(in);
    head.log_std_head = Mlp::load(in);
    return head;
}

PolicyAdam PolicyAdam::for_head(const GaussianPolicyHead& head, double lr) {
    PolicyAdam a;
    a.trunk = AdamState::for_net(head.trunk, lr);
    a.mu = AdamState::for_net(head.mu_head, lr);
    a.log_std = AdamState::for_net(head.log_std_head, lr);
    return a;
}

void PolicyAdam::apply(GaussianPolicyHead& head, const GaussianPolicyHead::Grads& grads) {
    trunk.apply(head.trunk, grads.trunk);
    mu.apply(head.mu_head, grads.mu);
    log_std.apply(head.log_std_head, grads.log_std);
}

void polyak_update(GaussianPolicyHead& target, const GaussianPolicyHead& online, double tau) {
    polyak_update(target.trunk, online.trunk, tau);
    polyak_update(target.mu_head, online.mu_head, tau);
    polyak_update(target.log_std_head, online.log_std_head, tau);
}

}  // namespace reachguard
