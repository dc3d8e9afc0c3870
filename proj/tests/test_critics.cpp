#include <doctest.h>

#include <cmath>

#include "reachguard/critics.hpp"

using namespace reachguard;

TEST_CASE("hj target arithmetic") {
    CHECK(hj_target(1.0, 2.0, 0.9) == doctest::Approx(1.0));
    CHECK(hj_target(1.0, 0.5, 0.9) == doctest::Approx(0.55));
    CHECK(hj_target(0.3, -5.0, 0.0) == doctest::Approx(0.3));
    CHECK(hj_target_known_policy(1.0, 0.5, 0.9) == hj_target(1.0, 0.5, 0.9));
    CHECK(hj_target_known_policy(0.7, 9.0, 0.0) == doctest::Approx(0.7));
}

TEST_CASE("hj target bound and monotonicity") {
    Rng rng(3);
    for (int i = 0; i < 2000; ++i) {
        const double l = rng.uniform(-2, 2);
        const double q = rng.uniform(-3, 3);
        const double g = rng.uniform(0, 0.999999);
        const double t = hj_target(l, q, g);
        CHECK(t <= l + 1e-12);
        if (q >= l) CHECK(t == doctest::Approx(l));
        // nondecreasing in q and l
        CHECK(hj_target(l, q + 0.1, g) >= t - 1e-12);
        CHECK(hj_target(l + 0.1, q, g) >= t - 1e-12);
    }
}

TEST_CASE("reach target mirrors the avoid form") {
    CHECK(hj_target_reach(-1.0, 0.5, 0.9) == doctest::Approx(-0.1 + 0.45));
    CHECK(hj_target_reach(1.0, 0.5, 0.9) == doctest::Approx(1.0));
    Rng rng(4);
    for (int i = 0; i < 500; ++i) {
        const double l = rng.uniform(-2, 2);
        const double q = rng.uniform(-3, 3);
        const double g = rng.uniform(0, 0.999999);
        CHECK(hj_target_reach(l, q, g) == doctest::Approx(-hj_target(-l, -q, g)));
    }
}

TEST_CASE("sqrl target") {
    CHECK(sqrl_target(1, 123.0, 0.9) == 1.0);
    CHECK(sqrl_target(0, 0.5, 0.9) == doctest::Approx(0.45));
    CHECK(sqrl_target(0, 0.0, 0.9) == 0.0);
}

TEST_CASE("gamma schedule") {
    CHECK(gamma_schedule(0, 1000, 0.85, 1.0) == doctest::Approx(0.85));
    CHECK(gamma_schedule(1000, 1000, 0.85, 1.0) == doctest::Approx(0.999999));
    CHECK(gamma_schedule(500, 1000, 0.85, 1.0) == doctest::Approx(0.925));
}

TEST_CASE("sqrl fixed point on deterministic chains") {
    // safe self-loop: the fixed point is zero
    const double gamma = 0.9;
    double q_loop = 0.7;
    for (int i = 0; i < 500; ++i) q_loop = sqrl_target(0, q_loop, gamma);
    CHECK(q_loop == doctest::Approx(0.0).epsilon(1e-9));

    // 4-state corridor into a failure sink: Q(s_i) = gamma^(3-i)
    std::vector<double> q(4, 0.0);
    for (int sweep = 0; sweep < 200; ++sweep) {
        std::vector<double> next(4);
        for (int i = 0; i < 4; ++i) {
            const int event = i == 3 ? 1 : 0;
            next[i] = sqrl_target(event, i < 3 ? q[i + 1] : 0.0, gamma);
        }
        q = next;
    }
    for (int i = 0; i < 4; ++i) CHECK(q[i] == doctest::Approx(std::pow(gamma, 3 - i)));
}

TEST_CASE("auroc on known cases") {
    CHECK(auroc({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}) == doctest::Approx(1.0));
    CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == doctest::Approx(0.5));
    CHECK(auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75));
    CHECK_THROWS_AS(auroc({0.3, 0.4}, {1, 1}), DomainError);

    // invariance under strictly increasing transforms
    Rng rng(5);
    std::vector<double> scores(200);
    std::vector<int> labels(200);
    for (int i = 0; i < 200; ++i) {
        scores[i] = rng.uniform(-3, 3);
        labels[i] = rng.uniform() < 0.4 ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    const double base = auroc(scores, labels);
    std::vector<double> warped(scores);
    for (auto& s : warped) s = std::exp(0.7 * s) + 3.0 * s;
    CHECK(auroc(warped, labels) == doctest::Approx(base));
}

namespace {

Transition make_tr(std::vector<double> obs, ControlVec u, std::vector<double> obs_next,
                   TerminalKind term, double l_x) {
    Transition t;
    t.obs = std::move(obs);
    t.u = std::move(u);
    t.obs_next = std::move(obs_next);
    t.terminal = term;
    t.l_x = l_x;
    t.raw_x = t.obs;
    t.raw_next = t.obs_next;
    return t;
}

}  // namespace

TEST_CASE("cql loss reductions") {
    Rng rng(6);
    Mlp critic = Mlp::make({3, 8, 1}, Activation::tanh_act, rng);
    Mlp target = critic;
    auto policy = [](const StateVec&, const std::vector<double>&) -> ControlVec {
        return {0.25};
    };

    std::vector<Transition> batch;
    batch.push_back(make_tr({0.1, 0.2}, {0.5}, {0.15, 0.25}, TerminalKind::none, 0.8));
    batch.push_back(make_tr({-0.4, 0.1}, {-0.3}, {-0.35, 0.2}, TerminalKind::failure, 0.1));

    const double gamma_s = 0.9;
    // alpha = 0 reduces to the plain MSE objective
    const double l0 = cql_loss(batch, critic, policy, 0.0, gamma_s, TaskMode::avoid, target);
    double mse = 0.0;
    for (const auto& tr : batch) {
        double q_next = 0.0;
        if (tr.terminal == TerminalKind::none) {
            std::vector<double> in(tr.obs_next);
            in.push_back(0.25);
            q_next = target.forward(in)[0];
        }
        const int event = tr.terminal == TerminalKind::failure ? 1 : 0;
        const double y = sqrl_target(event, q_next, gamma_s);
        std::vector<double> in(tr.obs);
        in.insert(in.end(), tr.u.begin(), tr.u.end());
        const double q = critic.forward(in)[0];
        mse += 0.5 * (q - y) * (q - y);
    }
    CHECK(l0 == doctest::Approx(mse / 2.0));

    // constant critic: the regularizer vanishes
    Mlp constant = critic;
    for (auto& w : constant.W)
        for (auto& v : w) v = 0.0;
    for (auto& b : constant.b)
        for (auto& v : b) v = 0.0;
    constant.b.back()[0] = 0.7;
    const double with_reg =
        cql_loss(batch, constant, policy, 0.5, gamma_s, TaskMode::avoid, constant);
    const double without =
        cql_loss(batch, constant, policy, 0.0, gamma_s, TaskMode::avoid, constant);
    CHECK(with_reg == doctest::Approx(without));

    // hand-computed two-sample loss against the full formula
    const double alpha = 0.3;
    double reg = 0.0;
    for (const auto& tr : batch) {
        std::vector<double> in(tr.obs);
        in.push_back(0.25);
        const double q_pi = critic.forward(in)[0];
        std::vector<double> ind(tr.obs);
        ind.insert(ind.end(), tr.u.begin(), tr.u.end());
        reg += q_pi - critic.forward(ind)[0];
    }
    const double expect = mse / 2.0 - alpha * reg / 2.0;
    CHECK(cql_loss(batch, critic, policy, alpha, gamma_s, TaskMode::avoid, target) ==
          doctest::Approx(expect));
}

TEST_CASE("replay buffer ring and sampling") {
    ReplayBuffer buf(8);
    for (int i = 0; i < 20; ++i) {
        Transition t;
        t.l_x = i;
        buf.push(std::move(t));
    }
    CHECK(buf.size() == 8);
    // slots hold the last 8 transitions in ring order
    double min_l = 1e9, max_l = -1e9;
    for (std::size_t i = 0; i < buf.size(); ++i) {
        min_l = std::min(min_l, buf[i].l_x);
        max_l = std::max(max_l, buf[i].l_x);
    }
    CHECK(min_l == 12.0);
    CHECK(max_l == 19.0);

    // uniform sampling touches every occupied slot
    Rng rng(7);
    std::vector<int> counts(8, 0);
    for (int i = 0; i < 4000; ++i)
        for (std::size_t idx : buf.sample_indices(4, rng)) counts[idx]++;
    for (int c : counts) {
        CHECK(c > 1600);
        CHECK(c < 2400);
    }
}

TEST_CASE("prioritized replay samples proportionally") {
    ReplayBuffer buf(4, true);
    for (int i = 0; i < 4; ++i) {
        Transition t;
        t.l_x = i;
        buf.push(std::move(t), i == 0 ? 3.0 : 1.0);
    }
    Rng rng(8);
    std::vector<int> counts(4, 0);
    const int draws = 30000;
    for (int i = 0; i < draws; ++i) counts[buf.sample_indices(1, rng)[0]]++;
    // slot 0 carries half of the total mass
    CHECK(static_cast<double>(counts[0]) / draws == doctest::Approx(0.5).epsilon(0.05));
    CHECK(static_cast<double>(counts[1]) / draws == doctest::Approx(1.0 / 6.0).epsilon(0.1));
}

TEST_CASE("critic trainer regresses onto l at gamma zero") {
    CriticConfig cfg;
    cfg.rule = CriticRule::hj;
    cfg.gamma_start = cfg.gamma_end = 0.0;
    cfg.lr = 3e-3;
    cfg.batch_size = 16;
    cfg.total_steps = 2000;
    Rng rng(9);
    CriticTrainer trainer = CriticTrainer::make(2, 1, cfg, rng);

    ReplayBuffer buf(256);
    Rng data(10);
    for (int i = 0; i < 256; ++i) {
        const double x = data.uniform(-1, 1);
        const double v = data.uniform(-1, 1);
        Transition t = make_tr({x, v}, {data.uniform(-1, 1)}, {x, v}, TerminalKind::none,
                               1.0 - std::abs(x));
        buf.push(std::move(t));
    }
    auto policy = [](const StateVec&, const std::vector<double>&) -> ControlVec { return {0.0}; };
    Rng sampler(11);
    for (int step = 0; step < 2000; ++step)
        trainer.train_step(buf, buf.sample_indices(16, sampler), step, policy);

    double err = 0.0;
    for (std::size_t i = 0; i < 64; ++i) {
        const Transition& tr = buf[i];
        err += std::abs(trainer.q_value(tr.obs, tr.u) - tr.l_x);
    }
    CHECK(err / 64.0 < 0.05);
}
