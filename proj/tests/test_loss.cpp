#include <doctest.h>

#include <cmath>
#include <random>

#include "csp/gradcheck.hpp"
#include "csp/loss.hpp"
#include "csp/rng.hpp"

using namespace csp;

TEST_CASE("center_loss")
{
    LossConfig cfg;

    SUBCASE("saturated-correct prediction is essentially zero")
    {
        Tensor p(1, 1, 4, 4, 1e-12);
        Tensor y(1, 1, 4, 4);
        Tensor m(1, 1, 4, 4);
        p.at(0, 0, 2, 2) = 1.0 - 1e-12;
        y.at(0, 0, 2, 2) = 1.0;
        m.at(0, 0, 2, 2) = 1.0;
        const LossGrad lg = center_loss(p, y, m, 1, cfg);
        CHECK(lg.value >= 0.0);
        CHECK(lg.value <= 1e-9);
    }

    SUBCASE("hand value: single positive at p = 0.5, exact-zero negatives")
    {
        Tensor p(1, 1, 2, 2, 0.0);
        Tensor y(1, 1, 2, 2);
        Tensor m(1, 1, 2, 2);
        p.at(0, 0, 0, 0) = 0.5;
        y.at(0, 0, 0, 0) = 1.0;
        m.at(0, 0, 0, 0) = 1.0;
        const LossGrad lg = center_loss(p, y, m, 1, cfg);
        CHECK(lg.value == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
    }

    SUBCASE("probabilities outside [0, 1] rejected")
    {
        Tensor p(1, 1, 2, 2, 1.5);
        Tensor y(1, 1, 2, 2);
        Tensor m(1, 1, 2, 2);
        CHECK_THROWS(center_loss(p, y, m, 1, cfg));
    }

    SUBCASE("K = 0 contributes zero")
    {
        Tensor p(1, 1, 2, 2, 0.3);
        Tensor y(1, 1, 2, 2);
        Tensor m(1, 1, 2, 2);
        const LossGrad lg = center_loss(p, y, m, 0, cfg);
        CHECK(lg.value == 0.0);
        for (double v : lg.grad.data) {
            CHECK(v == 0.0);
        }
    }

    SUBCASE("gradient matches finite differences")
    {
        auto rng = make_rng(111);
        std::uniform_real_distribution<double> mid(0.05, 0.95);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor p(1, 1, 5, 5);
            Tensor y(1, 1, 5, 5);
            Tensor m(1, 1, 5, 5);
            int positives = 0;
            for (std::size_t i = 0; i < p.numel(); ++i) {
                p.data[i] = mid(rng);
                if (mid(rng) < 0.15) {
                    y.data[i] = 1.0;
                    m.data[i] = 1.0;
                    ++positives;
                } else {
                    m.data[i] = 0.9 * mid(rng);
                }
            }
            if (positives == 0) {
                y.data[12] = 1.0;
                m.data[12] = 1.0;
                positives = 1;
            }
            const LossGrad lg = center_loss(p, y, m, positives, cfg);
            const Tensor fd = finite_diff_grad(
                [&](const Tensor& probe) { return center_loss(probe, y, m, positives, cfg).value; },
                p, 1e-6);
            CHECK(worst_rel_error(lg.grad, fd) < 1e-5);
        }
    }

    SUBCASE("gamma = 0 with zero mask reduces to class-balanced cross-entropy")
    {
        LossConfig plain = cfg;
        plain.gamma = 0.0;
        auto rng = make_rng(113);
        std::uniform_real_distribution<double> mid(0.1, 0.9);
        Tensor p(1, 1, 4, 4);
        Tensor y(1, 1, 4, 4);
        Tensor m(1, 1, 4, 4); // all zeros
        int positives = 0;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            p.data[i] = mid(rng);
            if (i % 5 == 0) {
                y.data[i] = 1.0;
                ++positives;
            }
        }
        const LossGrad lg = center_loss(p, y, m, positives, plain);
        double expected = 0.0;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            expected -= y.data[i] == 1.0 ? std::log(p.data[i]) : std::log(1.0 - p.data[i]);
        }
        expected /= positives;
        CHECK(lg.value == doctest::Approx(expected).epsilon(1e-12));
    }

    SUBCASE("raising M at a negative cell lowers its contribution")
    {
        auto rng = make_rng(117);
        std::uniform_real_distribution<double> mid(0.1, 0.9);
        for (int trial = 0; trial < 50; ++trial) {
            Tensor p(1, 1, 3, 3, mid(rng));
            Tensor y(1, 1, 3, 3);
            y.at(0, 0, 0, 0) = 1.0;
            Tensor m1(1, 1, 3, 3);
            Tensor m2(1, 1, 3, 3);
            const double lo = 0.8 * mid(rng);
            m1.at(0, 0, 1, 1) = lo;
            m2.at(0, 0, 1, 1) = lo + 0.1;
            const double v1 = center_loss(p, y, m1, 1, LossConfig{}).value;
            const double v2 = center_loss(p, y, m2, 1, LossConfig{}).value;
            CHECK(v2 < v1);
        }
    }
}

TEST_CASE("smooth_l1")
{
    CHECK(smooth_l1(0.0, 1.0).first == 0.0);
    CHECK(smooth_l1(0.5, 1.0).first == doctest::Approx(0.125));
    CHECK(smooth_l1(2.0, 1.0).first == doctest::Approx(1.5));
    CHECK(smooth_l1(-2.0, 1.0).first == doctest::Approx(1.5));

    SUBCASE("continuous value and derivative at the transition")
    {
        const double delta = 1.0, eps = 1e-9;
        const auto below = smooth_l1(delta - eps, delta);
        const auto above = smooth_l1(delta + eps, delta);
        CHECK(std::abs(below.first - above.first) < 1e-8);
        CHECK(std::abs(below.second - above.second) < 1e-8);
        CHECK(above.second == 1.0);
    }

    CHECK_THROWS(smooth_l1(1.0, 0.0));
}

TEST_CASE("scale_loss")
{
    LossConfig cfg;

    SUBCASE("perfect prediction is zero")
    {
        Tensor s(1, 1, 3, 3, 1.7);
        Tensor t(1, 1, 3, 3, 1.7);
        Tensor w(1, 1, 3, 3, 1.0);
        CHECK(scale_loss(s, t, w, cfg).value == 0.0);
    }

    SUBCASE("single weighted cell with error 2")
    {
        Tensor s(1, 1, 3, 3);
        Tensor t(1, 1, 3, 3);
        Tensor w(1, 1, 3, 3);
        s.at(0, 0, 1, 1) = 2.0;
        w.at(0, 0, 1, 1) = 1.0;
        CHECK(scale_loss(s, t, w, cfg).value == doctest::Approx(1.5));
    }

    SUBCASE("no weighted cells gives zero")
    {
        Tensor s(1, 1, 2, 2, 3.0);
        Tensor t(1, 1, 2, 2);
        Tensor w(1, 1, 2, 2);
        CHECK(scale_loss(s, t, w, cfg).value == 0.0);
    }

    SUBCASE("gradient matches finite differences")
    {
        auto rng = make_rng(119);
        std::uniform_real_distribution<double> d(-2.0, 2.0);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor s(1, 2, 4, 4), t(1, 2, 4, 4), w(1, 2, 4, 4);
            for (std::size_t i = 0; i < s.numel(); ++i) {
                s.data[i] = d(rng);
                t.data[i] = d(rng);
                w.data[i] = (i % 3 == 0) ? 1.0 : 0.0;
            }
            const LossGrad lg = scale_loss(s, t, w, cfg);
            const Tensor fd = finite_diff_grad(
                [&](const Tensor& probe) { return scale_loss(probe, t, w, cfg).value; }, s, 1e-6);
            CHECK(worst_rel_error(lg.grad, fd) < 1e-5);
        }
    }
}

TEST_CASE("offset_loss")
{
    LossConfig cfg;

    SUBCASE("exact offsets give zero")
    {
        Tensor o(1, 2, 3, 3, 0.25);
        Tensor t(1, 2, 3, 3, 0.25);
        Tensor w(1, 1, 3, 3, 1.0);
        CHECK(offset_loss(o, t, w, cfg).value == 0.0);
    }

    SUBCASE("one positive with error (0.5, 0) averages to 0.0625")
    {
        Tensor o(1, 2, 3, 3);
        Tensor t(1, 2, 3, 3);
        Tensor w(1, 1, 3, 3);
        o.at(0, 0, 1, 1) = 0.5;
        w.at(0, 0, 1, 1) = 1.0;
        CHECK(offset_loss(o, t, w, cfg).value == doctest::Approx(0.0625));
    }

    SUBCASE("gradient matches finite differences")
    {
        auto rng = make_rng(121);
        std::uniform_real_distribution<double> d(-0.5, 1.5);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor o(1, 2, 4, 4), t(1, 2, 4, 4), w(1, 1, 4, 4);
            for (std::size_t i = 0; i < o.numel(); ++i) {
                o.data[i] = d(rng);
                t.data[i] = d(rng);
            }
            for (std::size_t i = 0; i < w.numel(); ++i) {
                w.data[i] = (i % 4 == 0) ? 1.0 : 0.0;
            }
            const LossGrad lg = offset_loss(o, t, w, cfg);
            const Tensor fd = finite_diff_grad(
                [&](const Tensor& probe) { return offset_loss(probe, t, w, cfg).value; }, o, 1e-6);
            CHECK(worst_rel_error(lg.grad, fd) < 1e-5);
        }
    }
}

TEST_CASE("total_loss")
{
    LossConfig cfg;

    const LossReport r = total_loss(1.0, 2.0, 3.0, cfg);
    CHECK(r.total == doctest::Approx(0.01 + 2.0 + 0.3).epsilon(1e-12));
    CHECK(std::abs(r.total - (cfg.lambda_c * r.center + cfg.lambda_s * r.scale +
                              cfg.lambda_o * r.offset)) < 1e-12);

    CHECK(total_loss(0.0, 0.0, 0.0, cfg).total == 0.0);

    LossConfig no_off = cfg;
    no_off.lambda_o = 0.0;
    CHECK(total_loss(1.0, 2.0, 3.0, no_off).total == doctest::Approx(2.01));

    const LossReport dropped = total_loss(1.0, 2.0, 3.0, cfg, false);
    CHECK(dropped.offset == 0.0);
    CHECK(dropped.total == doctest::Approx(2.01));

    CHECK_THROWS(total_loss(std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0, cfg));
}
