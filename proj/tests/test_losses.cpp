#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "eir/error.hpp"
#include "eir/losses.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace eir;
using namespace testing::oracles;

TEST_SUITE("losses") {
    TEST_CASE("mbce matches a naive loop on random tensors") {
        testing::Rng rng(101);
        for (int trial = 0; trial < 100; ++trial) {
            const int k = testing::uniform_int(rng, 1, 6), h = testing::uniform_int(rng, 1, 9),
                      w = testing::uniform_int(rng, 1, 9);
            Tensor3 p(k, h, w);
            for (auto& v : p.data) v = testing::uniform(rng) < 0.05 ? testing::uniform_int(rng, 0, 1) : testing::uniform(rng);
            const auto t = random_targets(rng, k, h, w);
            const auto valid = random_valid(rng, h, w);
            CHECK(std::abs(mbce(p, t, valid) - oracle_mbce(p, t, valid)) <= 1e-9);
            const auto s = random_scores(rng, k, h, w);
            CHECK(std::abs(mbce_from_scores(s, t, valid).value - oracle_mbce(sigmoid(s), t, valid)) <= 1e-9);
        }
    }

    TEST_CASE("rskd matches a naive loop on random tensors") {
        testing::Rng rng(102);
        for (int trial = 0; trial < 100; ++trial) {
            const int h = testing::uniform_int(rng, 1, 9), w = testing::uniform_int(rng, 1, 9);
            const auto c = random_kd_case(rng, h, w);
            const auto q = testing::random_distribution(rng, c.k_old, h, w);
            const auto p = testing::random_distribution(rng, c.k_new, h, w);
            const double expect = oracle_rskd(q, p, c.label, c.old_cls, c.new_cls);
            CHECK(std::abs(rskd(q, p, c.label, c.old_cls, c.new_cls) - expect) <= 1e-9);
            CHECK(rskd(q, p, c.label, c.old_cls, c.new_cls) >= 0.0);
            const auto s = random_scores(rng, c.k_new, h, w);
            CHECK(std::abs(rskd_from_scores(q, s, c.label, c.old_cls, c.new_cls).value -
                           oracle_rskd(q, softmax(s), c.label, c.old_cls, c.new_cls)) <= 1e-9);
        }
    }

    TEST_CASE("mbce gradient matches finite differences") {
        testing::Rng rng(103);
        int checked = 0;
        for (int trial = 0; trial < 5; ++trial) {
            const int k = 4, h = 5, w = 6;
            auto s = random_scores(rng, k, h, w);
            const auto t = random_targets(rng, k, h, w);
            const auto valid = random_valid(rng, h, w);
            const auto g = mbce_from_scores(s, t, valid).grad;
            for (int probe = 0; probe < 10; ++probe) {
                const std::size_t i = std::uniform_int_distribution<std::size_t>(0, s.data.size() - 1)(rng);
                const double saved = s.data[i], eps = 1e-5;
                s.data[i] = saved + eps;
                const double up = mbce_from_scores(s, t, valid).value;
                s.data[i] = saved - eps;
                const double down = mbce_from_scores(s, t, valid).value;
                s.data[i] = saved;
                const double numeric = (up - down) / (2 * eps);
                if (std::abs(numeric) < 1e-10 && g.data[i] == 0.0) continue;  // masked pixel
                CHECK(rel_err(numeric, g.data[i]) <= 1e-3);
                ++checked;
            }
        }
        CHECK(checked >= 20);
    }

    TEST_CASE("rskd gradient matches finite differences") {
        testing::Rng rng(104);
        int checked = 0;
        for (int trial = 0; trial < 6; ++trial) {
            const int h = 4, w = 5;
            const auto c = random_kd_case(rng, h, w);
            const auto q = testing::random_distribution(rng, c.k_old, h, w);
            auto s = random_scores(rng, c.k_new, h, w);
            const auto g = rskd_from_scores(q, s, c.label, c.old_cls, c.new_cls).grad;
            for (int probe = 0; probe < 10; ++probe) {
                const std::size_t i = std::uniform_int_distribution<std::size_t>(0, s.data.size() - 1)(rng);
                const double saved = s.data[i], eps = 1e-5;
                s.data[i] = saved + eps;
                const double up = rskd_from_scores(q, s, c.label, c.old_cls, c.new_cls).value;
                s.data[i] = saved - eps;
                const double down = rskd_from_scores(q, s, c.label, c.old_cls, c.new_cls).value;
                s.data[i] = saved;
                const double numeric = (up - down) / (2 * eps);
                if (std::abs(numeric) < 1e-10 && g.data[i] == 0.0) continue;  // ignore pixel
                CHECK(rel_err(numeric, g.data[i]) <= 1e-3);
                ++checked;
            }
        }
        CHECK(checked >= 20);
    }

    TEST_CASE("total loss recomposes and its gradient matches finite differences") {
        testing::Rng rng(105);
        ConvSegNet old_net(3, 8, 1);
        ConvSegNet net = old_net;
        net.extend_head({3});
        for (std::size_t i = net.parameters().count() - 10; i < net.parameters().count(); ++i)
            net.parameters().flat(i) = testing::uniform(rng, -0.3, 0.3);
        const auto old = snapshot(old_net, 1);
        SegSample s{testing::random_image(rng, 12, 12), testing::random_blob_labels(rng, 12, 12, 3, 3), "s"};
        const auto rec = testing::random_record(rng, 1, 5, 4, "r");
        std::mt19937_64 r2(3);
        FusionOptions opt;
        opt.region_n = 4;
        const std::vector<InstanceRecord> recs{rec};
        const auto fused = fuse_all(s, recs, 4, opt, r2).fused;
        const double alpha = 2.5;

        auto grads = net.parameters().zeros_like();
        const auto l = total_loss(fused, recs, net, &old, alpha, &grads);
        CHECK(l.total == doctest::Approx(l.mbce_instance + l.mbce_image + alpha * l.rskd).epsilon(1e-14));
        CHECK(l.alpha == alpha);
        CHECK(l.mbce_instance > 0.0);
        CHECK(l.rskd > 0.0);

        // Each term against the standalone functions.
        const Mask all(rec.height(), rec.width(), 1);
        CHECK(std::abs(l.mbce_instance - oracle_mbce(sigmoid(net.forward(rec.pixels)), instance_targets(rec, 4), all)) <= 1e-9);
        CHECK(std::abs(l.mbce_image - oracle_mbce(sigmoid(net.forward(fused.image)), fused.soft_label, fused.valid)) <= 1e-9);
        CHECK(std::abs(l.rskd - oracle_rskd(old.probabilities(fused.image), softmax(net.forward(fused.image)),
                                             hard_labels(fused), {1, 2}, {3})) <= 1e-9);

        int checked = 0;
        const std::size_t n = net.parameters().count();
        for (int probe = 0; probe < 40 && checked < 25; ++probe) {
            const std::size_t i = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
            const double saved = net.parameters().flat(i), eps = 1e-6;
            net.parameters().flat(i) = saved + eps;
            const double up = total_loss(fused, recs, net, &old, alpha).total;
            net.parameters().flat(i) = saved - eps;
            const double down = total_loss(fused, recs, net, &old, alpha).total;
            net.parameters().flat(i) = saved;
            const double numeric = (up - down) / (2 * eps);
            if (std::abs(numeric) < 1e-9 && std::abs(grads.flat(i)) < 1e-9) continue;
            CAPTURE(i);
            CHECK(rel_err(numeric, grads.flat(i)) <= 1e-3);
            ++checked;
        }
        CHECK(checked >= 20);
    }

    TEST_CASE("loss gradients are linear in weight and alpha") {
        testing::Rng rng(106);
        ConvSegNet old_net(3, 8, 2);
        ConvSegNet net = old_net;
        net.extend_head({3});
        const auto old = snapshot(old_net, 1);
        SegSample s{testing::random_image(rng, 10, 10), testing::random_blob_labels(rng, 10, 10, 3, 2), "s"};
        const auto fused = to_fused(s, 4);
        auto grad_of = [&](double alpha, double weight) {
            auto g = net.parameters().zeros_like();
            total_loss(fused, {}, net, &old, alpha, &g, weight);
            return g;
        };
        const auto g0 = grad_of(0.0, 1.0), g1 = grad_of(1.0, 1.0), g3 = grad_of(3.0, 1.0), g3w = grad_of(3.0, 0.25);
        for (std::size_t i = 0; i < g0.count(); ++i) {
            CHECK(std::abs(g3.flat(i) - (g0.flat(i) + 3.0 * (g1.flat(i) - g0.flat(i)))) <= 1e-10);
            CHECK(std::abs(g3w.flat(i) - 0.25 * g3.flat(i)) <= 1e-12);
        }
        const auto l = total_loss(fused, {}, net, nullptr, 5.0);
        CHECK(l.rskd == 0.0);
        CHECK(l.mbce_instance == 0.0);
        CHECK(l.total == l.mbce_image);
    }

    TEST_CASE("mbce is smallest when predictions equal the targets") {
        testing::Rng rng(107);
        for (int trial = 0; trial < 50; ++trial) {
            const int k = 3, h = 3, w = 3;
            Tensor3 t(k, h, w);
            for (auto& v : t.data) v = testing::uniform(rng, 0.05, 0.95);
            const Mask valid(h, w, 1);
            const double at_target = mbce(t, t, valid);
            Tensor3 p = t;
            for (auto& v : p.data) v = std::clamp(v + testing::uniform(rng, -0.04, 0.04), 0.01, 0.99);
            CHECK(mbce(p, t, valid) >= at_target);
        }
    }

    TEST_CASE("rskd is smallest when the new model copies the old one") {
        testing::Rng rng(108);
        for (int trial = 0; trial < 50; ++trial) {
            const int h = 3, w = 3;
            std::set<ClassId> old_cls{1, 2}, new_cls{3};
            LabelMap label(h, w);
            for (auto& v : label.data) v = static_cast<ClassId>(testing::uniform_int(rng, 0, 2));
            const auto q = testing::random_distribution(rng, 3, h, w);
            Tensor3 p(4, h, w);
            const std::size_t n = p.plane_size();
            for (std::size_t i = 0; i < n; ++i)
                for (int c = 0; c < 3; ++c) p.data[c * n + i] = q.data[c * n + i];
            const double copied = rskd(q, p, label, old_cls, new_cls);
            double entropy = 0.0;
            for (double v : q.data) entropy -= v * std::log(v);
            CHECK(copied == doctest::Approx(entropy / n).epsilon(1e-12));
            const auto other = testing::random_distribution(rng, 4, h, w);
            CHECK(rskd(q, other, label, old_cls, new_cls) >= copied);
        }
    }

    TEST_CASE("new-class pixels only pull background plus new mass") {
        Tensor3 q(2, 1, 1), p(3, 1, 1);
        q.data = {0.6, 0.4};
        p.data = {0.2, 0.3, 0.5};
        LabelMap label(1, 1, 2);
        CHECK(rskd(q, p, label, {1}, {2}) == doctest::Approx(-0.6 * std::log(0.7)));
        label.data[0] = 1;
        CHECK(rskd(q, p, label, {1}, {2}) == doctest::Approx(-0.6 * std::log(0.2) - 0.4 * std::log(0.3)));
        label.data[0] = kIgnore;
        CHECK(rskd(q, p, label, {1}, {2}) == 0.0);
    }

    TEST_CASE("shape and class-set errors") {
        Tensor3 q(2, 2, 2, 0.5), p(3, 2, 2, 1.0 / 3);
        LabelMap label(2, 2, 0);
        CHECK_THROWS_AS(rskd(q, p, label, {1}, {1}), ShapeError);
        CHECK_THROWS_AS(rskd(q, p, label, {1}, {2, 3}), ShapeError);
        CHECK_THROWS_AS(rskd(q, p, label, {0, 1}, {2}), ShapeError);
        CHECK_THROWS_AS(rskd(q, p, LabelMap(1, 2), {1}, {2}), ShapeError);
        label.data[0] = 7;
        CHECK_THROWS_AS(rskd(q, p, label, {1}, {2}), ShapeError);
        CHECK_THROWS_AS(mbce(p, Tensor3(2, 2, 2), Mask(2, 2, 1)), ShapeError);
        CHECK_THROWS_AS(mbce(p, p, Mask(1, 1, 1)), ShapeError);
        CHECK(mbce(p, p, Mask(2, 2, 0)) == 0.0);
    }

    TEST_CASE("instance targets") {
        testing::Rng rng(1);
        const auto rec = testing::random_record(rng, 2, 5, 5, "a");
        const auto t = instance_targets(rec, 4);
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) {
                CHECK(t.at(2, y, x) == (rec.mask.at(y, x) ? 1.0 : 0.0));
                CHECK(t.at(0, y, x) == (rec.mask.at(y, x) ? 0.0 : 1.0));
                CHECK(t.at(1, y, x) == 0.0);
            }
        CHECK_THROWS_AS(instance_targets(rec, 2), ShapeError);
    }
}
