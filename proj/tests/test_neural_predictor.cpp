#include "fixtures.hpp"

#include "freqopf/error.hpp"
#include "freqopf/neural_predictor.hpp"

#include <doctest.h>

#include <fstream>
#include <random>

using namespace freqopf;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MlpNet identity_relu()
{
    MlpNet n = MlpNet::zeros({1, 1, 1});
    n.weights[0](0, 0) = 1.0;
    n.weights[1](0, 0) = 1.0;
    return n;
}

}  // namespace

TEST_CASE("nn: forward on hand-built nets")
{
    MlpNet z = MlpNet::zeros({3, 4, 2});
    z.output_norm.mean = VectorXd::Constant(2, 0.75);
    z.output_norm.mean(1) = -2.0;
    VectorXd y = forward(z, VectorXd::Constant(3, 5.0));
    CHECK(y(0) == 0.75);
    CHECK(y(1) == -2.0);

    MlpNet r = identity_relu();
    CHECK(forward(r, VectorXd::Constant(1, -2.0))(0) == 0.0);
    CHECK(forward(r, VectorXd::Constant(1, 3.0))(0) == 3.0);
    CHECK_THROWS_AS(forward(r, VectorXd::Zero(2)), Error);
}

TEST_CASE("nn: gradient check")
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    MlpNet net = MlpNet::random({4, 6, 5, 3}, 11);
    VectorXd x(4), t(3);
    for (int k = 0; k < 4; ++k)
        x(k) = g(rng);
    for (int k = 0; k < 3; ++k)
        t(k) = g(rng);
    CHECK(gradient_check(net, x, t) <= 1e-4);

    MlpNet lin = MlpNet::random({3, 2}, 5);
    CHECK(gradient_check(lin, x.head(3), t.head(2)) <= 1e-7);

    MlpNet kink = identity_relu();
    CHECK_THROWS_AS(gradient_check(kink, VectorXd::Zero(1), VectorXd::Zero(1)), Error);
}

TEST_CASE("nn: training fits a linear target and is deterministic")
{
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    MatrixXd X(500, 3), Y(500, 2);
    for (int i = 0; i < 500; ++i) {
        for (int k = 0; k < 3; ++k)
            X(i, k) = u(rng);
        Y(i, 0) = 2.0 * X(i, 0) - X(i, 1) + 0.5;
        Y(i, 1) = -0.3 * X(i, 2) + X(i, 0);
    }
    TrainConfig cfg;
    cfg.seed = 4;
    cfg.epochs = 2000;
    cfg.lr_decay = 0.998;
    auto [net, rep] = train(X, Y, {16}, cfg);
    double best = rep.val_loss.empty() ? rep.initial_val_loss : rep.val_loss[static_cast<std::size_t>(rep.best_epoch - 1)];
    CHECK(best < 1e-4);
    for (double mse : rep.val_mse_per_label)
        CHECK(mse < 1e-4);

    auto again = train(X, Y, {16}, cfg).first;
    for (std::size_t m = 0; m < net.weights.size(); ++m)
        CHECK(net.weights[m] == again.weights[m]);

    TrainConfig bad = cfg;
    bad.epochs = 0;
    CHECK_THROWS_AS(train(X, Y, {16}, bad), Error);
    CHECK_THROWS_AS(train(MatrixXd(0, 3), MatrixXd(0, 2), {4}, cfg), Error);
}

TEST_CASE("nn: interval bounds")
{
    auto single = [](double w, VectorXd lo, VectorXd hi) {
        MlpNet n = MlpNet::zeros({static_cast<int>(lo.size()), 1, 1});
        n.weights[0].setConstant(w);
        return interval_bounds(n, lo, hi);
    };
    auto b1 = single(1.0, VectorXd::Constant(1, -1.0), VectorXd::Constant(1, 2.0));
    CHECK(b1.lo[0](0) == -1.0);
    CHECK(b1.hi[0](0) == 2.0);
    auto b2 = single(-1.0, VectorXd::Constant(1, -1.0), VectorXd::Constant(1, 2.0));
    CHECK(b2.lo[0](0) == -2.0);
    CHECK(b2.hi[0](0) == 1.0);
    auto b3 = single(1.0, VectorXd::Zero(2), VectorXd::Ones(2));
    CHECK(b3.lo[0](0) == 0.0);
    CHECK(b3.hi[0](0) == 2.0);

    MlpNet net = MlpNet::random({3, 8, 8, 2}, 21);
    VectorXd lo(3), hi(3);
    lo << -1, 0, 2;
    hi << 1, 3, 2.5;
    auto nb = interval_bounds(net, lo, hi);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int violations = 0;
    for (int s = 0; s < 2000; ++s) {
        VectorXd x = lo + (hi - lo).cwiseProduct(VectorXd::NullaryExpr(3, [&] { return u(rng); }));
        auto tr = forward_trace(net, x);
        for (std::size_t l = 0; l < tr.pre.size(); ++l)
            for (Eigen::Index j = 0; j < tr.pre[l].size(); ++j)
                violations += tr.pre[l](j) < nb.lo[l](j) - 1e-12 || tr.pre[l](j) > nb.hi[l](j) + 1e-12;
    }
    CHECK(violations == 0);
}

TEST_CASE("nn: save and load")
{
    auto dir = fixtures::scratch_dir("nn");
    MlpNet net = MlpNet::random({4, 5, 3}, 2);
    net.input_norm.mean = VectorXd::LinSpaced(4, -1, 1);
    net.output_norm.stddev = VectorXd::Constant(3, 2.5);
    save_net(net, dir / "net.json");
    MlpNet back = load_net(dir / "net.json");
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g;
    for (int s = 0; s < 100; ++s) {
        VectorXd x = VectorXd::NullaryExpr(4, [&] { return g(rng); });
        CHECK((forward(net, x) - forward(back, x)).cwiseAbs().maxCoeff() <= 1e-12);
    }

    std::ifstream in(dir / "net.json");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    std::ofstream(dir / "cut.json") << text.substr(0, text.size() / 2);
    auto expect_corrupt = [](const std::filesystem::path& p) {
        try {
            load_net(p);
            FAIL("corrupt weights accepted");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::CorruptWeights);
        }
    };
    expect_corrupt(dir / "cut.json");
    auto pos = text.find("\"version\"");
    REQUIRE(pos != std::string::npos);
    auto colon = text.find(':', pos);
    auto end = text.find_first_of(",}\n", colon);
    std::ofstream(dir / "ver.json") << text.substr(0, colon + 1) + " 999" + text.substr(end);
    expect_corrupt(dir / "ver.json");
}
