#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "koopsafe/nn.hpp"
#include "oracles.hpp"

using namespace koopsafe;
using Catch::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Flat parameter order: per layer, W row-major, then b.
int param_count(const nn::DenseNet& net) {
    int n = 0;
    for (const auto& l : net.layers) n += static_cast<int>(l.w.size() + l.b.size());
    return n;
}

double get_param(const nn::DenseNet& net, int i) {
    for (const auto& l : net.layers) {
        const int wn = static_cast<int>(l.w.size());
        if (i < wn) return l.w(i / l.w.cols(), i % l.w.cols());
        i -= wn;
        const int bn = static_cast<int>(l.b.size());
        if (i < bn) return l.b(i);
        i -= bn;
    }
    FAIL("parameter index out of range");
    return 0.0;
}

void set_param(nn::DenseNet& net, int i, double v) {
    for (auto& l : net.layers) {
        const int wn = static_cast<int>(l.w.size());
        if (i < wn) {
            l.w(i / l.w.cols(), i % l.w.cols()) = v;
            return;
        }
        i -= wn;
        const int bn = static_cast<int>(l.b.size());
        if (i < bn) {
            l.b(i) = v;
            return;
        }
        i -= bn;
    }
    FAIL("parameter index out of range");
}

std::vector<double> flatten(const nn::GradientSet& g) {
    std::vector<double> out;
    for (std::size_t l = 0; l < g.dw.size(); ++l) {
        for (int r = 0; r < g.dw[l].rows(); ++r)
            for (int c = 0; c < g.dw[l].cols(); ++c) out.push_back(g.dw[l](r, c));
        for (int i = 0; i < g.db[l].size(); ++i) out.push_back(g.db[l](i));
    }
    return out;
}

MatrixXd random_matrix(int rows, int cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = uniform(rng, lo, hi);
    return m;
}

}  // namespace

TEST_CASE("glorot init respects its bound, zeroes biases, and is seeded") {
    const nn::ShapeSpec spec{{5, 16, 4}};
    const nn::DenseNet a = nn::init(spec, 42);
    const nn::DenseNet b = nn::init(spec, 42);
    const nn::DenseNet c = nn::init(spec, 43);

    const double lim0 = std::sqrt(6.0 / (5 + 16));
    CHECK(a.layers[0].w.cwiseAbs().maxCoeff() <= lim0);
    CHECK(a.layers[0].w.cwiseAbs().maxCoeff() > 0.1 * lim0);
    CHECK(a.layers[0].b.cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.layers[1].b.cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.layers[0].w == b.layers[0].w);
    CHECK(a.layers[0].w != c.layers[0].w);
    CHECK(a.layers[0].act == nn::Activation::relu);
    CHECK(a.layers[1].act == nn::Activation::identity);
}

TEST_CASE("forward computes the affine map and the relu cut") {
    nn::DenseNet net;
    net.layers.push_back({(MatrixXd(2, 2) << 1, 2, 3, 4).finished(),
                          (VectorXd(2) << 0.5, -1).finished(), nn::Activation::identity});
    const VectorXd y = nn::forward(net, (VectorXd(2) << 1, 1).finished());
    CHECK(y(0) == Approx(3.5).margin(1e-15));
    CHECK(y(1) == Approx(6.0).margin(1e-15));

    net.layers[0].act = nn::Activation::relu;
    net.layers[0].b << -4.0, 1.0;
    const VectorXd yr = nn::forward(net, (VectorXd(2) << 1, 1).finished());
    CHECK(yr(0) == 0.0);  // pre-activation -1 clipped
    CHECK(yr(1) == Approx(8.0).margin(1e-15));
}

TEST_CASE("batched forward equals per-column forward") {
    Rng rng = make_rng(7);
    const nn::DenseNet net = nn::init({{4, 12, 12, 3}}, 99);
    const MatrixXd x = random_matrix(4, 5, rng);
    const MatrixXd y = nn::forward(net, x);
    for (int c = 0; c < x.cols(); ++c) {
        const VectorXd yc = nn::forward(net, VectorXd(x.col(c)));
        CHECK((y.col(c) - yc).cwiseAbs().maxCoeff() < 1e-13);
    }
}

TEST_CASE("parameter gradients match central differences on random nets") {
    Rng rng = make_rng(2024);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<int> dims{uniform_int(rng, 1, 6)};
        const int hidden_layers = uniform_int(rng, 0, 3);
        for (int l = 0; l < hidden_layers; ++l) dims.push_back(uniform_int(rng, 2, 16));
        dims.push_back(uniform_int(rng, 1, 6));

        nn::DenseNet net = nn::init({dims}, derive_seed(5, trial));
        const int batch = 3;
        MatrixXd x = random_matrix(dims.front(), batch, rng);
        int tries = 0;
        while (oracles::relu_kink_clearance(net, x) < 1e-3 && tries++ < 50)
            x = random_matrix(dims.front(), batch, rng);
        REQUIRE(tries < 50);
        const MatrixXd target = random_matrix(dims.back(), batch, rng);

        auto eval = [&]() { return (nn::forward(net, x) - target).squaredNorm(); };

        nn::ForwardCache cache;
        const MatrixXd y = nn::forward(net, x, &cache);
        const MatrixXd upstream = 2.0 * (y - target);
        MatrixXd dx;
        const nn::GradientSet grads = nn::backward(net, cache, upstream, &dx);

        const double err = oracles::fd_gradient_max_err(
            eval, [&](int i) { return get_param(net, i); },
            [&](int i, double v) { set_param(net, i, v); }, flatten(grads));
        INFO("trial " << trial << " dims " << dims.size());
        CHECK(err < 1e-4);

        // input gradient against the same oracle
        std::vector<double> dx_flat;
        for (int c = 0; c < dx.cols(); ++c)
            for (int r = 0; r < dx.rows(); ++r) dx_flat.push_back(dx(r, c));
        MatrixXd xv = x;
        auto eval_x = [&]() { return (nn::forward(net, xv) - target).squaredNorm(); };
        const double err_x = oracles::fd_gradient_max_err(
            eval_x, [&](int i) { return xv(i % xv.rows(), i / xv.rows()); },
            [&](int i, double v) { xv(i % xv.rows(), i / xv.rows()) = v; }, dx_flat);
        CHECK(err_x < 1e-4);
    }
}

TEST_CASE("sgd_step applies the exact update and lr zero is a no-op") {
    nn::DenseNet net;
    net.layers.push_back({(MatrixXd(1, 1) << 2.0).finished(),
                          (VectorXd(1) << 0.25).finished(), nn::Activation::identity});
    const MatrixXd x = (MatrixXd(1, 1) << 3.0).finished();
    const MatrixXd target = (MatrixXd(1, 1) << 1.0).finished();

    nn::ForwardCache cache;
    const MatrixXd y = nn::forward(net, x, &cache);
    const nn::GradientSet g = nn::backward(net, cache, 2.0 * (y - target));
    // d/dw (wx + b - t)^2 = 2 r x, d/db = 2 r with r = 6.25 - 1
    CHECK(g.dw[0](0, 0) == Approx(2.0 * 5.25 * 3.0).margin(1e-12));
    CHECK(g.db[0](0) == Approx(2.0 * 5.25).margin(1e-12));

    const nn::DenseNet frozen = nn::sgd_stepped(net, g, 0.0);
    CHECK(frozen.layers[0].w(0, 0) == net.layers[0].w(0, 0));
    CHECK(frozen.layers[0].b(0) == net.layers[0].b(0));

    nn::sgd_step(net, g, 0.1);
    CHECK(net.layers[0].w(0, 0) == Approx(2.0 - 0.1 * 31.5).margin(1e-12));
    CHECK(net.layers[0].b(0) == Approx(0.25 - 0.1 * 10.5).margin(1e-12));
}

TEST_CASE("gradient descent on a convex quadratic descends monotonically") {
    nn::DenseNet net;
    net.layers.push_back({(MatrixXd(1, 1) << 0.0).finished(), VectorXd::Zero(1),
                          nn::Activation::identity});
    const MatrixXd x = (MatrixXd(1, 1) << 1.0).finished();
    const MatrixXd target = (MatrixXd(1, 1) << 3.0).finished();
    // hessian eigenvalue bound for (w + b - 3)^2 is 4, so lr < 0.5 descends
    double prev = 1e300;
    for (int it = 0; it < 60; ++it) {
        nn::ForwardCache cache;
        const MatrixXd y = nn::forward(net, x, &cache);
        const double loss = (y - target).squaredNorm();
        CHECK(loss <= prev + 1e-15);
        prev = loss;
        nn::sgd_step(net, nn::backward(net, cache, 2.0 * (y - target)), 0.2);
    }
    CHECK(prev < 1e-10);
}

TEST_CASE("dimension mismatches are rejected loudly") {
    const nn::DenseNet net = nn::init({{3, 8, 2}}, 1);
    CHECK_THROWS_AS(nn::forward(net, MatrixXd(MatrixXd::Zero(4, 1))), DimensionError);
    CHECK_THROWS_AS(nn::backward(net, MatrixXd::Zero(3, 1), MatrixXd::Zero(3, 1)),
                    DimensionError);
    nn::GradientSet wrong;
    CHECK_THROWS_AS(nn::sgd_step(const_cast<nn::DenseNet&>(net), wrong, 0.1), DimensionError);
    CHECK_THROWS_AS(nn::init({{3}}, 0), DimensionError);
    CHECK_THROWS_AS(nn::init({{3, 0, 2}}, 0), DimensionError);
}
