#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "disperse/measure.hpp"
#include "disperse/singularity.hpp"
#include "support.hpp"

#include <cmath>

using namespace disperse;
using namespace disperse::testing;

namespace {

ScalarFieldSpec hyperplane_spec(int d = 2) {
    return make_field_spec([](const Vec& x) { return x[0]; }, Vec::Zero(d), 1.0, 2);
}

ScalarFieldSpec circle_spec() {
    return make_field_spec([](const Vec& x) { return x.squaredNorm() - 0.25; }, Vec::Zero(2), 1.0,
                           3);
}

ScalarFieldSpec crossing_spec() {
    return make_field_spec([](const Vec& x) { return x[0] * x[0] - x[1] * x[1]; }, Vec::Zero(2),
                           1.0, 3);
}

/// Analytic area fraction of the strip {|x_0| < delta} inside the disk of
/// radius R.
double strip_fraction(double delta, double R) {
    const double area = 2.0 * (delta * std::sqrt(R * R - delta * delta) +
                               R * R * std::asin(delta / R));
    return area / (M_PI * R * R);
}

}  // namespace

TEST_CASE("zero_set_distance: spec fields") {
    const ScalarFieldSpec plane = hyperplane_spec();
    CHECK(zero_set_distance(plane, vec2(0.3, 0.7)) == doctest::Approx(0.3).epsilon(1e-9));

    const ScalarFieldSpec circle = circle_spec();
    // gradient vanishes at the center: the cloud supplies the answer
    CHECK(zero_set_distance(circle, Vec::Zero(2)) == doctest::Approx(0.5).epsilon(1e-4));

    // no zeros anywhere: the nonvanishing jet is the value itself (m = 1)
    const ScalarFieldSpec none =
        make_field_spec([](const Vec& x) { return x[0] * x[0] + 1.0; }, Vec::Zero(2), 1.0, 1);
    CHECK(std::isinf(zero_set_distance(none, vec2(0.1, 0.1))));
}

TEST_CASE("zero_set_distance: cloud points are at distance zero") {
    const ScalarFieldSpec circle = circle_spec();
    REQUIRE(circle.zero_cloud);
    REQUIRE_FALSE(circle.zero_cloud->empty());
    for (size_t i = 0; i < circle.zero_cloud->size(); i += 7) {
        CHECK(zero_set_distance(circle, (*circle.zero_cloud)[i]) < 1e-10);
    }
}

TEST_CASE("zero_set_distance: Newton and cloud agree on a regular field") {
    const ScalarFieldSpec plane = hyperplane_spec();
    Rng rng(5150);
    for (int i = 0; i < 50; ++i) {
        const Vec x = rng.in_ball(2, 0.5);
        const double dist = zero_set_distance(plane, x);
        CHECK(dist == doctest::Approx(std::abs(x[0])).epsilon(1e-8));
        // cloud-only estimate agrees within 10% at this cloud density
        double cloud = std::numeric_limits<double>::infinity();
        for (const Vec& z : *plane.zero_cloud) cloud = std::min(cloud, (x - z).norm());
        if (dist > 0.05) CHECK(cloud <= 1.1 * dist + 0.02);
    }
}

TEST_CASE("make_field_spec rejects a vanishing base jet") {
    // the gradient of the circle field vanishes at the ball center, so m = 2
    // violates the hypothesis
    CHECK_THROWS_AS(
        make_field_spec([](const Vec& x) { return x.squaredNorm() - 0.25; }, Vec::Zero(2), 1.0, 2),
        Error);
}

TEST_CASE("tube_volume: analytic strip fraction and determinism") {
    const ScalarFieldSpec plane = hyperplane_spec();
    const TubeEstimate est = tube_volume(plane, 0.05, 20000, 77);
    const double expected = strip_fraction(0.05, 0.5);
    CHECK(expected == doctest::Approx(0.127).epsilon(0.01));  // spec's quoted value
    CHECK(std::abs(est.volume_fraction - expected) < 3.0 * est.confidence_halfwidth);

    const TubeEstimate again = tube_volume(plane, 0.05, 20000, 77);
    CHECK(again.volume_fraction == est.volume_fraction);  // bit-identical counts
}

TEST_CASE("tube_volume: monotone in delta for a fixed sample set") {
    const ScalarFieldSpec circle = circle_spec();
    double prev = 0.0;
    for (double delta : {0.01, 0.02, 0.05, 0.1, 0.2}) {
        const TubeEstimate est = tube_volume(circle, delta, 4000, 3);
        CHECK(est.volume_fraction >= prev);
        prev = est.volume_fraction;
    }
}

TEST_CASE("tube_volume: field without zeros gives exactly zero") {
    const ScalarFieldSpec none =
        make_field_spec([](const Vec& x) { return x.squaredNorm() + 0.5; }, Vec::Zero(2), 1.0, 1);
    CHECK(tube_volume(none, 0.05, 2000, 9).volume_fraction == 0.0);
}

TEST_CASE("tube_volume: CI halfwidth shrinks like sqrt(2) when n doubles") {
    const ScalarFieldSpec plane = hyperplane_spec();
    const TubeEstimate a = tube_volume(plane, 0.05, 20000, 13);
    const TubeEstimate b = tube_volume(plane, 0.05, 40000, 13);
    CHECK(a.confidence_halfwidth / b.confidence_halfwidth ==
          doctest::Approx(std::sqrt(2.0)).epsilon(0.1));
}

TEST_CASE("scaling_fit: hyperplane, circle and crossing slopes") {
    std::vector<double> deltas;
    for (int k = 0; k < 6; ++k) deltas.push_back(1e-3 * std::pow(100.0, k / 5.0));

    const ScalingReport plane = scaling_fit(hyperplane_spec(), deltas, 100000, 21);
    CHECK(plane.slope > 0.95);
    CHECK(plane.slope < 1.05);

    const ScalingReport circle = scaling_fit(circle_spec(), deltas, 100000, 22);
    CHECK(circle.slope > 0.95);
    CHECK(circle.slope < 1.05);

    const ScalingReport crossing = scaling_fit(crossing_spec(), deltas, 100000, 23);
    CHECK(crossing.slope > 0.9);
    CHECK(crossing.slope < 1.1);
}

TEST_CASE("scaling_fit: zero-count estimates raise insufficient_samples") {
    std::vector<double> deltas{1e-7, 1e-6, 1e-5, 1e-4, 1e-3};
    CHECK_THROWS_AS(scaling_fit(hyperplane_spec(), deltas, 200, 3), Error);
}

TEST_CASE("single_linkage_components: two separated arcs") {
    std::vector<Vec> cloud;
    for (int i = 0; i < 40; ++i) {
        cloud.push_back(vec2(0.0 + 0.001 * i, 0.0));
        cloud.push_back(vec2(0.0 + 0.001 * i, 1.0));
    }
    CHECK(single_linkage_components(cloud, 0.01) == 2);
    CHECK(single_linkage_components(cloud, 2.0) == 1);
}

TEST_CASE("singularity tube: k = 0 window touching S scales linearly") {
    const BilliardConfig cfg = scene_two_disk_d2();
    // window on the center disk, velocity tilted to 80 degrees so the
    // tangency sits inside the velocity range
    const Scatterer& s = cfg.scatterer(1);
    const double theta = 0.3;
    const Vec u = vec2(std::cos(theta), std::sin(theta));
    PhaseWindow window;
    window.instance = {1, IVec::Zero(2)};
    window.q_center = s.center + s.radius * u;
    const Vec tang = vec2(-std::sin(theta), std::cos(theta));
    const double tilt = 80.0 * M_PI / 180.0;
    window.v_center = std::cos(tilt) * u + std::sin(tilt) * tang;
    window.q_halfwidth = 0.02;
    window.v_halfwidth = 0.35;

    // deltas small against the window so the band does not saturate it
    std::vector<double> deltas{1.5e-3, 3e-3, 6e-3, 1.2e-2, 2.4e-2};
    const ScalingReport report = singularity_tube_measure(cfg, 0, window, deltas, 30000, 99,
                                                          WindowMeasure::ChartUniform);
    REQUIRE_FALSE(report.degenerate);
    CHECK(report.slope > 0.9);
    CHECK(report.slope < 1.1);

    // direct cos phi sampling oracle: distance to S is |cos phi| up to a
    // smooth factor, so the fraction with |cos phi| < c delta is linear too
    const ScalingReport mu1 = singularity_tube_measure(cfg, 0, window, deltas, 20000, 99,
                                                       WindowMeasure::Mu1);
    CHECK(mu1.slope > report.slope);  // the cos phi weight adds a power
}

TEST_CASE("singularity tube: empty window reports degenerate") {
    const BilliardConfig cfg = scene_two_disk_d2();
    const Scatterer& s = cfg.scatterer(1);
    const Vec u = vec2(1.0, 0.0);
    PhaseWindow window;
    window.instance = {1, IVec::Zero(2)};
    window.q_center = s.center + s.radius * u;
    window.v_center = u;  // head-on: far from any tangency
    window.q_halfwidth = 0.02;
    window.v_halfwidth = 0.05;
    std::vector<double> deltas{1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2};
    const ScalingReport report =
        singularity_tube_measure(cfg, 0, window, deltas, 4000, 7, WindowMeasure::Mu1);
    CHECK(report.degenerate);
    for (double y : report.ys) CHECK(y == 0.0);
}
