#include <doctest.h>

#include <numbers>

#include "advlab/phantom.hpp"
#include "advlab/shape_model.hpp"
#include "support/oracles.hpp"

using namespace advlab;

namespace {

std::vector<Contour> phantom_shapes(int n, std::uint64_t seed, int points = 16) {
    PhantomConfig cfg;
    cfg.image_size = 32;
    cfg.points = points;
    std::vector<Contour> out;
    for (int i = 0; i < n; ++i) {
        Rng rng = make_rng(seed, streams::kPhantom, static_cast<std::uint64_t>(i));
        out.push_back(resample_by_arc_length(random_disk_shape(rng, cfg), points));
    }
    return out;
}

double mean_over(const Image& img, const Mask& m, bool inside) {
    double s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        if ((m.pixels[i] != 0) == inside) {
            s += img.pixels[i];
            ++n;
        }
    }
    return n ? s / n : 0.0;
}

} // namespace

TEST_CASE("PCA eigenpairs match the covariance eigendecomposition") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto shapes = phantom_shapes(40, seed);
        const ShapeModel ssm = build_ssm(shapes, 10);
        const oracle::CovarianceEigen ref = oracle::covariance_eigen(shapes);
        REQUIRE(ssm.k() == 10);
        for (int i = 0; i < 10; ++i) {
            CHECK(std::abs(ssm.eigenvalues[static_cast<std::size_t>(i)] - ref.values(i)) <= 1e-8 * std::max(1.0, ref.values(0)));
            const double dot = std::abs(ssm.components.col(i).dot(ref.vectors.col(i)));
            CHECK(dot == doctest::Approx(1.0).epsilon(1e-8));
        }
        CHECK(ssm.total_variance == doctest::Approx(ref.values.sum()).epsilon(1e-10));
        // Orthonormal columns and the sign convention.
        const Eigen::MatrixXd gram = ssm.components.transpose() * ssm.components;
        CHECK((gram - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff() <= 1e-10);
        for (int i = 0; i < 10; ++i) {
            Eigen::Index at = 0;
            ssm.components.col(i).cwiseAbs().maxCoeff(&at);
            CHECK(ssm.components(at, i) > 0.0);
        }
    }
}

TEST_CASE("coverage is monotone and full rank reconstructs exactly") {
    const auto shapes = phantom_shapes(12, 3);
    const ShapeModel ssm = build_ssm(shapes, 11);
    for (std::size_t i = 1; i < ssm.coverage.size(); ++i) CHECK(ssm.coverage[i] >= ssm.coverage[i - 1]);
    CHECK(ssm.coverage.back() == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 1; i < ssm.eigenvalues.size(); ++i) CHECK(ssm.eigenvalues[i] <= ssm.eigenvalues[i - 1]);
    for (const Contour& c : shapes) {
        const Contour back = reconstruct_shape(ssm, project_shape(ssm, c));
        for (std::size_t p = 0; p < c.size(); ++p) {
            CHECK(std::abs(back[p].x - c[p].x) <= 1e-8);
            CHECK(std::abs(back[p].y - c[p].y) <= 1e-8);
        }
    }
}

TEST_CASE("sampled shapes have the model's variance") {
    const auto shapes = phantom_shapes(60, 4);
    const ShapeModel k3 = build_ssm(shapes, 3);
    const ShapeModel k10 = build_ssm(shapes, 10);
    Rng rng = make_rng(9, 0);
    const int n = 4000;
    std::vector<double> var3(3, 0.0);
    double total3 = 0.0, total10 = 0.0;
    for (int s = 0; s < n; ++s) {
        const Eigen::VectorXd b = project_shape(k3, sample_shape(k3, random_coefficients(rng, 3)));
        for (int i = 0; i < 3; ++i) var3[static_cast<std::size_t>(i)] += b(i) * b(i) / n;
        total3 += b.squaredNorm() / n;
        total10 += project_shape(k10, sample_shape(k10, random_coefficients(rng, 10))).squaredNorm() / n;
    }
    for (int i = 0; i < 3; ++i) {
        const double sd = std::sqrt(var3[static_cast<std::size_t>(i)]);
        const double expect = std::sqrt(k3.eigenvalues[static_cast<std::size_t>(i)]);
        CHECK(std::abs(sd - expect) <= 0.1 * expect);
    }
    CHECK(total10 > total3);
}

TEST_CASE("coefficients are clamped at three standard deviations") {
    const ShapeModel ssm = build_ssm(phantom_shapes(20, 5), 2);
    const std::vector<double> big{10.0, -10.0};
    const std::vector<double> edge{3.0, -3.0};
    const Contour a = sample_shape(ssm, big), b = sample_shape(ssm, edge);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("shape model input validation and degenerate sets") {
    const auto shapes = phantom_shapes(5, 6);
    CHECK_THROWS_AS(build_ssm(shapes, 0), std::invalid_argument);
    CHECK_THROWS_AS(build_ssm(shapes, 5), std::invalid_argument);
    std::vector<Contour> mixed = shapes;
    mixed.back().pop_back();
    CHECK_THROWS_AS(build_ssm(mixed, 2), std::invalid_argument);

    const std::vector<Contour> same(4, shapes.front());
    const ShapeModel ssm = build_ssm(same, 2);
    for (double l : ssm.eigenvalues) CHECK(l == 0.0);
    CHECK(ssm.coverage.back() == 1.0);
    const Contour s = sample_shape(ssm, std::vector<double>{1.0, 2.0});
    CHECK(s == shapes.front());
}

TEST_CASE("phantoms are deterministic per seed") {
    PhantomConfig cfg;
    cfg.image_size = 32;
    cfg.points = 24;
    Rng a = make_rng(1, streams::kPhantom, 7), b = make_rng(1, streams::kPhantom, 7), c = make_rng(1, streams::kPhantom, 8);
    const PhantomSample pa = generate_phantom(a, cfg), pb = generate_phantom(b, cfg), pc = generate_phantom(c, cfg);
    CHECK(pa.image == pb.image);
    CHECK(pa.contour == pb.contour);
    CHECK_FALSE(pa.image == pc.image);
    CHECK(pa.seg == rasterize_contour(pa.contour, 32, 32));
    for (double v : pa.image.pixels) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("unperturbed disk has the ellipse area") {
    PhantomConfig cfg;
    cfg.image_size = 64;
    for (std::uint64_t s = 0; s < 20; ++s) {
        Rng rng = make_rng(s, 0);
        DiskShape d = random_disk_shape(rng, cfg);
        std::fill(d.harmonic_amp.begin(), d.harmonic_amp.end(), 0.0);
        const Contour c = resample_by_arc_length(d, 512);
        CHECK(std::abs(polygon_area(c)) == doctest::Approx(std::numbers::pi * d.a * d.b).epsilon(1e-3));
    }
}

TEST_CASE("arc-length resampling spaces points evenly") {
    PhantomConfig cfg;
    Rng rng = make_rng(2, 0);
    const DiskShape d = random_disk_shape(rng, cfg);
    const Contour c = resample_by_arc_length(d, 64);
    const double step = perimeter(c) / 64.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const Point& p = c[i];
        const Point& q = c[(i + 1) % c.size()];
        CHECK(std::hypot(q.x - p.x, q.y - p.y) == doctest::Approx(step).epsilon(0.02));
    }
}

TEST_CASE("disk is brighter than its surroundings") {
    PhantomConfig cfg;
    cfg.image_size = 32;
    cfg.points = 32;
    for (std::uint64_t i = 0; i < 500; ++i) {
        Rng rng = make_rng(77, streams::kPhantom, i);
        const PhantomSample s = generate_phantom(rng, cfg);
        CHECK(mean_over(s.image, s.seg, true) > mean_over(s.image, s.seg, false));
    }
}

TEST_CASE("phantom config validation") {
    PhantomConfig cfg;
    cfg.perturbation = 0.2;
    Rng rng = make_rng(1, 0);
    CHECK_THROWS_AS(generate_phantom(rng, cfg), std::invalid_argument);
    cfg.perturbation = 0.1;
    cfg.image_size = 4;
    CHECK_THROWS_AS(generate_phantom(rng, cfg), std::invalid_argument);
}

TEST_CASE("virtual samples follow the sampled shape") {
    PhantomConfig cfg;
    cfg.image_size = 32;
    cfg.points = 32;
    std::vector<PhantomSample> pool;
    for (std::uint64_t i = 0; i < 20; ++i) {
        Rng rng = make_rng(5, streams::kPhantom, i);
        pool.push_back(generate_phantom(rng, cfg));
    }
    std::vector<Contour> shapes;
    for (const auto& p : pool) shapes.push_back(p.contour);
    const ShapeModel ssm = build_ssm(shapes, 5);

    SUBCASE("identity warp returns the source image") {
        const VirtualSample v = make_virtual_sample_from(pool[3].contour, pool[3], 3);
        CHECK(v.image == pool[3].image);
        CHECK(v.tps_residual <= 1e-9);
    }
    SUBCASE("new shapes") {
        Rng rng = make_rng(5, streams::kVirtual, 0);
        for (int t = 0; t < 20; ++t) {
            const Contour shape = sample_shape(ssm, random_coefficients(rng, 5));
            const VirtualSample v = make_virtual_sample(shape, pool, rng);
            CHECK(v.shape == shape);
            CHECK(v.source_index >= 0);
            CHECK(v.source_index < 20);
            CHECK(v.tps_residual <= 1e-6);
            const Mask m = rasterize_contour(shape, 32, 32);
            CHECK(mean_over(v.image, m, true) > mean_over(v.image, m, false));
        }
    }
    SUBCASE("same stream, same sample") {
        Rng r1 = make_rng(5, streams::kVirtual, 4), r2 = make_rng(5, streams::kVirtual, 4);
        const Contour shape = sample_shape(ssm, random_coefficients(r1, 5));
        CHECK(shape == sample_shape(ssm, random_coefficients(r2, 5)));
        CHECK(make_virtual_sample(shape, pool, r1).image == make_virtual_sample(shape, pool, r2).image);
    }
}
