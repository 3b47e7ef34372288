#include <doctest.h>

#include <filesystem>
#include <limits>

#include "advlab/netmodel.hpp"
#include "support/gradient_suite.hpp"
#include "support/oracles.hpp"

using namespace advlab;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(bool rec = false) {
    ModelConfig c;
    c.image_size = 16;
    c.contour_points = 8;
    c.base_channels = 4;
    c.depth = 2;
    c.groupnorm_groups = 2;
    c.blocks_per_stage = 1;
    c.regression_hidden = 16;
    c.reconstruction_head = rec;
    return c;
}

UNet<double> initialized(const ModelConfig& c, std::uint64_t seed) {
    UNet<double> net(c);
    Rng rng = make_rng(seed, streams::kInit);
    net.initialize(rng);
    return net;
}

} // namespace

TEST_CASE("outputs have the documented shapes and ranges") {
    for (bool rec : {false, true}) {
        const UNet<double> net = initialized(small_config(rec), 1);
        Rng rng = make_rng(2, 0);
        const ModelOutput out = forward(net, oracle::random_image(rng, 16, 16));
        CHECK(out.contour.size() == 8);
        CHECK(out.segmentation.height == 16);
        CHECK(out.segmentation.width == 16);
        for (double v : out.segmentation.pixels) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
        CHECK(out.reconstruction.has_value() == rec);
        if (rec) {
            for (double v : out.reconstruction->pixels) {
                CHECK(v > 0.0);
                CHECK(v < 1.0);
            }
        }
    }
}

TEST_CASE("contour head starts at its bias when the last layer is zero") {
    UNet<double> net = initialized(small_config(), 3);
    Contour c;
    for (int i = 0; i < 8; ++i) c.push_back({2.0 + i, 15.0 - 1.5 * i});
    net.set_contour_bias(c);
    Tensor<double>& w = net.params().at("reg.fc2.w");
    std::fill(w.data(), w.data() + w.size(), 0.0);
    Rng rng = make_rng(4, 0);
    for (int t = 0; t < 3; ++t) {
        const ModelOutput out = forward(net, oracle::random_image(rng, 16, 16));
        for (std::size_t i = 0; i < c.size(); ++i) {
            CHECK(out.contour[i].x == doctest::Approx(c[i].x).epsilon(1e-12));
            CHECK(out.contour[i].y == doctest::Approx(c[i].y).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(net.set_contour_bias(Contour(3)), std::invalid_argument);
}

TEST_CASE("skip ablation changes the segmentation but not the contour") {
    UNet<double> net = initialized(small_config(), 5);
    Rng rng = make_rng(6, 0);
    const Image x = oracle::random_image(rng, 16, 16);
    const ModelOutput base = forward(net, x);
    net.set_skip_ablated(0, true);
    const ModelOutput cut = forward(net, x);
    CHECK(cut.contour == base.contour);
    CHECK(max_abs_difference(cut.segmentation, base.segmentation) > 1e-6);
    net.set_skip_ablated(0, false);
    CHECK(forward(net, x).segmentation == base.segmentation);
    CHECK_THROWS_AS(net.set_skip_ablated(2, true), std::out_of_range);
}

TEST_CASE("batched forward equals per-image forward") {
    const UNet<double> net = initialized(small_config(true), 7);
    Rng rng = make_rng(8, 0);
    std::vector<Image> xs;
    for (int i = 0; i < 3; ++i) xs.push_back(oracle::random_image(rng, 16, 16));
    const auto batch = forward_batch(net, std::span<const Image>(xs));
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const ModelOutput one = forward(net, xs[i]);
        CHECK(max_abs_difference(one.segmentation, batch[i].segmentation) <= 1e-12);
        CHECK(max_abs_difference(*one.reconstruction, *batch[i].reconstruction) <= 1e-12);
        for (std::size_t p = 0; p < one.contour.size(); ++p) CHECK(std::abs(one.contour[p].x - batch[i].contour[p].x) <= 1e-10);
    }
}

TEST_CASE("initialization is deterministic") {
    CHECK(initialized(small_config(), 9).params() == initialized(small_config(), 9).params());
    CHECK_FALSE(initialized(small_config(), 9).params() == initialized(small_config(), 10).params());
}

TEST_CASE("save and load reproduce the model") {
    const ModelConfig cfg = small_config(true);
    UNet<float> net(cfg);
    Rng rng = make_rng(11, 0);
    net.initialize(rng);
    const fs::path p = fs::temp_directory_path() / "advlab_netmodel.ckpt";
    net.save(p);
    const UNet<float> back = UNet<float>::load(p);
    CHECK(back.config() == cfg);
    CHECK(back.params() == net.params());
    const Image x = oracle::random_image(rng, 16, 16);
    CHECK(forward(back, x).segmentation == forward(net, x).segmentation);

    // Loading into the wrong architecture is refused.
    UNet<float> other(small_config(false));
    CHECK_THROWS_AS(other.set_params(net.params()), std::invalid_argument);
    fs::remove(p);
}

TEST_CASE("non-finite parameters are reported as corruption") {
    UNet<double> net = initialized(small_config(), 12);
    net.params().at("seg.b")[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(forward(net, Image(16, 16, 0.5)), ModelCorruptError);
}

TEST_CASE("input size is checked") {
    const UNet<double> net = initialized(small_config(), 13);
    CHECK_THROWS_AS(forward(net, Image(8, 8)), std::invalid_argument);
}

TEST_CASE("config validation and JSON round trip") {
    ModelConfig c = small_config();
    c.image_size = 12;
    c.depth = 3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_config();
    c.groupnorm_groups = 3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = small_config(true);
    c.regression_pooling = RegressionPooling::Flatten;
    CHECK(model_config_from_json(model_config_json(c)) == c);
    CHECK_THROWS_AS(model_config_from_json(R"({"regression_pooling":"max"})"), std::invalid_argument);

    // Flatten pooling builds and runs.
    UNet<double> net(c);
    Rng rng = make_rng(14, 0);
    net.initialize(rng);
    CHECK(forward(net, Image(16, 16, 0.3)).contour.size() == 8);
}

TEST_CASE("binarize threshold is inclusive") {
    Image p(1, 3);
    p.pixels = {0.49, 0.5, 0.9};
    const Mask m = binarize(p);
    CHECK(m.pixels == std::vector<std::uint8_t>{0, 1, 1});
}
