#include "advlab/netmodel.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <string>

#include "advlab/ops.hpp"

namespace advlab {

using nlohmann::json;

int ModelConfig::channels(int level) const {
    return level == 0 ? base_channels : base_channels << (level - 1);
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
    if (depth < 1) fail("depth must be >= 1");
    if (image_size < 2 || image_size % (1 << depth) != 0) {
        fail("image_size " + std::to_string(image_size) + " is not divisible by 2^depth = " + std::to_string(1 << depth));
    }
    if (contour_points < 3) fail("contour_points must be >= 3");
    if (base_channels < 1 || groupnorm_groups < 1) fail("base_channels and groupnorm_groups must be positive");
    for (int l = 0; l <= depth; ++l) {
        if (channels(l) % groupnorm_groups != 0) {
            fail("groupnorm_groups " + std::to_string(groupnorm_groups) + " does not divide " + std::to_string(channels(l)) + " channels");
        }
    }
    if (blocks_per_stage < 0) fail("blocks_per_stage must be >= 0");
    if (regression_hidden < 1) fail("regression_hidden must be >= 1");
}

namespace {

template <typename T>
void add_conv(ParamStore<T>& p, const std::string& name, int cout, int cin, int k) {
    p.add(name + ".w", Tensor<T>({cout, cin, k, k}));
    p.add(name + ".b", Tensor<T>({cout}));
}

template <typename T>
void add_norm(ParamStore<T>& p, const std::string& name, int c) {
    p.add(name + ".g", Tensor<T>({c}, T{1}));
    p.add(name + ".b", Tensor<T>({c}));
}

std::string level_name(const char* prefix, int level) {
    return prefix + std::to_string(level);
}

} // namespace

template <typename T>
UNet<T>::UNet(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int depth = cfg_.depth;
    skip_ablated_.assign(static_cast<std::size_t>(depth), false);

    add_conv(params_, "stem.conv", cfg_.channels(0), 1, 3);
    add_norm(params_, "stem.gn", cfg_.channels(0));
    for (int l = 1; l <= depth; ++l) {
        const std::string e = level_name("enc", l);
        const int c = cfg_.channels(l);
        add_conv(params_, e + ".conv", c, cfg_.channels(l - 1), 3);
        add_norm(params_, e + ".gn", c);
        for (int r = 0; r < cfg_.blocks_per_stage; ++r) {
            const std::string b = e + ".res" + std::to_string(r);
            add_conv(params_, b + ".conv1", c, c, 3);
            add_norm(params_, b + ".gn1", c);
            add_conv(params_, b + ".conv2", c, c, 3);
            add_norm(params_, b + ".gn2", c);
        }
    }
    for (int l = depth - 1; l >= 0; --l) {
        const std::string d = level_name("dec", l);
        const int c = cfg_.channels(l);
        params_.add(d + ".up.w", Tensor<T>({cfg_.channels(l + 1), c, 2, 2}));
        params_.add(d + ".up.b", Tensor<T>({c}));
        add_conv(params_, d + ".conv", c, 2 * c, 3);
        add_norm(params_, d + ".gn", c);
    }
    add_conv(params_, "seg", 1, cfg_.channels(0), 1);
    if (cfg_.reconstruction_head) add_conv(params_, "rec", 1, cfg_.channels(0), 1);

    const int bottleneck = cfg_.image_size >> depth;
    const int features = cfg_.regression_pooling == RegressionPooling::GlobalAverage
                             ? cfg_.channels(depth)
                             : cfg_.channels(depth) * bottleneck * bottleneck;
    params_.add("reg.fc1.w", Tensor<T>({cfg_.regression_hidden, features}));
    params_.add("reg.fc1.b", Tensor<T>({cfg_.regression_hidden}));
    params_.add("reg.fc2.w", Tensor<T>({2 * cfg_.contour_points, cfg_.regression_hidden}));
    params_.add("reg.fc2.b", Tensor<T>({2 * cfg_.contour_points}, T(0.5)));
}

template <typename T>
void UNet<T>::initialize(Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < params_.size(); ++i) {
        auto& e = params_[i];
        const std::string& n = e.name;
        Tensor<T>& v = e.value;
        if (n.ends_with(".b")) {
            std::fill(v.data(), v.data() + v.size(), n == "reg.fc2.b" ? T(0.5) : T{0});
        } else if (n.ends_with(".g")) {
            std::fill(v.data(), v.data() + v.size(), T{1});
        } else {
            // fan-in: everything but the leading axis, except transposed
            // convs whose leading axis is the input.
            int fan_in = 1;
            if (n.ends_with(".up.w")) {
                fan_in = v.dim(0);
            } else {
                for (int a = 1; a < v.rank(); ++a) fan_in *= v.dim(a);
            }
            double std = std::sqrt(2.0 / fan_in);
            if (n == "reg.fc2.w") std = 0.1 / std::sqrt(static_cast<double>(fan_in));
            for (T& w : v.values()) w = static_cast<T>(std * normal(rng));
        }
    }
}

template <typename T>
void UNet<T>::set_contour_bias(const Contour& c) {
    if (static_cast<int>(c.size()) != cfg_.contour_points) throw std::invalid_argument("set_contour_bias: point count mismatch");
    Tensor<T>& b = params_.at("reg.fc2.b");
    const auto flat = flatten(c);
    for (std::size_t i = 0; i < flat.size(); ++i) b[i] = static_cast<T>(flat[i] / cfg_.image_size);
}

template <typename T>
void UNet<T>::set_params(ParamStore<T> p) {
    if (p.size() != params_.size()) throw std::invalid_argument("set_params: parameter count mismatch");
    for (int i = 0; i < p.size(); ++i) {
        if (p[i].name != params_[i].name || p[i].value.shape() != params_[i].value.shape()) {
            throw std::invalid_argument("set_params: parameter '" + p[i].name + "' does not match '" + params_[i].name + "' " +
                                        to_string(params_[i].value.shape()));
        }
    }
    params_ = std::move(p);
}

template <typename T>
void UNet<T>::set_skip_ablated(int level, bool ablated) {
    if (level < 0 || level >= cfg_.depth) throw std::out_of_range("set_skip_ablated: no skip at level " + std::to_string(level));
    skip_ablated_[static_cast<std::size_t>(level)] = ablated;
}

template <typename T>
ModelVars UNet<T>::apply(Graph<T>& g, Var x) const {
    return build(g, x, nullptr);
}

template <typename T>
ModelVars UNet<T>::apply_trainable(Graph<T>& g, Var x, std::vector<Var>& params_out) const {
    return build(g, x, &params_out);
}

template <typename T>
ModelVars UNet<T>::build(Graph<T>& g, Var x, std::vector<Var>* bound) const {
    const Shape& xs = g.value(x).shape();
    if (xs.size() != 4 || xs[1] != 1 || xs[2] != cfg_.image_size || xs[3] != cfg_.image_size) {
        throw std::invalid_argument("model expects input [B,1," + std::to_string(cfg_.image_size) + "," +
                                    std::to_string(cfg_.image_size) + "], got " + to_string(xs));
    }
    std::vector<Var> vars;
    vars.reserve(static_cast<std::size_t>(params_.size()));
    for (const auto& e : params_) vars.push_back(g.parameter(e.value, bound != nullptr));
    if (bound) *bound = vars;
    auto P = [&](const std::string& name) { return vars[static_cast<std::size_t>(params_.index_of(name))]; };

    const int groups = cfg_.groupnorm_groups;
    auto conv_norm_act = [&](Var in, const std::string& conv, const std::string& norm) {
        Var h = ops::conv2d(g, in, P(conv + ".w"), P(conv + ".b"), 1, 1);
        h = ops::group_norm(g, h, P(norm + ".g"), P(norm + ".b"), groups);
        return ops::leaky_relu(g, h);
    };

    std::vector<Var> skips;
    Var h = conv_norm_act(x, "stem.conv", "stem.gn");
    for (int l = 1; l <= cfg_.depth; ++l) {
        skips.push_back(h);
        const std::string e = level_name("enc", l);
        h = conv_norm_act(ops::max_pool2x2(g, h), e + ".conv", e + ".gn");
        for (int r = 0; r < cfg_.blocks_per_stage; ++r) {
            const std::string b = e + ".res" + std::to_string(r);
            Var t = conv_norm_act(h, b + ".conv1", b + ".gn1");
            t = ops::conv2d(g, t, P(b + ".conv2.w"), P(b + ".conv2.b"), 1, 1);
            t = ops::group_norm(g, t, P(b + ".gn2.g"), P(b + ".gn2.b"), groups);
            h = ops::leaky_relu(g, ops::add(g, h, t));
        }
    }
    const Var bottleneck = h;

    for (int l = cfg_.depth - 1; l >= 0; --l) {
        const std::string d = level_name("dec", l);
        Var up = ops::conv_transpose2d(g, h, P(d + ".up.w"), P(d + ".up.b"), 2, 0);
        Var skip = skips[static_cast<std::size_t>(l)];
        if (skip_ablated_[static_cast<std::size_t>(l)]) skip = g.constant(Tensor<T>(g.value(skip).shape()));
        h = conv_norm_act(ops::concat_channels(g, up, skip), d + ".conv", d + ".gn");
    }

    ModelVars out;
    out.segmentation = ops::sigmoid(g, ops::conv2d(g, h, P("seg.w"), P("seg.b"), 1, 0));
    if (cfg_.reconstruction_head) out.reconstruction = ops::sigmoid(g, ops::conv2d(g, h, P("rec.w"), P("rec.b"), 1, 0));

    Var feat = cfg_.regression_pooling == RegressionPooling::GlobalAverage ? ops::global_avg_pool(g, bottleneck) : bottleneck;
    Var r = ops::leaky_relu(g, ops::linear(g, feat, P("reg.fc1.w"), P("reg.fc1.b")));
    r = ops::linear(g, r, P("reg.fc2.w"), P("reg.fc2.b"));
    out.contour = ops::scale(g, r, static_cast<double>(cfg_.image_size));
    return out;
}

template <typename T>
void UNet<T>::save(const std::filesystem::path& path) const {
    save_checkpoint(path, params_, model_config_json(cfg_));
}

template <typename T>
UNet<T> UNet<T>::load(const std::filesystem::path& path) {
    std::string meta;
    ParamStore<T> p = load_checkpoint<T>(path, &meta);
    UNet<T> net(model_config_from_json(meta));
    net.set_params(std::move(p));
    return net;
}

template class UNet<float>;
template class UNet<double>;

template <typename T>
Tensor<T> images_to_tensor(std::span<const Image> images, int size) {
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    Tensor<T> t({static_cast<int>(images.size()), 1, size, size});
    for (std::size_t b = 0; b < images.size(); ++b) {
        const Image& im = images[b];
        if (im.height != size || im.width != size) {
            throw std::invalid_argument("image " + std::to_string(b) + " is " + std::to_string(im.height) + "x" +
                                        std::to_string(im.width) + ", model expects " + std::to_string(size) + "x" +
                                        std::to_string(size));
        }
        for (std::size_t i = 0; i < plane; ++i) t[b * plane + i] = static_cast<T>(im.pixels[i]);
    }
    return t;
}

template <typename T>
std::vector<ModelOutput> forward_batch(const SegRegModel<T>& model, std::span<const Image> images) {
    const ModelConfig& cfg = model.config();
    const int size = cfg.image_size;
    Graph<T> g;
    const Var x = g.constant(images_to_tensor<T>(images, size));
    const ModelVars mv = model.apply(g, x);
    const Tensor<T>& c = g.value(mv.contour);
    const Tensor<T>& s = g.value(mv.segmentation);
    if (!c.all_finite() || !s.all_finite() || (mv.reconstruction.valid() && !g.value(mv.reconstruction).all_finite())) {
        throw ModelCorruptError("model produced non-finite outputs; parameters are corrupt");
    }
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    const std::size_t coords = 2 * static_cast<std::size_t>(cfg.contour_points);
    std::vector<ModelOutput> out(images.size());
    for (std::size_t b = 0; b < images.size(); ++b) {
        std::vector<double> flat(coords);
        for (std::size_t i = 0; i < coords; ++i) flat[i] = static_cast<double>(c[b * coords + i]);
        out[b].contour = unflatten(flat);
        out[b].segmentation = Image(size, size);
        for (std::size_t i = 0; i < plane; ++i) out[b].segmentation.pixels[i] = static_cast<double>(s[b * plane + i]);
        if (mv.reconstruction.valid()) {
            const Tensor<T>& r = g.value(mv.reconstruction);
            Image rec(size, size);
            for (std::size_t i = 0; i < plane; ++i) rec.pixels[i] = static_cast<double>(r[b * plane + i]);
            out[b].reconstruction = std::move(rec);
        }
    }
    return out;
}

template <typename T>
ModelOutput forward(const SegRegModel<T>& model, const Image& x) {
    return std::move(forward_batch(model, std::span<const Image>(&x, 1)).front());
}

template Tensor<float> images_to_tensor<float>(std::span<const Image>, int);
template Tensor<double> images_to_tensor<double>(std::span<const Image>, int);
template std::vector<ModelOutput> forward_batch<float>(const SegRegModel<float>&, std::span<const Image>);
template std::vector<ModelOutput> forward_batch<double>(const SegRegModel<double>&, std::span<const Image>);
template ModelOutput forward<float>(const SegRegModel<float>&, const Image&);
template ModelOutput forward<double>(const SegRegModel<double>&, const Image&);

Mask binarize(const ProbabilityMap& soft, double threshold) {
    Mask m(soft.height, soft.width);
    for (std::size_t i = 0; i < soft.size(); ++i) m.pixels[i] = soft.pixels[i] >= threshold ? 1 : 0;
    return m;
}

std::string model_config_json(const ModelConfig& cfg) {
    json j{{"image_size", cfg.image_size},
           {"contour_points", cfg.contour_points},
           {"base_channels", cfg.base_channels},
           {"depth", cfg.depth},
           {"groupnorm_groups", cfg.groupnorm_groups},
           {"blocks_per_stage", cfg.blocks_per_stage},
           {"regression_hidden", cfg.regression_hidden},
           {"regression_pooling", cfg.regression_pooling == RegressionPooling::GlobalAverage ? "gap" : "flatten"},
           {"reconstruction_head", cfg.reconstruction_head}};
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    ModelConfig cfg;
    cfg.image_size = j.value("image_size", cfg.image_size);
    cfg.contour_points = j.value("contour_points", cfg.contour_points);
    cfg.base_channels = j.value("base_channels", cfg.base_channels);
    cfg.depth = j.value("depth", cfg.depth);
    cfg.groupnorm_groups = j.value("groupnorm_groups", cfg.groupnorm_groups);
    cfg.blocks_per_stage = j.value("blocks_per_stage", cfg.blocks_per_stage);
    cfg.regression_hidden = j.value("regression_hidden", cfg.regression_hidden);
    const std::string pooling = j.value("regression_pooling", std::string("gap"));
    if (pooling == "gap") {
        cfg.regression_pooling = RegressionPooling::GlobalAverage;
    } else if (pooling == "flatten") {
        cfg.regression_pooling = RegressionPooling::Flatten;
    } else {
        throw std::invalid_argument("unknown regression_pooling '" + pooling + "' (expected gap or flatten)");
    }
    cfg.reconstruction_head = j.value("reconstruction_head", cfg.reconstruction_head);
    cfg.validate();
    return cfg;
}

} // namespace advlab
