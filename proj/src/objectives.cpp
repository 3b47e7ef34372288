#include "advlab/objectives.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "advlab/ops.hpp"

namespace advlab {

std::string to_string(LossMode m) {
    switch (m) {
    case LossMode::Standard: return "std";
    case LossMode::Rand: return "rand";
    case LossMode::AdvR: return "adv_r";
    case LossMode::AdvS: return "adv_s";
    case LossMode::AdvRS: return "adv_rs";
    }
    throw std::invalid_argument("unknown loss mode");
}

LossMode loss_mode_from_string(const std::string& s) {
    for (LossMode m : {LossMode::Standard, LossMode::Rand, LossMode::AdvR, LossMode::AdvS, LossMode::AdvRS}) {
        if (to_string(m) == s) return m;
    }
    throw std::invalid_argument("unknown loss mode '" + s + "' (expected std, rand, adv_r, adv_s or adv_rs)");
}

std::string to_string(ObjectiveKind k) {
    switch (k) {
    case ObjectiveKind::IndReg: return "ind_reg";
    case ObjectiveKind::IndSeg: return "ind_seg";
    case ObjectiveKind::OodReg: return "ood_reg";
    case ObjectiveKind::OodSeg: return "ood_seg";
    }
    throw std::invalid_argument("unknown objective kind");
}

ObjectiveKind objective_from_string(const std::string& s) {
    for (ObjectiveKind k : {ObjectiveKind::IndReg, ObjectiveKind::IndSeg, ObjectiveKind::OodReg, ObjectiveKind::OodSeg}) {
        if (to_string(k) == s) return k;
    }
    throw std::invalid_argument("unknown objective '" + s + "' (expected ind_reg, ind_seg, ood_reg or ood_seg)");
}

template <typename T>
TargetTensors<T> make_targets(std::span<const Contour> contours, std::span<const Mask> masks, std::span<const Image> images) {
    const int batch = static_cast<int>(contours.size());
    if (masks.size() != contours.size() || (!images.empty() && images.size() != contours.size())) {
        throw std::invalid_argument("make_targets: batch sizes differ");
    }
    if (batch == 0) throw std::invalid_argument("make_targets: empty batch");
    const int coords = 2 * static_cast<int>(contours[0].size());
    const int h = masks[0].height, w = masks[0].width;
    TargetTensors<T> t;
    t.contour = Tensor<T>({batch, coords});
    t.mask = Tensor<T>({batch, 1, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int b = 0; b < batch; ++b) {
        const auto flat = flatten(contours[static_cast<std::size_t>(b)]);
        if (static_cast<int>(flat.size()) != coords) throw std::invalid_argument("make_targets: contours differ in length");
        for (int i = 0; i < coords; ++i) t.contour[static_cast<std::size_t>(b) * coords + i] = static_cast<T>(flat[static_cast<std::size_t>(i)]);
        const Mask& m = masks[static_cast<std::size_t>(b)];
        if (m.height != h || m.width != w) throw std::invalid_argument("make_targets: masks differ in size");
        for (std::size_t i = 0; i < plane; ++i) t.mask[b * plane + i] = m.pixels[i] ? T{1} : T{0};
    }
    if (!images.empty()) t.image = images_to_tensor<T>(images, h);
    return t;
}

template <typename T>
Var reg_loss(Graph<T>& g, Var contour, const Tensor<T>& target) {
    const int coords = target.dim(-1);
    return ops::scale(g, ops::abs_error_sum(g, contour, target), 1.0 / coords);
}

template <typename T>
Var seg_loss(Graph<T>& g, Var seg, const Tensor<T>& mask) {
    const Var dice = ops::soft_dice(g, seg, mask, kDiceSmooth);
    const Var bce = ops::binary_cross_entropy(g, seg, mask, kBceClamp);
    return ops::add_scalar(g, ops::axpby(g, -0.5, dice, 0.5, bce), 0.5);
}

template <typename T>
Var rec_loss(Graph<T>& g, Var rec, const Tensor<T>& image) {
    return ops::mean_abs_error(g, rec, image);
}

template <typename T>
LossTerms<T> standard_loss(Graph<T>& g, const ModelVars& out, const TargetTensors<T>& t) {
    LossTerms<T> l;
    l.reg = reg_loss(g, out.contour, t.contour);
    l.seg = seg_loss(g, out.segmentation, t.mask);
    l.total = ops::add(g, l.reg, l.seg);
    if (out.reconstruction.valid()) {
        if (t.image.empty()) throw std::invalid_argument("standard_loss: reconstruction head needs target images");
        l.rec = rec_loss(g, out.reconstruction, t.image);
        l.total = ops::add(g, l.total, l.rec);
    }
    return l;
}

template <typename T>
Var attack_objective(Graph<T>& g, ObjectiveKind kind, const ModelVars& out, const TargetTensors<T>& t) {
    switch (kind) {
    case ObjectiveKind::IndReg: return ops::squared_error_sum(g, out.contour, t.contour);
    case ObjectiveKind::IndSeg: return ops::add_scalar(g, ops::scale(g, ops::soft_dice(g, out.segmentation, t.mask, kDiceSmooth), -1.0), 1.0);
    case ObjectiveKind::OodReg: return ops::scale(g, ops::abs_error_sum(g, out.contour, t.contour), -1.0);
    case ObjectiveKind::OodSeg: return ops::soft_dice(g, out.segmentation, t.mask, kDiceSmooth);
    }
    throw std::invalid_argument("attack_objective: unknown kind");
}

#define ADVLAB_INSTANTIATE_OBJECTIVES(T)                                                                     \
    template TargetTensors<T> make_targets<T>(std::span<const Contour>, std::span<const Mask>, std::span<const Image>); \
    template Var reg_loss<T>(Graph<T>&, Var, const Tensor<T>&);                                             \
    template Var seg_loss<T>(Graph<T>&, Var, const Tensor<T>&);                                             \
    template Var rec_loss<T>(Graph<T>&, Var, const Tensor<T>&);                                             \
    template LossTerms<T> standard_loss<T>(Graph<T>&, const ModelVars&, const TargetTensors<T>&);           \
    template Var attack_objective<T>(Graph<T>&, ObjectiveKind, const ModelVars&, const TargetTensors<T>&);

ADVLAB_INSTANTIATE_OBJECTIVES(float)
ADVLAB_INSTANTIATE_OBJECTIVES(double)

namespace {

Tensor<double> contour_tensor(const Contour& c) {
    const auto flat = flatten(c);
    return Tensor<double>({1, static_cast<int>(flat.size())}, flat);
}

Tensor<double> image_tensor(const Image& im) {
    return Tensor<double>({1, 1, im.height, im.width}, im.pixels);
}

Tensor<double> mask_tensor(const Mask& m) {
    return Tensor<double>({1, 1, m.height, m.width}, std::vector<double>(m.pixels.begin(), m.pixels.end()));
}

void require_same_size(const char* op, int h1, int w1, int h2, int w2) {
    if (h1 != h2 || w1 != w2) {
        throw std::invalid_argument(std::string(op) + ": size mismatch " + std::to_string(h1) + "x" + std::to_string(w1) + " vs " +
                                    std::to_string(h2) + "x" + std::to_string(w2));
    }
}

void require_same_points(const char* op, const Contour& a, const Contour& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument(std::string(op) + ": point count mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
}

} // namespace

double loss_reg(const Contour& pred, const Contour& target) {
    require_same_points("loss_reg", pred, target);
    Graph<double> g;
    return g.value(reg_loss(g, g.constant(contour_tensor(pred)), contour_tensor(target)))[0];
}

double loss_seg(const ProbabilityMap& pred, const Mask& target) {
    require_same_size("loss_seg", pred.height, pred.width, target.height, target.width);
    Graph<double> g;
    return g.value(seg_loss(g, g.constant(image_tensor(pred)), mask_tensor(target)))[0];
}

double loss_rec(const Image& rec, const Image& x) {
    require_same_size("loss_rec", rec.height, rec.width, x.height, x.width);
    Graph<double> g;
    return g.value(rec_loss(g, g.constant(image_tensor(rec)), image_tensor(x)))[0];
}

StandardLoss loss_standard(const ModelOutput& out, const Contour& contour, const Mask& mask, const Image* x) {
    StandardLoss l;
    l.reg = loss_reg(out.contour, contour);
    l.seg = loss_seg(out.segmentation, mask);
    l.total = l.reg + l.seg;
    if (out.reconstruction) {
        if (!x) throw std::invalid_argument("loss_standard: reconstruction output needs the input image");
        l.rec = loss_rec(*out.reconstruction, *x);
        l.total += l.rec;
    }
    return l;
}

double attack_objective_value(ObjectiveKind kind, const ModelOutput& out, const Contour& contour, const Mask& mask) {
    require_same_points("attack_objective", out.contour, contour);
    require_same_size("attack_objective", out.segmentation.height, out.segmentation.width, mask.height, mask.width);
    Graph<double> g;
    ModelVars mv;
    mv.contour = g.constant(contour_tensor(out.contour));
    mv.segmentation = g.constant(image_tensor(out.segmentation));
    TargetTensors<double> t{contour_tensor(contour), mask_tensor(mask), {}};
    return g.value(attack_objective(g, kind, mv, t))[0];
}

double contour_error(const Contour& pred, const Contour& truth) {
    require_same_points("contour_error", pred, truth);
    if (pred.empty()) throw std::invalid_argument("contour_error: empty contour");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += std::hypot(pred[i].x - truth[i].x, pred[i].y - truth[i].y);
    return acc / static_cast<double>(pred.size());
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_eval_csv(const std::filesystem::path& path, const EvalReport& r) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "eps,error_reg,dice_reg,dice_seg\n";
    for (const EvalRow& row : r.rows) {
        os << format_double(row.eps) << ',' << format_double(row.error_reg) << ',' << format_double(row.dice_reg) << ','
           << format_double(row.dice_seg) << '\n';
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

EvalReport read_eval_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "eps,error_reg,dice_reg,dice_seg") {
        throw std::runtime_error(path.string() + ": unexpected header");
    }
    EvalReport r;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        EvalRow row;
        char c1 = 0, c2 = 0, c3 = 0;
        if (!(ls >> row.eps >> c1 >> row.error_reg >> c2 >> row.dice_reg >> c3 >> row.dice_seg) || c1 != ',' || c2 != ',' || c3 != ',') {
            throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
        }
        r.rows.push_back(row);
    }
    return r;
}

void write_eval_json(const std::filesystem::path& path, const EvalReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const EvalRow& row : r.rows) {
        rows.push_back({{"eps", row.eps}, {"error_reg", row.error_reg}, {"dice_reg", row.dice_reg}, {"dice_seg", row.dice_seg}});
    }
    const nlohmann::json j{{"model", r.model}, {"k_test", r.k_test}, {"i_max", r.i_max}, {"rows", rows}};
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

} // namespace advlab
