#include "advlab/dataset_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace advlab {

namespace fs = std::filesystem;

namespace {

std::string stem(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", i);
    return buf;
}

} // namespace

nlohmann::json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    // Write-then-rename so an interrupted run never leaves a half-written file.
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        os << j.dump(2) << '\n';
        if (!os) throw std::runtime_error("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

void save_samples(const fs::path& dir, std::span<const PhantomSample> samples, const nlohmann::json& meta) {
    if (samples.empty()) throw std::invalid_argument("save_samples: empty sample set");
    fs::remove_all(dir);
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "contours");
    fs::create_directories(dir / "masks");
    const int size = samples.front().image.height;
    const int points = static_cast<int>(samples.front().contour.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const PhantomSample& s = samples[i];
        if (s.image.height != size || s.image.width != size || static_cast<int>(s.contour.size()) != points) {
            throw std::invalid_argument("save_samples: samples differ in size or point count");
        }
        const std::string id = stem(static_cast<int>(i));
        write_pgm(dir / "images" / (id + ".pgm"), s.image);
        write_contour(dir / "contours" / (id + ".txt"), s.contour);
        write_pgm(dir / "masks" / (id + ".pgm"), s.seg);
    }
    // The manifest goes last: its presence marks a complete set.
    write_json(dir / "manifest.json", {{"count", samples.size()}, {"image_size", size}, {"points", points}, {"meta", meta}});
}

nlohmann::json load_samples_meta(const fs::path& dir) {
    return read_json(dir / "manifest.json").at("meta");
}

std::vector<PhantomSample> load_samples(const fs::path& dir) {
    const nlohmann::json m = read_json(dir / "manifest.json");
    const int count = m.at("count").get<int>();
    const int size = m.at("image_size").get<int>();
    const int points = m.at("points").get<int>();
    std::vector<PhantomSample> out(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const std::string id = stem(i);
        PhantomSample& s = out[static_cast<std::size_t>(i)];
        s.image = read_pgm(dir / "images" / (id + ".pgm"));
        s.contour = read_contour(dir / "contours" / (id + ".txt"));
        s.seg = read_mask_pgm(dir / "masks" / (id + ".pgm"));
        if (s.image.height != size || s.image.width != size || s.seg.height != size || s.seg.width != size ||
            static_cast<int>(s.contour.size()) != points) {
            throw std::runtime_error(dir.string() + ": sample " + id + " does not match the manifest");
        }
    }
    return out;
}

std::vector<PhantomSample> select(std::span<const PhantomSample> all, std::span<const int> indices) {
    std::vector<PhantomSample> out;
    out.reserve(indices.size());
    for (int i : indices) {
        if (i < 0 || static_cast<std::size_t>(i) >= all.size()) throw std::out_of_range("select: index out of range");
        out.push_back(all[static_cast<std::size_t>(i)]);
    }
    return out;
}

Split make_split(int n, double train_fraction, Rng& rng) {
    if (n < 2) throw std::invalid_argument("make_split: need at least two samples");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("make_split: train fraction must be in (0,1)");
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    // Fisher-Yates with our own draws; std::shuffle's algorithm is unspecified.
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    const int n_train = std::clamp(static_cast<int>(std::lround(train_fraction * n)), 1, n - 1);
    Split s;
    s.train.assign(idx.begin(), idx.begin() + n_train);
    s.test.assign(idx.begin() + n_train, idx.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

nlohmann::json shape_model_to_json(const ShapeModel& ssm) {
    std::vector<double> mean(ssm.mean.data(), ssm.mean.data() + ssm.mean.size());
    std::vector<std::vector<double>> comps;
    for (int c = 0; c < ssm.components.cols(); ++c) {
        comps.emplace_back(ssm.components.col(c).data(), ssm.components.col(c).data() + ssm.components.rows());
    }
    return {{"k", ssm.k()},
            {"points", ssm.points()},
            {"training_shapes", ssm.training_shapes},
            {"total_variance", ssm.total_variance},
            {"eigenvalues", ssm.eigenvalues},
            {"coverage", ssm.coverage},
            {"mean", mean},
            {"components", comps}};
}

ShapeModel shape_model_from_json(const nlohmann::json& j) {
    ShapeModel ssm;
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto comps = j.at("components").get<std::vector<std::vector<double>>>();
    ssm.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    ssm.components.resize(static_cast<Eigen::Index>(mean.size()), static_cast<Eigen::Index>(comps.size()));
    for (std::size_t c = 0; c < comps.size(); ++c) {
        if (comps[c].size() != mean.size()) throw std::runtime_error("shape model: component length mismatch");
        ssm.components.col(static_cast<Eigen::Index>(c)) = Eigen::Map<const Eigen::VectorXd>(comps[c].data(), static_cast<Eigen::Index>(mean.size()));
    }
    ssm.eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
    ssm.coverage = j.at("coverage").get<std::vector<double>>();
    ssm.total_variance = j.at("total_variance").get<double>();
    ssm.training_shapes = j.at("training_shapes").get<int>();
    if (ssm.eigenvalues.size() != comps.size()) throw std::runtime_error("shape model: eigenvalue count mismatch");
    return ssm;
}

} // namespace advlab
