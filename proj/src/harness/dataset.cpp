#include <fstream>

#include <nlohmann/json.hpp>

#include "quadbank/harness.hpp"
#include "quadbank/io.hpp"

namespace quadbank::harness {
namespace {

namespace fs = std::filesystem;

std::string indexed(const char* stem, std::size_t i, const char* ext) {
    return std::string(stem) + "_" + std::to_string(i) + ext;
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        rows.push_back(row);
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (static_cast<Eigen::Index>(rows[r].size()) != m.cols()) throw HarnessError("ragged matrix in JSON");
        for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return m;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void write_json(const nlohmann::json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw HarnessError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw HarnessError("cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw HarnessError(path.string() + ": " + e.what());
    }
}

}  // namespace

void save_dataset(const ViewSet& views, const render::Camera& cam, const fs::path& dir, const SynthScene* scene) {
    cam.validate();
    if (views.width != cam.width || views.height != cam.height) throw HarnessError("dataset: camera and views differ in size");
    fs::create_directories(dir);
    const std::size_t w = views.width, h = views.height;
    nlohmann::json jviews = nlohmann::json::array();
    for (std::size_t i = 0; i < views.views.size(); ++i) {
        const View& v = views.views[i];
        if (v.mask.size() != w * h || v.image.size() != 3 * w * h || v.features.size() != kFeatureDim * w * h) {
            throw HarnessError("dataset: view " + std::to_string(i) + " has buffers of the wrong size");
        }
        render::save_mask_png(v.mask, w, h, dir / indexed("mask", i, ".png"));
        render::save_rgb_png(v.image, w, h, dir / indexed("image", i, ".png"));
        io::save_fts(ad::Tensor({h, w, kFeatureDim}, v.features), dir / indexed("features", i, ".fts"));
        nlohmann::json kps = nlohmann::json::array();
        for (std::size_t k = 0; k < v.keypoints.xy.size(); ++k) {
            kps.push_back({{"name", k < kNumKeypoints ? keypoint_name(k) : std::to_string(k)},
                           {"xy", v.keypoints.xy[k]},
                           {"visible", static_cast<bool>(v.keypoints.visible[k])}});
        }
        jviews.push_back({{"azimuth_deg", v.azimuth_deg},
                          {"elevation_deg", v.elevation_deg},
                          {"pose", skeleton::to_json(v.pose)},
                          {"keypoints", kps}});
    }
    const nlohmann::json jcam = {{"fov_deg", cam.fov_deg},
                                 {"position", {cam.position.x(), cam.position.y(), cam.position.z()}},
                                 {"width", cam.width},
                                 {"height", cam.height}};
    write_json({{"camera", jcam}, {"views", jviews}}, dir / "views.json");
    if (views.pca.components.size() > 0) {
        write_json({{"mean", std::vector<double>(views.pca.mean.data(), views.pca.mean.data() + views.pca.mean.size())},
                    {"components", matrix_json(views.pca.components)},
                    {"explained", std::vector<double>(views.pca.explained.data(),
                                                      views.pca.explained.data() + views.pca.explained.size())}},
                   dir / "pca.json");
    }
    if (scene) {
        geometry::save_obj(scene->mesh, dir / "scene.obj");
        write_json(skeleton::to_json(scene->skeleton), dir / "skeleton.json");
    }
}

Dataset load_dataset(const fs::path& dir) {
    const nlohmann::json j = read_json(dir / "views.json");
    Dataset d;
    try {
        const auto& jc = j.at("camera");
        d.camera.fov_deg = jc.at("fov_deg").get<double>();
        const auto pos = jc.at("position").get<std::vector<double>>();
        if (pos.size() != 3) throw HarnessError("dataset: camera position needs 3 entries");
        d.camera.position = Vec3(pos[0], pos[1], pos[2]);
        d.camera.width = jc.at("width").get<std::size_t>();
        d.camera.height = jc.at("height").get<std::size_t>();
        d.camera.validate();
        const std::size_t w = d.camera.width, h = d.camera.height;
        d.views.width = w;
        d.views.height = h;
        const auto& jviews = j.at("views");
        for (std::size_t i = 0; i < jviews.size(); ++i) {
            const auto& jv = jviews[i];
            View v;
            v.azimuth_deg = jv.value("azimuth_deg", 0.0);
            v.elevation_deg = jv.value("elevation_deg", 0.0);
            if (jv.contains("pose")) v.pose = skeleton::pose_from_json(jv["pose"]);
            for (const auto& k : jv.value("keypoints", nlohmann::json::array())) {
                v.keypoints.xy.push_back(k.at("xy").get<std::array<double, 2>>());
                v.keypoints.visible.push_back(k.value("visible", true));
            }
            const io::Image mask = io::load_png(dir / indexed("mask", i, ".png"));
            const io::Image image = io::load_png(dir / indexed("image", i, ".png"));
            if (mask.width != w || mask.height != h || mask.channels != 1 || image.width != w || image.height != h ||
                image.channels != 3) {
                throw HarnessError("dataset: view " + std::to_string(i) + " images do not match the camera");
            }
            v.mask = mask.pixels;
            v.image = image.pixels;
            const fs::path fpath = dir / indexed("features", i, ".fts");
            if (fs::exists(fpath)) {
                const ad::Tensor f = io::load_fts(fpath);
                if (f.shape != std::vector<std::size_t>{h, w, kFeatureDim}) {
                    throw HarnessError("dataset: view " + std::to_string(i) + " features have the wrong shape");
                }
                v.features = f.data;
            } else {
                v.features.assign(w * h * kFeatureDim, 0.0);
            }
            d.views.views.push_back(std::move(v));
        }
    } catch (const nlohmann::json::exception& e) {
        throw HarnessError(std::string("dataset: ") + e.what());
    }
    if (fs::exists(dir / "pca.json")) {
        const nlohmann::json jp = read_json(dir / "pca.json");
        try {
            d.views.pca.mean = vector_from_json(jp.at("mean"));
            d.views.pca.components = matrix_from_json(jp.at("components"));
            d.views.pca.explained = vector_from_json(jp.at("explained"));
        } catch (const nlohmann::json::exception& e) {
            throw HarnessError(std::string("dataset pca: ") + e.what());
        }
    }
    return d;
}

}  // namespace quadbank::harness
