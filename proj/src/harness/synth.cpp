#include <atomic>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <thread>
#include <tuple>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "quadbank/harness.hpp"

namespace quadbank::harness {
namespace {

constexpr std::uint64_t kFeatureSeed = 0x5eedf00d;
constexpr double kDeg = std::numbers::pi / 180.0;
constexpr std::uint64_t kEmbeddingSeed = 0xe4bedd;
// Keeps the summed variance of the raw features near 1.
constexpr double kRawScale = 0.125;

class MeshBuilder {
public:
    int vertex(const Vec3& p, Part part) {
        const auto key = std::make_tuple(static_cast<int>(part), std::llround(p.x() * 1e7), std::llround(p.y() * 1e7),
                                         std::llround(p.z() * 1e7));
        auto it = index_.find(key);
        if (it != index_.end()) return it->second;
        const int id = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(p);
        parts.push_back(part);
        index_.emplace(key, id);
        return id;
    }

    void box(const Vec3& centre, const Vec3& half, const std::array<int, 3>& div, Part part) {
        for (int a = 0; a < 3; ++a) {
            const int b = (a + 1) % 3, c = (a + 2) % 3;
            for (int s : {1, -1}) {
                std::vector<int> grid;
                for (int i = 0; i <= div[b]; ++i) {
                    for (int j = 0; j <= div[c]; ++j) {
                        Vec3 p = centre;
                        p[a] += s * half[a];
                        p[b] += -half[b] + 2 * half[b] * i / div[b];
                        p[c] += -half[c] + 2 * half[c] * j / div[c];
                        grid.push_back(vertex(p, part));
                    }
                }
                auto at = [&](int i, int j) { return grid[i * (div[c] + 1) + j]; };
                for (int i = 0; i < div[b]; ++i) {
                    for (int j = 0; j < div[c]; ++j) {
                        const int v00 = at(i, j), v10 = at(i + 1, j), v11 = at(i + 1, j + 1), v01 = at(i, j + 1);
                        if (s > 0) {
                            mesh.faces.push_back({v00, v10, v11});
                            mesh.faces.push_back({v00, v11, v01});
                        } else {
                            mesh.faces.push_back({v00, v11, v10});
                            mesh.faces.push_back({v00, v01, v11});
                        }
                    }
                }
            }
        }
    }

    // Open-topped cylinder from y_top down to y_bottom with a bottom cap.
    void leg(double cx, double cz, double radius, double y_top, double y_bottom, std::size_t num_rings,
             std::size_t sides, Part part) {
        std::vector<std::vector<int>> rings;
        for (std::size_t k = 0; k < num_rings; ++k) {
            const double y = y_top + (y_bottom - y_top) * static_cast<double>(k) / static_cast<double>(num_rings - 1);
            std::vector<int> ring;
            for (std::size_t j = 0; j < sides; ++j) {
                const double t = 2 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(sides);
                ring.push_back(vertex(Vec3(cx + radius * std::cos(t), y, cz + radius * std::sin(t)), part));
            }
            rings.push_back(std::move(ring));
        }
        for (std::size_t k = 0; k + 1 < num_rings; ++k) {
            for (std::size_t j = 0; j < sides; ++j) {
                const std::size_t n = (j + 1) % sides;
                mesh.faces.push_back({rings[k][j], rings[k][n], rings[k + 1][n]});
                mesh.faces.push_back({rings[k][j], rings[k + 1][n], rings[k + 1][j]});
            }
        }
        const int cap = vertex(Vec3(cx, y_bottom, cz), part);
        const auto& last = rings.back();
        for (std::size_t j = 0; j < sides; ++j) mesh.faces.push_back({cap, last[(j + 1) % sides], last[j]});
    }

    Mesh mesh;
    std::vector<Part> parts;

private:
    std::map<std::tuple<int, long long, long long, long long>, int> index_;
};

struct FeatureMap {
    Eigen::MatrixXd a;  // raw x 3
    Eigen::VectorXd b;
    Eigen::MatrixXd c;  // raw x parts
};

const FeatureMap& feature_map() {
    static const FeatureMap map = [] {
        FeatureMap m;
        std::mt19937_64 rng(kFeatureSeed);
        std::normal_distribution<double> n(0.0, 1.0);
        std::uniform_real_distribution<double> u(0.0, 2 * std::numbers::pi);
        m.a.resize(kRawFeatureDim, 3);
        m.b.resize(kRawFeatureDim);
        m.c.resize(kRawFeatureDim, kNumParts);
        for (Eigen::Index i = 0; i < m.a.size(); ++i) m.a.data()[i] = 1.5 * n(rng);
        for (Eigen::Index i = 0; i < m.b.size(); ++i) m.b[i] = u(rng);
        for (Eigen::Index i = 0; i < m.c.size(); ++i) m.c.data()[i] = 0.5 * n(rng);
        return m;
    }();
    return map;
}

Vec3 part_colour(Part p) {
    switch (p) {
        case Part::Body: return Vec3(0.65, 0.45, 0.30);
        case Part::Head: return Vec3(0.80, 0.60, 0.45);
        case Part::Tail: return Vec3(0.45, 0.30, 0.20);
        case Part::FrontLeg: return Vec3(0.50, 0.40, 0.35);
        case Part::BackLeg: return Vec3(0.40, 0.32, 0.28);
    }
    return Vec3::Zero();
}

std::pair<Vec3, Vec3> bounds(const Mesh& m) {
    Vec3 lo = m.vertices.front(), hi = lo;
    for (const auto& v : m.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    return {lo, hi};
}

std::size_t nearest_vertex(const Mesh& m, const Vec3& p) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m.num_vertices(); ++i) {
        const double d = (m.vertices[i] - p).squaredNorm();
        if (d < bd) {
            bd = d;
            best = i;
        }
    }
    return best;
}

}  // namespace

void SynthSpec::validate() const {
    if (!(body_length > 0 && body_width > 0 && body_height > 0 && leg_length > 0 && leg_radius > 0)) {
        throw HarnessError("synth spec: dimensions must be positive");
    }
    if (!(2 * leg_radius < body_width / 2)) throw HarnessError("synth spec: legs are too thick for the body");
    if (!(frontal_bias >= 0 && frontal_bias <= 1)) throw HarnessError("synth spec: frontal bias must lie in [0, 1]");
    if (!(image_noise >= 0 && feature_noise >= 0)) throw HarnessError("synth spec: noise levels must be non-negative");
    if (views == 0 && azimuths.empty()) throw HarnessError("synth spec: need at least one view");
}

nlohmann::json to_json(const SynthSpec& s) {
    return {{"body_length", s.body_length},   {"body_width", s.body_width},
            {"body_height", s.body_height},   {"leg_length", s.leg_length},
            {"leg_radius", s.leg_radius},     {"neck", s.neck},
            {"tail", s.tail},                 {"coarse", s.coarse},
            {"leg_bend_deg", s.leg_bend_deg},
            {"elevation_deg", s.elevation_deg}, {"views", s.views},
            {"frontal_bias", s.frontal_bias}, {"even_azimuths", s.even_azimuths},
            {"azimuths", s.azimuths},
            {"image_noise", s.image_noise},   {"feature_noise", s.feature_noise},
            {"seed", s.seed}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec s;
    if (!j.is_object()) throw HarnessError("synth spec must be a JSON object");
    try {
        s.body_length = j.value("body_length", s.body_length);
        s.body_width = j.value("body_width", s.body_width);
        s.body_height = j.value("body_height", s.body_height);
        s.leg_length = j.value("leg_length", s.leg_length);
        s.leg_radius = j.value("leg_radius", s.leg_radius);
        s.neck = j.value("neck", s.neck);
        s.tail = j.value("tail", s.tail);
        s.coarse = j.value("coarse", s.coarse);
        s.leg_bend_deg = j.value("leg_bend_deg", s.leg_bend_deg);
        s.elevation_deg = j.value("elevation_deg", s.elevation_deg);
        s.views = j.value("views", s.views);
        s.frontal_bias = j.value("frontal_bias", s.frontal_bias);
        s.even_azimuths = j.value("even_azimuths", s.even_azimuths);
        s.azimuths = j.value("azimuths", s.azimuths);
        s.image_noise = j.value("image_noise", s.image_noise);
        s.feature_noise = j.value("feature_noise", s.feature_noise);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw HarnessError(std::string("synth spec: ") + e.what());
    }
    s.validate();
    return s;
}

const char* keypoint_name(std::size_t k) {
    static const char* names[kNumKeypoints] = {"foot_fl", "foot_fr", "foot_bl",     "foot_br",    "knee_fl", "knee_fr",
                                               "knee_bl", "knee_br", "spine_front", "spine_back", "centroid"};
    if (k >= kNumKeypoints) throw HarnessError("keypoint index out of range");
    return names[k];
}

VertexField canonical_features(const Mesh& mesh, const std::vector<Part>& part) {
    if (part.size() != mesh.num_vertices()) throw HarnessError("part labels do not match the mesh");
    const auto [lo, hi] = bounds(mesh);
    const Vec3 centre = (lo + hi) / 2, half = ((hi - lo) / 2).cwiseMax(Vec3::Constant(1e-12));
    const FeatureMap& fm = feature_map();
    VertexField out(mesh.num_vertices(), kRawFeatureDim);
    for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
        const Vec3 q = (mesh.vertices[i] - centre).cwiseQuotient(half);
        const Eigen::Vector3d in(std::abs(q.x()), q.y(), q.z());
        const Eigen::VectorXd raw = (fm.a * in + fm.b).array().sin().matrix() + fm.c.col(static_cast<int>(part[i]));
        for (std::size_t k = 0; k < kRawFeatureDim; ++k) out.row(i)[k] = kRawScale * raw[static_cast<Eigen::Index>(k)];
    }
    return out;
}

SynthScene synth_quadruped(const SynthSpec& spec) {
    spec.validate();
    const double len = spec.body_length, wid = spec.body_width, hgt = spec.body_height;
    const double legl = spec.leg_length, r = spec.leg_radius;
    MeshBuilder mb;
    const bool c = spec.coarse;
    mb.box(Vec3(0, legl + hgt / 2, 0), Vec3(wid / 2, hgt / 2, len / 2), c ? std::array{2, 1, 4} : std::array{4, 2, 8},
           Part::Body);
    if (spec.neck) {
        const Vec3 half(0.28 * wid, 0.3 * hgt, 0.25);
        mb.box(Vec3(0, legl + hgt - 0.3 * hgt + 0.2, len / 2 + half.z() - 0.1), half, c ? std::array{1, 1, 1} : std::array{2, 2, 2},
               Part::Head);
    }
    if (spec.tail) {
        const Vec3 half(0.08, 0.08, 0.25);
        mb.box(Vec3(0, legl + 0.7 * hgt, -len / 2 - half.z() + 0.05), half, c ? std::array{1, 1, 1} : std::array{1, 1, 3},
               Part::Tail);
    }
    const double lx = wid / 2 - 1.3 * r, lz = len / 2 - 1.5 * r;
    for (double z : {lz, -lz}) {
        for (double x : {lx, -lx}) {
            mb.leg(x, z, r, legl + 0.1, 0.0, c ? 4 : 6, c ? 6 : 8, z > 0 ? Part::FrontLeg : Part::BackLeg);
        }
    }

    SynthScene scene;
    scene.mesh = std::move(mb.mesh);
    scene.part = std::move(mb.parts);
    const auto [lo, hi] = bounds(scene.mesh);
    const Vec3 centre = (lo + hi) / 2;
    for (auto& v : scene.mesh.vertices) v -= centre;
    scene.mesh.validate();

    scene.skeleton = skeleton::instantiate_quadruped(scene.mesh);
    scene.weights = skeleton::skinning_weights(scene.mesh, scene.skeleton);
    scene.pose = skeleton::Pose::rest(scene.skeleton.size());
    for (int q = 0; q < 4; ++q) {
        const double sign = q < 2 ? 1.0 : -1.0;
        scene.pose.joint_angles[scene.skeleton.foot_bone(static_cast<skeleton::Quadrant>(q))] =
            Vec3(sign * spec.leg_bend_deg * kDeg, 0, 0);
    }

    scene.raw_features = canonical_features(scene.mesh, scene.part);
    scene.albedo = VertexField(scene.mesh.num_vertices(), 3);
    const auto [lo2, hi2] = bounds(scene.mesh);
    for (std::size_t i = 0; i < scene.mesh.num_vertices(); ++i) {
        const double t = (scene.mesh.vertices[i].y() - lo2.y()) / (hi2.y() - lo2.y());
        const Vec3 c = part_colour(scene.part[i]) * (0.85 + 0.3 * t);
        scene.albedo.set_vec3(i, c.cwiseMin(Vec3::Ones()));
    }

    const auto& sk = scene.skeleton;
    std::array<Vec3, kNumKeypoints> joints;
    for (int q = 0; q < 4; ++q) {
        const auto& foot = sk.bones[sk.foot_bone(static_cast<skeleton::Quadrant>(q))];
        joints[q] = foot.tail;
        joints[4 + q] = foot.head;
    }
    joints[8] = sk.bones[3].tail;
    joints[9] = sk.bones[7].tail;
    joints[10] = sk.bones[0].head;
    for (std::size_t k = 0; k < kNumKeypoints; ++k) scene.keypoint_vertex[k] = nearest_vertex(scene.mesh, joints[k]);
    return scene;
}

Eigen::Matrix3d view_rotation(double azimuth_deg, double elevation_deg) {
    return (Eigen::AngleAxisd(elevation_deg * kDeg, Vec3::UnitX()) * Eigen::AngleAxisd(azimuth_deg * kDeg, Vec3::UnitY()))
        .toRotationMatrix();
}

std::vector<double> sample_azimuths(std::size_t n, double bias, std::uint64_t seed) {
    if (!(bias >= 0 && bias <= 1)) throw HarnessError("frontal bias must lie in [0, 1]");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution frontal(bias);
    std::uniform_real_distribution<double> front(-45.0, 45.0), any(0.0, 360.0);
    std::vector<double> out(n);
    for (double& a : out) {
        a = frontal(rng) ? front(rng) : any(rng);
        if (a < 0) a += 360.0;
    }
    return out;
}

Mesh posed_mesh(const SynthScene& scene, const skeleton::Pose& pose) {
    return skeleton::lbs_pose(scene.mesh, scene.skeleton, scene.weights, pose);
}

ViewSet generate_views(const SynthScene& scene, const SynthSpec& spec, const render::Camera& cam, unsigned jobs) {
    spec.validate();
    cam.validate();
    const std::size_t n = spec.azimuths.empty() ? spec.views : spec.azimuths.size(), np = cam.pixels();
    std::vector<double> azimuths(n);
    if (!spec.azimuths.empty()) {
        azimuths = spec.azimuths;
    } else if (spec.even_azimuths) {
        for (std::size_t i = 0; i < n; ++i) azimuths[i] = 360.0 * static_cast<double>(i) / static_cast<double>(n);
    } else {
        azimuths = sample_azimuths(n, spec.frontal_bias, spec.seed);
    }
    render::Light light;
    light.ambient = 0.4;
    light.diffuse = 0.6;
    light.direction = Vec3(0.3, 0.5, 1.0).normalized();

    ViewSet out;
    out.width = cam.width;
    out.height = cam.height;
    out.views.resize(n);
    std::vector<std::vector<double>> raw(n);

    auto render_view = [&](std::size_t i) {
        View& v = out.views[i];
        v.azimuth_deg = azimuths[i];
        v.elevation_deg = spec.elevation_deg;
        v.pose = scene.pose;
        v.pose.rotation = Eigen::Quaterniond(view_rotation(v.azimuth_deg, v.elevation_deg));
        const Mesh posed = posed_mesh(scene, v.pose);
        const VertexField normals = geometry::compute_normals(posed).normals;
        const auto rb = render::rasterize(posed, {scene.raw_features, scene.albedo, normals}, cam, 1);
        v.mask = rb.mask;
        raw[i] = rb.attributes[0];
        v.image = render::shade_lambertian(rb.attributes[2], rb.attributes[1], rb.mask, light);
        std::mt19937_64 rng(spec.seed * 1000003ULL + i);
        std::normal_distribution<double> noise(0.0, 1.0);
        for (std::size_t p = 0; p < np; ++p) {
            for (int c = 0; c < 3; ++c) {
                double& px = v.image[3 * p + c];
                if (rb.mask[p] > 0 && spec.image_noise > 0) px = std::clamp(px + spec.image_noise * noise(rng), 0.0, 1.0);
                px = std::round(px * 255.0) / 255.0;
            }
        }
        const Reconstruction rec = make_reconstruction(posed, cam);
        for (std::size_t k = 0; k < kNumKeypoints; ++k) {
            const std::size_t vi = scene.keypoint_vertex[k];
            v.keypoints.xy.push_back(rec.xy[vi]);
            const bool inside = rec.xy[vi][0] >= 0 && rec.xy[vi][1] >= 0 && rec.xy[vi][0] < static_cast<double>(cam.width) &&
                                rec.xy[vi][1] < static_cast<double>(cam.height);
            v.keypoints.visible.push_back(inside && rec.visible[vi]);
        }
    };

    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, n));
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) render_view(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (unsigned j = 0; j < jobs; ++j)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) render_view(i);
            });
    }

    std::size_t covered = 0;
    for (const auto& v : out.views)
        for (double m : v.mask) covered += m > 0;
    if (covered == 0) throw HarnessError("generate_views: the scene is not visible in any view");
    Eigen::MatrixXd samples(static_cast<Eigen::Index>(covered), static_cast<Eigen::Index>(kRawFeatureDim));
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < np; ++p)
            if (out.views[i].mask[p] > 0) {
                for (std::size_t k = 0; k < kRawFeatureDim; ++k) samples(row, static_cast<Eigen::Index>(k)) = raw[i][p * kRawFeatureDim + k];
                ++row;
            }
    out.pca = pca_reduce(samples, kFeatureDim);
    row = 0;
    for (std::size_t i = 0; i < n; ++i) {
        View& v = out.views[i];
        v.features.assign(np * kFeatureDim, 0.0);
        std::mt19937_64 rng(spec.seed * 7919ULL + i);
        std::normal_distribution<double> noise(0.0, spec.feature_noise);
        for (std::size_t p = 0; p < np; ++p) {
            if (v.mask[p] <= 0) continue;
            for (std::size_t k = 0; k < kFeatureDim; ++k) {
                double f = out.pca.reduced(row, static_cast<Eigen::Index>(k));
                if (spec.feature_noise > 0) f += noise(rng);
                v.features[p * kFeatureDim + k] = static_cast<double>(static_cast<float>(f));
            }
            ++row;
        }
    }
    return out;
}

VertexField reduced_features(const VertexField& raw, const PcaResult& pca) {
    if (raw.dim != static_cast<std::size_t>(pca.mean.size())) throw HarnessError("reduced_features: dimension mismatch");
    const std::size_t n = raw.num_vertices();
    const Eigen::MatrixXd samples = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        raw.data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(raw.dim));
    const Eigen::MatrixXd r = pca.apply(samples);
    VertexField out(n, static_cast<std::size_t>(r.cols()));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < out.dim; ++k) out.row(i)[k] = r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    return out;
}

bank::ImageEmbedding image_embedding(const View& view, std::size_t key_dim) {
    const std::size_t np = view.mask.size();
    if (np == 0 || view.features.size() != np * kFeatureDim) throw HarnessError("image_embedding: malformed view");
    Eigen::VectorXd stats = Eigen::VectorXd::Zero(kFeatureDim + 1);
    double covered = 0;
    for (std::size_t p = 0; p < np; ++p) {
        if (view.mask[p] <= 0.5) continue;
        covered += 1;
        for (std::size_t k = 0; k < kFeatureDim; ++k) stats[static_cast<Eigen::Index>(k)] += view.features[p * kFeatureDim + k];
    }
    if (covered > 0) stats.head(kFeatureDim) /= covered;
    stats[kFeatureDim] = covered / static_cast<double>(np);
    std::mt19937_64 rng(kEmbeddingSeed);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd proj(static_cast<Eigen::Index>(key_dim), stats.size());
    for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = n(rng);
    Eigen::VectorXd e = proj * stats;
    if (e.norm() > 0) e.normalize();
    return {std::vector<double>(e.data(), e.data() + e.size())};
}

fit::Target make_target(const View& view, std::size_t key_dim) {
    return {view.mask, view.image, view.features, image_embedding(view, key_dim)};
}

}  // namespace quadbank::harness
